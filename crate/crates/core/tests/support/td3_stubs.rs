//! Linear actor and critic stubs whose gradients are known in closed form.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarm_sar::td3::{Actor, Critic, Td3, Td3Config};
use swarm_sar_nn::{Mode, Module, Param, Tensor};

/// `a = x W`, unclipped; observations are `[B, D]` tensors.
#[derive(Clone, Debug)]
pub struct LinActor {
    pub w: Param,
    x: Option<Tensor>,
}

impl LinActor {
    pub fn new(d: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::from_fn(&[d, k], |_| rng.random_range(-0.5..0.5));
        Self { w: Param::trainable("w", w), x: None }
    }
}

impl Module for LinActor {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.w)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w)
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    Tensor::from_fn(&[m, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum()
    })
}

impl Actor for LinActor {
    type Obs = Tensor;
    fn forward(&mut self, obs: &Tensor, _: Mode) -> swarm_sar::Result<Tensor> {
        self.x = Some(obs.clone());
        Ok(matmul(obs, &self.w.value))
    }
    fn backward(&mut self, grad: &Tensor) -> swarm_sar::Result<()> {
        let x = self.x.as_ref().unwrap();
        let (b, d, k) = (x.dim(0), x.dim(1), grad.dim(1));
        let g = self.w.value.grad_mut().unwrap();
        for i in 0..d {
            for j in 0..k {
                g[i * k + j] += (0..b).map(|n| x.data()[n * d + i] * grad.data()[n * k + j]).sum::<f64>();
            }
        }
        Ok(())
    }
}

/// `Q = x u + a v + c`.
#[derive(Clone, Debug)]
pub struct LinCritic {
    pub u: Param,
    pub v: Param,
    pub c: Param,
    cache: Option<(Tensor, Tensor)>,
}

impl LinCritic {
    pub fn new(d: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            u: Param::trainable("u", Tensor::from_fn(&[d, 1], |_| rng.random_range(-1.0..1.0))),
            v: Param::trainable("v", Tensor::from_fn(&[k, 1], |_| rng.random_range(-1.0..1.0))),
            c: Param::trainable("c", Tensor::new(&[1], vec![0.0]).unwrap()),
            cache: None,
        }
    }

    pub fn constant(q: f64) -> Self {
        Self {
            u: Param::trainable("u", Tensor::zeros(&[2, 1])),
            v: Param::trainable("v", Tensor::zeros(&[1, 1])),
            c: Param::trainable("c", Tensor::new(&[1], vec![q]).unwrap()),
            cache: None,
        }
    }
}

impl Module for LinCritic {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.u);
        f(&self.v);
        f(&self.c);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.u);
        f(&mut self.v);
        f(&mut self.c);
    }
}

impl Critic<Tensor> for LinCritic {
    fn forward(&mut self, obs: &Tensor, action: &Tensor, _: Mode) -> swarm_sar::Result<Tensor> {
        let c = self.c.value.data()[0];
        let q = matmul(obs, &self.u.value);
        let qa = matmul(action, &self.v.value);
        self.cache = Some((obs.clone(), action.clone()));
        Ok(Tensor::from_fn(q.shape(), |i| q.data()[i] + qa.data()[i] + c))
    }
    fn backward(&mut self, grad: &Tensor) -> swarm_sar::Result<Tensor> {
        let (x, a) = self.cache.clone().unwrap();
        let (b, d, k) = (x.dim(0), x.dim(1), a.dim(1));
        let g = grad.data();
        for i in 0..d {
            self.u.value.grad_mut().unwrap()[i] += (0..b).map(|n| x.data()[n * d + i] * g[n]).sum::<f64>();
        }
        for j in 0..k {
            self.v.value.grad_mut().unwrap()[j] += (0..b).map(|n| a.data()[n * k + j] * g[n]).sum::<f64>();
        }
        self.c.value.grad_mut().unwrap()[0] += g.iter().sum::<f64>();
        let v = self.v.value.data().to_vec();
        Ok(Tensor::from_fn(&[b, k], |i| g[i / k] * v[i % k]))
    }
}

pub fn obs(rows: &[[f64; 2]]) -> Tensor {
    Tensor::new(&[rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
}

pub fn agent(c1: LinCritic, c2: LinCritic, cfg: Td3Config) -> Td3<LinActor, LinCritic> {
    Td3::new(LinActor::new(2, 1, 7), c1, c2, cfg, 3).unwrap()
}

pub fn no_noise() -> Td3Config {
    Td3Config { target_noise: 0.0, ..Default::default() }
}
