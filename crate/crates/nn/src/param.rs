use crate::tensor::Tensor;

/// A named parameter tensor. Trainable parameters always carry a gradient
/// slot; running statistics are stored as non-trainable parameters so they
/// travel with checkpoints and target-network updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Param {
    pub fn trainable(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value: value.with_grad(),
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: false,
        }
    }

    pub fn grad(&self) -> &[f64] {
        self.value.grad().unwrap_or(&[])
    }
}

/// Anything that owns parameters.
///
/// Both visitors must walk parameters in the same, stable order.
pub trait Module {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.value.zero_grad());
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.trainable {
                n += p.value.len();
            }
        });
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |p| names.push(p.name.clone()));
        names
    }
}

/// Flattened copy of every parameter value, in visit order.
pub fn flatten_values<M: Module + ?Sized>(m: &M) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    m.visit_params(&mut |p| out.push(p.value.data().to_vec()));
    out
}

/// Polyak averaging: `target <- tau * source + (1 - tau) * target`.
///
/// Non-trainable buffers are averaged the same way.
pub fn soft_update<M: Module + ?Sized>(target: &mut M, source: &M, tau: f64) {
    let src = flatten_values(source);
    let mut i = 0;
    target.visit_params_mut(&mut |p| {
        let s = &src[i];
        assert_eq!(s.len(), p.value.len(), "soft_update: parameter layout differs");
        if tau == 1.0 {
            p.value.data_mut().copy_from_slice(s);
        } else {
            for (t, &v) in p.value.data_mut().iter_mut().zip(s) {
                *t = tau * v + (1.0 - tau) * *t;
            }
        }
        i += 1;
    });
    assert_eq!(i, src.len(), "soft_update: parameter count differs");
}

/// Copies all parameter values from `source` into `target`.
pub fn copy_params<M: Module + ?Sized>(target: &mut M, source: &M) {
    soft_update(target, source, 1.0);
}
