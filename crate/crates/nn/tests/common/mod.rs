//! Central finite-difference oracle. Only ever calls forward passes, so it
//! stays independent of the backward code it checks.
#![allow(dead_code)]

use rand::seq::index::sample;
use rand::Rng;
use swarm_sar_nn::Module;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Gradients below this magnitude are compared on an absolute scale.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates whose probe interval straddles a kink (ReLU hinge or a
    /// max-pool switch); see [`check_params_piecewise`].
    pub kinks: usize,
}

impl FdReport {
    pub fn merge(self, other: FdReport) -> FdReport {
        FdReport {
            max_rel: self.max_rel.max(other.max_rel),
            checked: self.checked + other.checked,
            kinks: self.kinks + other.kinks,
        }
    }

    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel <= REL_TOL && self.kinks * 50 <= self.checked
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR)
}

/// Analytic gradients of every trainable parameter, in visit order.
pub fn param_grads<M: Module + ?Sized>(m: &M) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    m.visit_params(&mut |p| {
        if p.trainable {
            out.push(p.grad().to_vec());
        }
    });
    out
}

fn nudge<M: Module + ?Sized>(m: &mut M, tensor: usize, idx: usize, delta: f64) {
    let mut t = 0;
    m.visit_params_mut(&mut |p| {
        if !p.trainable {
            return;
        }
        if t == tensor {
            p.value.data_mut()[idx] += delta;
        }
        t += 1;
    });
}

/// Compares `analytic` (from [`param_grads`]) with central differences of
/// `loss` at up to `per_tensor` random entries of each parameter tensor.
pub fn check_params<M: Module + ?Sized, R: Rng>(
    m: &mut M,
    analytic: &[Vec<f64>],
    per_tensor: usize,
    rng: &mut R,
    loss: &mut dyn FnMut(&mut M) -> f64,
) -> FdReport {
    let mut rep = FdReport::default();
    for (t, grads) in analytic.iter().enumerate() {
        let picks: Vec<usize> = if grads.len() <= per_tensor {
            (0..grads.len()).collect()
        } else {
            sample(rng, grads.len(), per_tensor).into_vec()
        };
        for i in picks {
            nudge(m, t, i, STEP);
            let up = loss(m);
            nudge(m, t, i, -2.0 * STEP);
            let down = loss(m);
            nudge(m, t, i, STEP);
            let numeric = (up - down) / (2.0 * STEP);
            rep.max_rel = rep.max_rel.max(rel_err(grads[i], numeric));
            rep.checked += 1;
        }
    }
    rep
}

/// Like [`check_params`], for networks built from piecewise-linear pieces.
/// Each coordinate is probed at `STEP` and `STEP / 2`. Over a smooth
/// stretch the two central estimates agree to O(h^2); when they do not,
/// the probe interval contains a kink and finite differences say nothing
/// about the derivative there, so the coordinate is counted as a kink
/// instead of compared. At most 2% of coordinates may be kinks.
pub fn check_params_piecewise<M: Module + ?Sized, R: Rng>(
    m: &mut M,
    analytic: &[Vec<f64>],
    per_tensor: usize,
    rng: &mut R,
    loss: &mut dyn FnMut(&mut M) -> f64,
) -> FdReport {
    let mut rep = FdReport::default();
    let mut central = |m: &mut M, t: usize, i: usize, h: f64| {
        nudge(m, t, i, h);
        let up = loss(m);
        nudge(m, t, i, -2.0 * h);
        let down = loss(m);
        nudge(m, t, i, h);
        (up - down) / (2.0 * h)
    };
    for (t, grads) in analytic.iter().enumerate() {
        let picks: Vec<usize> = if grads.len() <= per_tensor {
            (0..grads.len()).collect()
        } else {
            sample(rng, grads.len(), per_tensor).into_vec()
        };
        for i in picks {
            let wide = central(m, t, i, STEP);
            let narrow = central(m, t, i, STEP / 2.0);
            rep.checked += 1;
            if rel_err(wide, narrow) > REL_TOL {
                rep.kinks += 1;
                continue;
            }
            rep.max_rel = rep.max_rel.max(rel_err(grads[i], wide));
        }
    }
    rep
}

/// Central differences with respect to a plain input vector.
pub fn check_input<R: Rng>(
    x: &[f64],
    analytic: &[f64],
    samples: usize,
    rng: &mut R,
    loss: &mut dyn FnMut(&[f64]) -> f64,
) -> FdReport {
    let mut rep = FdReport::default();
    let mut probe = x.to_vec();
    let picks: Vec<usize> = if x.len() <= samples {
        (0..x.len()).collect()
    } else {
        sample(rng, x.len(), samples).into_vec()
    };
    for i in picks {
        probe[i] = x[i] + STEP;
        let up = loss(&probe);
        probe[i] = x[i] - STEP;
        let down = loss(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * STEP);
        rep.max_rel = rep.max_rel.max(rel_err(analytic[i], numeric));
        rep.checked += 1;
    }
    rep
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
