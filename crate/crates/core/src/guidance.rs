//! Three-branch guidance actor and critic: a convolutional depth branch, a
//! 1-D convolutional lidar branch and a dense branch for the goal vector,
//! fused through a dense head.

use rand::Rng;
use serde::{Deserialize, Serialize};
use swarm_sar_nn::{
    BatchNorm, Conv1d, Conv2d, Dense, Layer, MaxPool1d, MaxPool2d, Mode, Module, Param,
    Sequential, Tensor, LEAKY_SLOPE,
};

use crate::error::{Error, Result};
use crate::sensors::LIDAR_SECTORS;
use crate::simenv::{GuidanceObservation, OBS_VECTOR_LEN};

pub const BRANCH_WIDTH: usize = 128;
pub const FUSED_WIDTH: usize = 3 * BRANCH_WIDTH;
pub const ACTION_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub depth_size: (usize, usize),
    /// One width per conv block; each 2-D block holds two convolutions.
    pub conv2d_channels: [usize; 4],
    /// Blocks of two, two and one 1-D convolutions.
    pub conv1d_channels: [usize; 3],
    pub kernel: usize,
    pub depth_hidden: usize,
    /// Width of the five hidden fusion layers.
    pub fusion_hidden: usize,
    /// Scales used to bring raw observations to O(1).
    pub depth_range: f64,
    pub lidar_range: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            depth_size: (32, 32),
            conv2d_channels: [16, 32, 64, 64],
            conv1d_channels: [16, 32, 64],
            kernel: 3,
            depth_hidden: 128,
            fusion_hidden: 256,
            depth_range: 10.0,
            lidar_range: 8.0,
        }
    }
}

impl GuidanceConfig {
    /// Narrow variant sized for single-core desk training.
    pub fn desk() -> Self {
        Self {
            conv2d_channels: [4, 4, 8, 8],
            conv1d_channels: [8, 8, 8],
            depth_hidden: 64,
            fusion_hidden: 64,
            ..Self::default()
        }
    }

    pub fn encoded_len(&self) -> usize {
        self.depth_size.0 * self.depth_size.1 + LIDAR_SECTORS + OBS_VECTOR_LEN
    }
}

/// Normalised observation stored compactly for replay.
pub fn encode_observation(obs: &GuidanceObservation, cfg: &GuidanceConfig) -> Result<Vec<f32>> {
    let (h, w) = cfg.depth_size;
    if obs.depth.width != w || obs.depth.height != h || obs.lidar.ranges.len() != LIDAR_SECTORS {
        return Err(Error::Precondition(format!(
            "observation is {}x{} depth / {} lidar, network expects {}x{} / {}",
            obs.depth.height,
            obs.depth.width,
            obs.lidar.ranges.len(),
            h,
            w,
            LIDAR_SECTORS
        )));
    }
    let mut out = Vec::with_capacity(cfg.encoded_len());
    out.extend(obs.depth.depths.iter().map(|&d| (d / cfg.depth_range) as f32));
    out.extend(obs.lidar.ranges.iter().map(|&r| (r / cfg.lidar_range) as f32));
    let v = &obs.vector;
    let scaled = [
        v[0] / 5.0,
        v[1] / std::f64::consts::PI,
        v[2],
        v[3] / 2.0,
        v[4],
        v[5],
        v[6],
    ];
    out.extend(scaled.iter().map(|&x| x as f32));
    Ok(out)
}

/// A batch of encoded observations split into the three branch inputs.
#[derive(Clone, Debug)]
pub struct ObsBatch {
    pub depth: Tensor,
    pub lidar: Tensor,
    pub vector: Tensor,
}

impl ObsBatch {
    pub fn from_encoded<S: AsRef<[f32]>>(rows: &[S], cfg: &GuidanceConfig) -> Result<Self> {
        let (h, w) = cfg.depth_size;
        let pix = h * w;
        let b = rows.len();
        let mut depth = Vec::with_capacity(b * pix);
        let mut lidar = Vec::with_capacity(b * LIDAR_SECTORS);
        let mut vector = Vec::with_capacity(b * OBS_VECTOR_LEN);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cfg.encoded_len() {
                return Err(Error::Precondition(format!(
                    "encoded observation has {} values, expected {}",
                    r.len(),
                    cfg.encoded_len()
                )));
            }
            depth.extend(r[..pix].iter().map(|&v| v as f64));
            lidar.extend(r[pix..pix + LIDAR_SECTORS].iter().map(|&v| v as f64));
            vector.extend(r[pix + LIDAR_SECTORS..].iter().map(|&v| v as f64));
        }
        Ok(Self {
            depth: Tensor::new(&[b, 1, h, w], depth)?,
            lidar: Tensor::new(&[b, 1, LIDAR_SECTORS], lidar)?,
            vector: Tensor::new(&[b, OBS_VECTOR_LEN], vector)?,
        })
    }

    pub fn single(obs: &GuidanceObservation, cfg: &GuidanceConfig) -> Result<Self> {
        Self::from_encoded(&[encode_observation(obs, cfg)?], cfg)
    }

    pub fn len(&self) -> usize {
        self.vector.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn leaky() -> Layer {
    Layer::leaky_relu(LEAKY_SLOPE)
}

fn depth_branch<R: Rng + ?Sized>(cfg: &GuidanceConfig, rng: &mut R) -> Result<Sequential> {
    let (h, w) = cfg.depth_size;
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::Precondition(format!("depth size {h}x{w} must be divisible by 16")));
    }
    let mut s = Sequential::default();
    let mut c_in = 1;
    for (b, &c) in cfg.conv2d_channels.iter().enumerate() {
        for k in 0..2 {
            let name = format!("depth.b{b}.conv{k}");
            s.push(Layer::Conv2d(Conv2d::new(&name, c_in, c, cfg.kernel, rng)));
            s.push(Layer::BatchNorm(BatchNorm::new(&format!("depth.b{b}.bn{k}"), c)));
            s.push(leaky());
            c_in = c;
        }
        s.push(Layer::MaxPool2d(MaxPool2d::default()));
    }
    s.push(Layer::flatten());
    let flat = c_in * (h / 16) * (w / 16);
    s.push(Layer::Dense(Dense::new("depth.fc0", flat, cfg.depth_hidden, rng)));
    s.push(leaky());
    s.push(Layer::Dense(Dense::new("depth.fc1", cfg.depth_hidden, BRANCH_WIDTH, rng)));
    s.push(Layer::tanh());
    Ok(s)
}

fn lidar_branch<R: Rng + ?Sized>(cfg: &GuidanceConfig, rng: &mut R) -> Sequential {
    let mut s = Sequential::default();
    let mut c_in = 1;
    let mut len = LIDAR_SECTORS;
    for (b, (&c, convs)) in cfg.conv1d_channels.iter().zip([2, 2, 1]).enumerate() {
        for k in 0..convs {
            s.push(Layer::Conv1d(Conv1d::new(&format!("lidar.b{b}.conv{k}"), c_in, c, cfg.kernel, rng)));
            s.push(Layer::BatchNorm(BatchNorm::new(&format!("lidar.b{b}.bn{k}"), c)));
            s.push(leaky());
            c_in = c;
        }
        s.push(Layer::MaxPool1d(MaxPool1d::default()));
        len /= 2;
    }
    s.push(Layer::flatten());
    s.push(Layer::Dense(Dense::new("lidar.fc", c_in * len, BRANCH_WIDTH, rng)));
    s.push(Layer::tanh());
    s
}

fn vector_branch<R: Rng + ?Sized>(rng: &mut R) -> Sequential {
    Sequential::new(vec![
        Layer::Dense(Dense::new("vector.fc", OBS_VECTOR_LEN, BRANCH_WIDTH, rng)),
        Layer::tanh(),
    ])
}

fn fusion_head<R: Rng + ?Sized>(inputs: usize, hidden: usize, out: usize, squash: bool, rng: &mut R) -> Sequential {
    let mut s = Sequential::default();
    let mut w = inputs;
    for k in 0..5 {
        s.push(Layer::Dense(Dense::new(&format!("head.fc{k}"), w, hidden, rng)));
        s.push(leaky());
        w = hidden;
    }
    s.push(Layer::Dense(Dense::new("head.out", w, out, rng)));
    if squash {
        s.push(Layer::tanh());
    }
    s
}

/// Shared trunk: three branches concatenated to 384 features.
#[derive(Clone, Debug)]
pub struct Branches {
    pub depth: Sequential,
    pub lidar: Sequential,
    pub vector: Sequential,
}

impl Branches {
    fn new<R: Rng + ?Sized>(cfg: &GuidanceConfig, rng: &mut R) -> Result<Self> {
        Ok(Self { depth: depth_branch(cfg, rng)?, lidar: lidar_branch(cfg, rng), vector: vector_branch(rng) })
    }

    pub fn forward(&mut self, obs: &ObsBatch, mode: Mode) -> Result<Tensor> {
        let d = self.depth.forward(&obs.depth, mode)?;
        let l = self.lidar.forward(&obs.lidar, mode)?;
        let v = self.vector.forward(&obs.vector, mode)?;
        Ok(Tensor::concat_cols(&[&d, &l, &v])?)
    }

    /// Per-branch activations just before fusion.
    pub fn branch_outputs(&mut self, obs: &ObsBatch, mode: Mode) -> Result<[Tensor; 3]> {
        Ok([
            self.depth.forward(&obs.depth, mode)?,
            self.lidar.forward(&obs.lidar, mode)?,
            self.vector.forward(&obs.vector, mode)?,
        ])
    }

    fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let parts = grad.split_cols(&[BRANCH_WIDTH; 3])?;
        self.depth.backward(&parts[0])?;
        self.lidar.backward(&parts[1])?;
        self.vector.backward(&parts[2])?;
        Ok(())
    }
}

impl Module for Branches {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.depth.visit_params(f);
        self.lidar.visit_params(f);
        self.vector.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.depth.visit_params_mut(f);
        self.lidar.visit_params_mut(f);
        self.vector.visit_params_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct GuidanceActor {
    pub cfg: GuidanceConfig,
    pub branches: Branches,
    pub head: Sequential,
}

impl GuidanceActor {
    pub fn new<R: Rng + ?Sized>(cfg: &GuidanceConfig, rng: &mut R) -> Result<Self> {
        let branches = Branches::new(cfg, rng)?;
        let head = fusion_head(FUSED_WIDTH, cfg.fusion_hidden, ACTION_DIM, true, rng);
        Ok(Self { cfg: cfg.clone(), branches, head })
    }

    /// `[B, 3]` actions in `[-1, 1]`.
    pub fn forward(&mut self, obs: &ObsBatch, mode: Mode) -> Result<Tensor> {
        let fused = self.branches.forward(obs, mode)?;
        Ok(self.head.forward(&fused, mode)?)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let g = self.head.backward(grad)?;
        self.branches.backward(&g)
    }

    pub fn act(&mut self, obs: &GuidanceObservation) -> Result<crate::apf::Action> {
        let batch = ObsBatch::single(obs, &self.cfg)?;
        let out = self.forward(&batch, Mode::Eval)?;
        let d = out.data();
        Ok(crate::apf::Action::new(d[0], d[1], d[2]))
    }
}

impl Module for GuidanceActor {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.branches.visit_params(f);
        self.head.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.branches.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}

impl crate::simenv::Policy for GuidanceActor {
    fn act(&mut self, obs: &GuidanceObservation) -> Result<crate::apf::Action> {
        GuidanceActor::act(self, obs)
    }
}

#[derive(Clone, Debug)]
pub struct GuidanceCritic {
    pub cfg: GuidanceConfig,
    pub branches: Branches,
    pub head: Sequential,
}

impl GuidanceCritic {
    pub fn new<R: Rng + ?Sized>(cfg: &GuidanceConfig, rng: &mut R) -> Result<Self> {
        let branches = Branches::new(cfg, rng)?;
        let head = fusion_head(FUSED_WIDTH + ACTION_DIM, cfg.fusion_hidden, 1, false, rng);
        Ok(Self { cfg: cfg.clone(), branches, head })
    }

    /// `[B, 1]` Q-values.
    pub fn forward(&mut self, obs: &ObsBatch, action: &Tensor, mode: Mode) -> Result<Tensor> {
        if action.shape() != [obs.len(), ACTION_DIM] {
            return Err(swarm_sar_nn::NnError::ShapeMismatch {
                op: "critic action",
                expected: vec![obs.len(), ACTION_DIM],
                got: action.shape().to_vec(),
            }
            .into());
        }
        let fused = self.branches.forward(obs, mode)?;
        let x = Tensor::concat_cols(&[&fused, action])?;
        Ok(self.head.forward(&x, mode)?)
    }

    /// Accumulates parameter gradients and returns dQ/daction.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.head.backward(grad)?;
        let parts = g.split_cols(&[FUSED_WIDTH, ACTION_DIM])?;
        self.branches.backward(&parts[0])?;
        Ok(parts[1].clone())
    }
}

impl Module for GuidanceCritic {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.branches.visit_params(f);
        self.head.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.branches.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}

/// Model id convention: `guidance-<training steps>`.
pub fn model_id(steps: u64) -> String {
    format!("guidance-{steps}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn widths_line_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = GuidanceConfig::desk();
        let mut a = GuidanceActor::new(&cfg, &mut rng).unwrap();
        let rows = vec![vec![0.5f32; cfg.encoded_len()]; 2];
        let b = ObsBatch::from_encoded(&rows, &cfg).unwrap();
        let fused = a.branches.forward(&b, Mode::Train).unwrap();
        assert_eq!(fused.shape(), &[2, FUSED_WIDTH]);
        assert_eq!(a.forward(&b, Mode::Eval).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn model_ids() {
        assert_eq!(model_id(155260), "guidance-155260");
    }
}
