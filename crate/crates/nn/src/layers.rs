//! Feed-forward layers with explicit forward/backward passes.
//!
//! Batched inputs put the batch on axis 0: dense layers take `[B, F]`,
//! 1-D convolutions `[B, C, L]`, 2-D convolutions `[B, C, H, W]`.

use rand::Rng;

use crate::error::{mismatch, NnError, Result};
use crate::init::fan_in_uniform;
use crate::linalg::{gemm, gemm_t};
use crate::param::{Module, Param};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running stats updated.
    Train,
    /// Running statistics; every layer is a fixed function of its input.
    Eval,
}

// ---------------------------------------------------------------------------
// Dense

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::trainable(
                format!("{name}.weight"),
                fan_in_uniform(rng, &[inputs, outputs], inputs),
            ),
            bias: Param::trainable(format!("{name}.bias"), Tensor::zeros(&[outputs])),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, f) = x.matrix_dims("dense")?;
        let (fi, fo) = (self.inputs(), self.outputs());
        if f != fi {
            return Err(mismatch("dense", &[b, fi], x.shape()));
        }
        let mut out = Vec::with_capacity(b * fo);
        for _ in 0..b {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(b, fi, fo, x.data(), false, self.weight.value.data(), false, &mut out, 1.0);
        self.input = Some(x.clone());
        Tensor::new(&[b, fo], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(NnError::NoForwardCache { op: "dense" })?;
        let b = x.dim(0);
        let (fi, fo) = (self.inputs(), self.outputs());
        if grad.shape() != [b, fo] {
            return Err(mismatch("dense backward", &[b, fo], grad.shape()));
        }
        {
            let gw = self.weight.value.grad_mut().expect("trainable");
            gemm(fi, b, fo, x.data(), true, grad.data(), false, gw, 1.0);
        }
        {
            let gb = self.bias.value.grad_mut().expect("trainable");
            for r in 0..b {
                for (acc, g) in gb.iter_mut().zip(grad.row(r)) {
                    *acc += g;
                }
            }
        }
        let mut dx = vec![0.0; b * fi];
        gemm(b, fo, fi, grad.data(), false, self.weight.value.data(), true, &mut dx, 0.0);
        Tensor::new(&[b, fi], dx)
    }
}

impl Module for Dense {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Convolutions (stride 1, zero "same" padding, odd kernels)

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    kernel: usize,
    cols: Vec<f64>,
    in_shape: Option<Vec<usize>>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv2d kernel must be odd");
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::trainable(
                format!("{name}.weight"),
                fan_in_uniform(rng, &[out_channels, in_channels, kernel, kernel], fan_in),
            ),
            bias: Param::trainable(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
            kernel,
            cols: Vec::new(),
            in_shape: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }

    /// Output columns `[lo, hi)` read a valid input column for offset `kx`;
    /// the input column is `x + kx - pad`.
    fn valid_span(&self, kx: usize, w: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        let lo = pad.saturating_sub(kx);
        let hi = (w + pad).saturating_sub(kx).min(w);
        (lo, hi.max(lo))
    }

    fn im2col(&self, x: &[f64], c_in: usize, h: usize, w: usize, cols: &mut [f64]) {
        let k = self.kernel;
        let pad = k / 2;
        let hw = h * w;
        for c in 0..c_in {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let (lo, hi) = self.valid_span(kx, w);
                    for y in 0..h {
                        let iy = y as isize + ky as isize - pad as isize;
                        let drow = &mut dst[y * w..(y + 1) * w];
                        if iy < 0 || iy >= h as isize {
                            drow.fill(0.0);
                            continue;
                        }
                        let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                        drow[..lo].fill(0.0);
                        drow[hi..].fill(0.0);
                        drow[lo..hi].copy_from_slice(&srow[lo + kx - pad..hi + kx - pad]);
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], c_in: usize, h: usize, w: usize, dx: &mut [f64]) {
        let k = self.kernel;
        let pad = k / 2;
        let hw = h * w;
        for c in 0..c_in {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let (lo, hi) = self.valid_span(kx, w);
                    for y in 0..h {
                        let iy = y as isize + ky as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let prow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let srow = &src[y * w + lo..y * w + hi];
                        for (p, v) in prow[lo + kx - pad..hi + kx - pad].iter_mut().zip(srow) {
                            *p += v;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [b, c, h, w] = match x.shape() {
            [b, c, h, w] => [*b, *c, *h, *w],
            other => return Err(mismatch("conv2d", &[0, self.in_channels(), 0, 0], other)),
        };
        if c != self.in_channels() {
            return Err(mismatch("conv2d", &[b, self.in_channels(), h, w], x.shape()));
        }
        let co = self.out_channels();
        let ck = c * self.kernel * self.kernel;
        let hw = h * w;
        let mut cols = std::mem::take(&mut self.cols);
        cols.resize(b * ck * hw, 0.0);
        let mut out = vec![0.0; b * co * hw];
        for n in 0..b {
            let xin = &x.data()[n * c * hw..(n + 1) * c * hw];
            let col = &mut cols[n * ck * hw..(n + 1) * ck * hw];
            self.im2col(xin, c, h, w, col);
            let o = &mut out[n * co * hw..(n + 1) * co * hw];
            for (oc, bias) in self.bias.value.data().iter().enumerate() {
                o[oc * hw..(oc + 1) * hw].fill(*bias);
            }
            // Pixels first: few output channels, many pixels.
            gemm_t(hw, ck, co, col, true, self.weight.value.data(), true, o, 1.0);
        }
        self.cols = cols;
        self.in_shape = Some(x.shape().to_vec());
        Tensor::new(&[b, co, h, w], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.in_shape.clone().ok_or(NnError::NoForwardCache { op: "conv2d" })?;
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let co = self.out_channels();
        if grad.shape() != [b, co, h, w] {
            return Err(mismatch("conv2d backward", &[b, co, h, w], grad.shape()));
        }
        let ck = c * self.kernel * self.kernel;
        let hw = h * w;
        let mut dx = vec![0.0; b * c * hw];
        let mut dcols = vec![0.0; ck * hw];
        for n in 0..b {
            let g = &grad.data()[n * co * hw..(n + 1) * co * hw];
            let col = &self.cols[n * ck * hw..(n + 1) * ck * hw];
            gemm_t(ck, hw, co, col, false, g, true, self.weight.value.grad_mut().expect("trainable"), 1.0);
            let gb = self.bias.value.grad_mut().expect("trainable");
            for oc in 0..co {
                gb[oc] += g[oc * hw..(oc + 1) * hw].iter().sum::<f64>();
            }
            gemm(ck, co, hw, self.weight.value.data(), true, g, false, &mut dcols, 0.0);
            self.col2im(&dcols, c, h, w, &mut dx[n * c * hw..(n + 1) * c * hw]);
        }
        Tensor::new(&shape, dx)
    }
}

impl Module for Conv2d {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    kernel: usize,
    cols: Vec<f64>,
    in_shape: Option<Vec<usize>>,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv1d kernel must be odd");
        let fan_in = in_channels * kernel;
        Self {
            weight: Param::trainable(
                format!("{name}.weight"),
                fan_in_uniform(rng, &[out_channels, in_channels, kernel], fan_in),
            ),
            bias: Param::trainable(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
            kernel,
            cols: Vec::new(),
            in_shape: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [b, c, l] = match x.shape() {
            [b, c, l] => [*b, *c, *l],
            other => return Err(mismatch("conv1d", &[0, self.in_channels(), 0], other)),
        };
        if c != self.in_channels() {
            return Err(mismatch("conv1d", &[b, self.in_channels(), l], x.shape()));
        }
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let co = self.out_channels();
        let ck = c * k;
        let mut cols = std::mem::take(&mut self.cols);
        cols.resize(b * ck * l, 0.0);
        let mut out = vec![0.0; b * co * l];
        for n in 0..b {
            let xin = &x.data()[n * c * l..(n + 1) * c * l];
            let col = &mut cols[n * ck * l..(n + 1) * ck * l];
            for ci in 0..c {
                for kk in 0..k {
                    let row = ci * k + kk;
                    for t in 0..l {
                        let it = t as isize + kk as isize - pad;
                        col[row * l + t] = if it < 0 || it >= l as isize {
                            0.0
                        } else {
                            xin[ci * l + it as usize]
                        };
                    }
                }
            }
            let o = &mut out[n * co * l..(n + 1) * co * l];
            for (oc, bias) in self.bias.value.data().iter().enumerate() {
                o[oc * l..(oc + 1) * l].iter_mut().for_each(|v| *v = *bias);
            }
            gemm(co, ck, l, self.weight.value.data(), false, col, false, o, 1.0);
        }
        self.cols = cols;
        self.in_shape = Some(x.shape().to_vec());
        Tensor::new(&[b, co, l], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.in_shape.clone().ok_or(NnError::NoForwardCache { op: "conv1d" })?;
        let (b, c, l) = (shape[0], shape[1], shape[2]);
        let co = self.out_channels();
        if grad.shape() != [b, co, l] {
            return Err(mismatch("conv1d backward", &[b, co, l], grad.shape()));
        }
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let ck = c * k;
        let mut dx = vec![0.0; b * c * l];
        let mut dcols = vec![0.0; ck * l];
        for n in 0..b {
            let g = &grad.data()[n * co * l..(n + 1) * co * l];
            let col = &self.cols[n * ck * l..(n + 1) * ck * l];
            gemm(co, l, ck, g, false, col, true, self.weight.value.grad_mut().expect("trainable"), 1.0);
            let gb = self.bias.value.grad_mut().expect("trainable");
            for oc in 0..co {
                gb[oc] += g[oc * l..(oc + 1) * l].iter().sum::<f64>();
            }
            gemm(ck, co, l, self.weight.value.data(), true, g, false, &mut dcols, 0.0);
            let dxn = &mut dx[n * c * l..(n + 1) * c * l];
            for ci in 0..c {
                for kk in 0..k {
                    let row = ci * k + kk;
                    for t in 0..l {
                        let it = t as isize + kk as isize - pad;
                        if it >= 0 && it < l as isize {
                            dxn[ci * l + it as usize] += dcols[row * l + t];
                        }
                    }
                }
            }
        }
        Tensor::new(&shape, dx)
    }
}

impl Module for Conv1d {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Pooling (2x / 2x2 windows, stride 2, odd remainders dropped)

#[derive(Clone, Debug, Default)]
pub struct MaxPool2d {
    argmax: Vec<usize>,
    in_shape: Option<Vec<usize>>,
}

impl MaxPool2d {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [b, c, h, w] = match x.shape() {
            [b, c, h, w] => [*b, *c, *h, *w],
            other => return Err(mismatch("maxpool2d", &[0, 0, 0, 0], other)),
        };
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        self.argmax.clear();
        let d = x.data();
        for plane in 0..b * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xo + dx;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    out.push(d[best]);
                    self.argmax.push(best);
                }
            }
        }
        self.in_shape = Some(x.shape().to_vec());
        Tensor::new(&[b, c, oh, ow], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.in_shape.clone().ok_or(NnError::NoForwardCache { op: "maxpool2d" })?;
        if grad.len() != self.argmax.len() {
            return Err(mismatch("maxpool2d backward", &[self.argmax.len()], grad.shape()));
        }
        let mut dx = Tensor::zeros(&shape);
        for (g, &i) in grad.data().iter().zip(&self.argmax) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }
}

#[derive(Clone, Debug, Default)]
pub struct MaxPool1d {
    argmax: Vec<usize>,
    in_shape: Option<Vec<usize>>,
}

impl MaxPool1d {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [b, c, l] = match x.shape() {
            [b, c, l] => [*b, *c, *l],
            other => return Err(mismatch("maxpool1d", &[0, 0, 0], other)),
        };
        let ol = l / 2;
        let mut out = Vec::with_capacity(b * c * ol);
        self.argmax.clear();
        let d = x.data();
        for plane in 0..b * c {
            let base = plane * l;
            for t in 0..ol {
                let (i0, i1) = (base + 2 * t, base + 2 * t + 1);
                let best = if d[i1] > d[i0] { i1 } else { i0 };
                out.push(d[best]);
                self.argmax.push(best);
            }
        }
        self.in_shape = Some(x.shape().to_vec());
        Tensor::new(&[b, c, ol], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.in_shape.clone().ok_or(NnError::NoForwardCache { op: "maxpool1d" })?;
        if grad.len() != self.argmax.len() {
            return Err(mismatch("maxpool1d backward", &[self.argmax.len()], grad.shape()));
        }
        let mut dx = Tensor::zeros(&shape);
        for (g, &i) in grad.data().iter().zip(&self.argmax) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------------------
// Batch normalisation over axis 1 (features or channels)

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(name: &str, features: usize) -> Self {
        Self {
            gamma: Param::trainable(format!("{name}.gamma"), Tensor::from_fn(&[features], |_| 1.0)),
            beta: Param::trainable(format!("{name}.beta"), Tensor::zeros(&[features])),
            running_mean: Param::buffer(format!("{name}.running_mean"), Tensor::zeros(&[features])),
            running_var: Param::buffer(
                format!("{name}.running_var"),
                Tensor::from_fn(&[features], |_| 1.0),
            ),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.value.len()
    }

    /// (batch, channels, inner) view of an input shape.
    fn layout(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        if shape.len() < 2 || shape[1] != self.features() {
            return Err(mismatch("batchnorm", &[0, self.features()], shape));
        }
        Ok((shape[0], shape[1], shape[2..].iter().product()))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, c, inner) = self.layout(x.shape())?;
        let d = x.data();
        let count = (b * inner) as f64;
        let plane = |n: usize, ch: usize| (n * c + ch) * inner..(n * c + ch + 1) * inner;
        let mut inv_std = vec![0.0; c];
        let mut xhat = vec![0.0; d.len()];
        let mut out = vec![0.0; d.len()];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let s: f64 = (0..b).map(|n| d[plane(n, ch)].iter().sum::<f64>()).sum();
                    let mean = s / count;
                    let v: f64 = (0..b)
                        .map(|n| d[plane(n, ch)].iter().map(|x| (x - mean) * (x - mean)).sum::<f64>())
                        .sum();
                    let var = v / count;
                    let m = self.momentum;
                    let unbiased = if count > 1.0 { v / (count - 1.0) } else { var };
                    let rm = &mut self.running_mean.value.data_mut()[ch];
                    *rm = (1.0 - m) * *rm + m * mean;
                    let rv = &mut self.running_var.value.data_mut()[ch];
                    *rv = (1.0 - m) * *rv + m * unbiased;
                    (mean, var)
                }
                Mode::Eval => (
                    self.running_mean.value.data()[ch],
                    self.running_var.value.data()[ch],
                ),
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = is;
            let (g, bt) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for n in 0..b {
                let r = plane(n, ch);
                for ((xh, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&d[r]) {
                    *xh = (v - mean) * is;
                    *o = g * *xh + bt;
                }
            }
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std,
            mode,
        });
        Tensor::new(x.shape(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache { op: "batchnorm" })?;
        if grad.shape() != cache.shape.as_slice() {
            return Err(mismatch("batchnorm backward", &cache.shape, grad.shape()));
        }
        let (b, c, inner) = self.layout(&cache.shape)?;
        let count = (b * inner) as f64;
        let plane = |n: usize, ch: usize| (n * c + ch) * inner..(n * c + ch + 1) * inner;
        let g = grad.data();
        let mut dx = vec![0.0; g.len()];
        let gamma = self.gamma.value.data().to_vec();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for n in 0..b {
                let r = plane(n, ch);
                sum_dy += g[r.clone()].iter().sum::<f64>();
                sum_dy_xhat += g[r.clone()].iter().zip(&cache.xhat[r]).map(|(a, b)| a * b).sum::<f64>();
            }
            dgamma[ch] = sum_dy_xhat;
            dbeta[ch] = sum_dy;
            let is = cache.inv_std[ch];
            let gm = gamma[ch];
            for n in 0..b {
                let r = plane(n, ch);
                let (gs, xs) = (&g[r.clone()], &cache.xhat[r.clone()]);
                match cache.mode {
                    Mode::Train => {
                        let k = gm * is / count;
                        for ((d, &gv), &xh) in dx[r].iter_mut().zip(gs).zip(xs) {
                            *d = k * (count * gv - sum_dy - xh * sum_dy_xhat);
                        }
                    }
                    Mode::Eval => {
                        for (d, &gv) in dx[r].iter_mut().zip(gs) {
                            *d = gm * is * gv;
                        }
                    }
                }
            }
        }
        for (acc, v) in self.gamma.value.grad_mut().expect("trainable").iter_mut().zip(dgamma) {
            *acc += v;
        }
        for (acc, v) in self.beta.value.grad_mut().expect("trainable").iter_mut().zip(dbeta) {
            *acc += v;
        }
        Tensor::new(&cache.shape, dx)
    }
}

impl Module for BatchNorm {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

// ---------------------------------------------------------------------------
// Element-wise activations

pub fn leaky_relu(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

pub fn leaky_relu_grad(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        slope
    }
}

// ---------------------------------------------------------------------------
// Layer enum and Sequential container

#[derive(Clone, Debug)]
pub enum Layer {
    Dense(Dense),
    Conv1d(Conv1d),
    Conv2d(Conv2d),
    MaxPool1d(MaxPool1d),
    MaxPool2d(MaxPool2d),
    BatchNorm(BatchNorm),
    LeakyRelu { slope: f64, input: Option<Tensor> },
    Tanh { output: Option<Tensor> },
    Flatten { in_shape: Option<Vec<usize>> },
}

impl Layer {
    pub fn leaky_relu(slope: f64) -> Self {
        Layer::LeakyRelu { slope, input: None }
    }

    pub fn tanh() -> Self {
        Layer::Tanh { output: None }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { in_shape: None }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv1d(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::MaxPool1d(l) => l.forward(x),
            Layer::MaxPool2d(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::LeakyRelu { slope, input } => {
                let s = *slope;
                *input = Some(x.clone());
                Ok(x.map(|v| leaky_relu(v, s)))
            }
            Layer::Tanh { output } => {
                let y = x.map(f64::tanh);
                *output = Some(y.clone());
                Ok(y)
            }
            Layer::Flatten { in_shape } => {
                *in_shape = Some(x.shape().to_vec());
                let b = x.dim(0);
                let rest = x.len() / b.max(1);
                x.clone().reshape(&[b, rest])
            }
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.backward(grad),
            Layer::Conv1d(l) => l.backward(grad),
            Layer::Conv2d(l) => l.backward(grad),
            Layer::MaxPool1d(l) => l.backward(grad),
            Layer::MaxPool2d(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::LeakyRelu { slope, input } => {
                let x = input.as_ref().ok_or(NnError::NoForwardCache { op: "leaky_relu" })?;
                if x.shape() != grad.shape() {
                    return Err(mismatch("leaky_relu backward", x.shape(), grad.shape()));
                }
                let data = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| g * leaky_relu_grad(v, *slope))
                    .collect();
                Tensor::new(x.shape(), data)
            }
            Layer::Tanh { output } => {
                let y = output.as_ref().ok_or(NnError::NoForwardCache { op: "tanh" })?;
                if y.shape() != grad.shape() {
                    return Err(mismatch("tanh backward", y.shape(), grad.shape()));
                }
                let data = y
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| g * (1.0 - v * v))
                    .collect();
                Tensor::new(y.shape(), data)
            }
            Layer::Flatten { in_shape } => {
                let shape = in_shape.as_ref().ok_or(NnError::NoForwardCache { op: "flatten" })?;
                grad.clone().reshape(shape)
            }
        }
    }
}

impl Module for Layer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        match self {
            Layer::Dense(l) => l.visit_params(f),
            Layer::Conv1d(l) => l.visit_params(f),
            Layer::Conv2d(l) => l.visit_params(f),
            Layer::BatchNorm(l) => l.visit_params(f),
            _ => {}
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Layer::Dense(l) => l.visit_params_mut(f),
            Layer::Conv1d(l) => l.visit_params_mut(f),
            Layer::Conv2d(l) => l.visit_params_mut(f),
            Layer::BatchNorm(l) => l.visit_params_mut(f),
            _ => {}
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, mode)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }
}

impl Module for Sequential {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::new("d", 3, 3, &mut rng);
        d.weight.value.data_mut().copy_from_slice(&[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let x = Tensor::new(&[2, 3], vec![1., -2., 3., 0.5, 0.25, -4.]).unwrap();
        let y = d.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dense_reports_both_shapes_on_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::new("d", 3, 2, &mut rng);
        let err = d.forward(&Tensor::zeros(&[4, 5])).unwrap_err().to_string();
        assert!(err.contains("[4, 3]") && err.contains("[4, 5]"), "{err}");
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut t = Layer::tanh();
        let y = t.forward(&Tensor::zeros(&[1, 4]), Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_batchnorm_is_affine_and_batch_independent() {
        let mut bn = BatchNorm::new("bn", 2);
        bn.running_mean.value.data_mut().copy_from_slice(&[0.5, -1.0]);
        bn.running_var.value.data_mut().copy_from_slice(&[4.0, 0.25]);
        bn.gamma.value.data_mut().copy_from_slice(&[2.0, 3.0]);
        bn.beta.value.data_mut().copy_from_slice(&[0.1, -0.2]);
        let single = Tensor::new(&[1, 2], vec![1.5, 0.0]).unwrap();
        let batch = Tensor::new(&[3, 2], vec![1.5, 0.0, 100.0, -7.0, -3.0, 2.0]).unwrap();
        let a = bn.forward(&single, Mode::Eval).unwrap();
        let b = bn.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(a.row(0), b.row(0));
        let s0 = 2.0 / (4.0f64 + 1e-5).sqrt();
        assert!((a.data()[0] - (s0 * 1.0 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut p = MaxPool2d::default();
        let x = Tensor::new(&[1, 1, 2, 2], vec![1., 4., 3., 2.]).unwrap();
        let y = p.forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = p.backward(&Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0., 1., 0., 0.]);
    }

    #[test]
    fn conv2d_identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Conv2d::new("c", 1, 1, 3, &mut rng);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        c.weight.value.data_mut().copy_from_slice(&k);
        let x = Tensor::from_fn(&[2, 1, 4, 5], |i| i as f64 * 0.1);
        let y = c.forward(&x).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);
    }
}
