//! Layer implementations. Each layer caches what its backward pass needs
//! from the most recent forward pass and stores parameter gradients next to
//! the parameters; `backward` overwrites those gradients.

use super::scalar::gemm;
use super::{Scalar, Tensor};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Forward-pass mode. Training mode carries the run RNG used for dropout.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// A parameter tensor and its gradient.
pub struct ParamRef<'a, T> {
    pub value: &'a mut Vec<T>,
    pub grad: &'a mut Vec<T>,
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Relu(Relu<T>),
    BatchNorm2d(BatchNorm2d<T>),
    MaxPool2d(MaxPool2d),
    Dropout(Dropout<T>),
    Flatten(Flatten),
    Linear(Linear<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::BatchNorm2d(l) => l.forward(x, mode.is_train()),
            Layer::MaxPool2d(l) => l.forward(x),
            Layer::Dropout(l) => Ok(l.forward(x, mode)),
            Layer::Flatten(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
        }
    }

    /// Propagates `dy` back through the layer, storing parameter gradients.
    /// Returns the input gradient when `need_input_grad` is set.
    pub fn backward(&mut self, dy: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        match self {
            Layer::Conv2d(l) => l.backward(dy, need_input_grad),
            Layer::Relu(l) => l.backward(dy).map(Some),
            Layer::BatchNorm2d(l) => l.backward(dy).map(Some),
            Layer::MaxPool2d(l) => l.backward(dy).map(Some),
            Layer::Dropout(l) => l.backward(dy).map(Some),
            Layer::Flatten(l) => l.backward(dy).map(Some),
            Layer::Linear(l) => l.backward(dy, need_input_grad),
        }
    }

    /// Trainable parameters in declaration order (weight before bias,
    /// scale before shift).
    pub fn params_mut(&mut self) -> Vec<ParamRef<'_, T>> {
        match self {
            Layer::Conv2d(l) => vec![
                ParamRef {
                    value: &mut l.weight,
                    grad: &mut l.grad_weight,
                },
                ParamRef {
                    value: &mut l.bias,
                    grad: &mut l.grad_bias,
                },
            ],
            Layer::BatchNorm2d(l) => vec![
                ParamRef {
                    value: &mut l.gamma,
                    grad: &mut l.grad_gamma,
                },
                ParamRef {
                    value: &mut l.beta,
                    grad: &mut l.grad_beta,
                },
            ],
            Layer::Linear(l) => vec![
                ParamRef {
                    value: &mut l.weight,
                    grad: &mut l.grad_weight,
                },
                ParamRef {
                    value: &mut l.bias,
                    grad: &mut l.grad_bias,
                },
            ],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm2d(l) => vec![&l.gamma, &l.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<&[T]> {
        match self {
            Layer::BatchNorm2d(l) => vec![&l.running_mean, &l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::BatchNorm2d(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        let c = |v: &Vec<T>| {
            v.iter()
                .map(|x| U::from_f64_lossy(x.to_f64_lossy()))
                .collect::<Vec<U>>()
        };
        match self {
            Layer::Conv2d(l) => {
                let mut out = Conv2d::new(l.in_ch, l.out_ch, l.kh, l.kw);
                out.weight = c(&l.weight);
                out.bias = c(&l.bias);
                Layer::Conv2d(out)
            }
            Layer::Relu(_) => Layer::Relu(Relu::default()),
            Layer::BatchNorm2d(l) => {
                let mut out = BatchNorm2d::new(l.channels);
                out.gamma = c(&l.gamma);
                out.beta = c(&l.beta);
                out.running_mean = c(&l.running_mean);
                out.running_var = c(&l.running_var);
                Layer::BatchNorm2d(out)
            }
            Layer::MaxPool2d(l) => Layer::MaxPool2d(MaxPool2d::new(l.kernel)),
            Layer::Dropout(l) => Layer::Dropout(Dropout::new(l.rate)),
            Layer::Flatten(_) => Layer::Flatten(Flatten::default()),
            Layer::Linear(l) => {
                let mut out = Linear::new(l.in_features, l.out_features);
                out.weight = c(&l.weight);
                out.bias = c(&l.bias);
                Layer::Linear(out)
            }
        }
    }
}

fn cached<'a, T>(x: &'a Option<T>, layer: &str) -> Result<&'a T> {
    x.as_ref()
        .ok_or_else(|| Error::Training(format!("{layer} backward called before forward")))
}

/// Valid-padding, stride-1 convolution. Weights are `[out, in, kh, kw]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kh: usize, kw: usize) -> Self {
        let n = out_ch * in_ch * kh * kw;
        Self {
            in_ch,
            out_ch,
            kh,
            kw,
            weight: vec![T::zero(); n],
            bias: vec![T::zero(); out_ch],
            grad_weight: vec![T::zero(); n],
            grad_bias: vec![T::zero(); out_ch],
            input: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_dims(&self, shape: [usize; 4]) -> Result<(usize, usize)> {
        if shape[1] != self.in_ch {
            return Err(Error::Shape(format!(
                "conv2d expects {} input channels, got {}",
                self.in_ch, shape[1]
            )));
        }
        if shape[2] < self.kh || shape[3] < self.kw {
            return Err(Error::Shape(format!(
                "conv2d kernel {}x{} larger than input {}x{}",
                self.kh, self.kw, shape[2], shape[3]
            )));
        }
        Ok((shape[2] - self.kh + 1, shape[3] - self.kw + 1))
    }

    /// Writes the column matrix of one input item into `col`, a row-major
    /// `[in * kh * kw, stride]` matrix, starting at column `at`.
    #[allow(clippy::too_many_arguments)]
    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize, col: &mut [T], stride: usize, at: usize) {
        for c in 0..self.in_ch {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * stride + at;
                    for oy in 0..oh {
                        let src = &plane[(oy + i) * w + j..(oy + i) * w + j + ow];
                        col[row + oy * ow..row + (oy + 1) * ow].copy_from_slice(src);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im_add(&self, col: &[T], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [T], stride: usize, at: usize) {
        for c in 0..self.in_ch {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * stride + at;
                    for oy in 0..oh {
                        let dst = &mut plane[(oy + i) * w + j..(oy + i) * w + j + ow];
                        for (d, &s) in dst.iter_mut().zip(&col[row + oy * ow..row + (oy + 1) * ow]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    /// Examples per GEMM so that a column buffer stays near `COL_BUDGET`.
    fn chunk(&self, p: usize) -> usize {
        (COL_BUDGET / (self.fan_in() * p).max(1)).max(1)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, _, h, w] = x.shape();
        let (oh, ow) = self.out_dims(x.shape())?;
        let p = oh * ow;
        let ckk = self.fan_in();
        let oc = self.out_ch;
        let mut y = Tensor::zeros([n, oc, oh, ow]);
        let chunk = self.chunk(p).min(n.max(1));
        let mut col = vec![T::zero(); ckk * p * chunk];
        let mut out = vec![T::zero(); oc * p * chunk];
        for start in (0..n).step_by(chunk) {
            let m = chunk.min(n - start);
            let stride = m * p;
            for e in 0..m {
                self.im2col(x.item(start + e), h, w, oh, ow, &mut col, stride, e * p);
            }
            gemm(
                oc,
                ckk,
                stride,
                &self.weight,
                false,
                &col[..ckk * stride],
                false,
                T::zero(),
                &mut out[..oc * stride],
            );
            for e in 0..m {
                let item = y.item_mut(start + e);
                for (o, b) in self.bias.iter().enumerate() {
                    let src = &out[o * stride + e * p..o * stride + (e + 1) * p];
                    for (d, &v) in item[o * p..(o + 1) * p].iter_mut().zip(src) {
                        *d = v + *b;
                    }
                }
            }
        }
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let x = cached(&self.input, "conv2d")?;
        let [n, _, h, w] = x.shape();
        let (oh, ow) = self.out_dims(x.shape())?;
        let oc = self.out_ch;
        if dy.shape() != [n, oc, oh, ow] {
            return Err(Error::Shape(format!("conv2d gradient shape {:?}", dy.shape())));
        }
        let p = oh * ow;
        let ckk = self.fan_in();
        self.grad_weight.iter_mut().for_each(|g| *g = T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        let chunk = self.chunk(p).min(n.max(1));
        let mut col = vec![T::zero(); ckk * p * chunk];
        let mut g = vec![T::zero(); oc * p * chunk];
        for start in (0..n).step_by(chunk) {
            let m = chunk.min(n - start);
            let stride = m * p;
            for e in 0..m {
                self.im2col(x.item(start + e), h, w, oh, ow, &mut col, stride, e * p);
                let gi = dy.item(start + e);
                for o in 0..oc {
                    let src = &gi[o * p..(o + 1) * p];
                    g[o * stride + e * p..o * stride + (e + 1) * p].copy_from_slice(src);
                    self.grad_bias[o] += src.iter().copied().sum::<T>();
                }
            }
            let (g, col) = (&g[..oc * stride], &mut col[..ckk * stride]);
            gemm(oc, stride, ckk, g, false, col, true, T::one(), &mut self.grad_weight);
            if let Some(dx) = dx.as_mut() {
                // the column buffer is reused for the column gradient
                gemm(ckk, oc, stride, &self.weight, true, g, false, T::zero(), col);
                for e in 0..m {
                    self.col2im_add(col, h, w, oh, ow, dx.item_mut(start + e), stride, e * p);
                }
            }
        }
        Ok(dx)
    }
}

/// Column-buffer size, in elements, targeted by batched convolution GEMMs.
const COL_BUDGET: usize = 1 << 22;

/// Keeps a positivity mask of its input for the backward pass.
#[derive(Debug, Clone)]
pub struct Relu<T> {
    mask: Option<([usize; 4], Vec<bool>)>,
    _t: std::marker::PhantomData<T>,
}

impl<T> Default for Relu<T> {
    fn default() -> Self {
        Self {
            mask: None,
            _t: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Relu<T> {
    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let zero = T::zero();
        self.mask = Some((x.shape(), x.data().iter().map(|&v| v > zero).collect()));
        x.map(|v| if v > zero { v } else { zero })
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, mask) = cached(&self.mask, "relu")?;
        if dy.data().len() != mask.len() {
            return Err(Error::Shape(format!("relu gradient shape {:?}", dy.shape())));
        }
        let data = mask
            .iter()
            .zip(dy.data())
            .map(|(&m, &g)| if m { g } else { T::zero() })
            .collect();
        Tensor::from_vec(*shape, data)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over (batch, height, width).
///
/// Running variance is updated with the unbiased batch variance.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    shape: [usize; 4],
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    train: bool,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        if c != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm2d expects {} channels, got {c}",
                self.channels
            )));
        }
        if train && n < 2 {
            return Err(Error::Shape(
                "batchnorm2d in training mode needs a batch of at least 2".into(),
            ));
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut y = vec![T::zero(); x.data().len()];
        let mut xhat = vec![T::zero(); x.data().len()];
        let mut inv_stds = Vec::with_capacity(c);
        let planes = |ch: usize| (0..n).map(move |s| (s * c + ch) * hw..(s * c + ch + 1) * hw);
        for ch in 0..c {
            let (mean, var) = if train {
                let sum: f64 = planes(ch).map(|r| plane_sum(&x.data()[r])).sum();
                let mean = sum / m;
                let sq: f64 = planes(ch).map(|r| plane_sq_dev(&x.data()[r], mean)).sum();
                let var = sq / m;
                let rm = self.running_mean[ch].to_f64_lossy();
                let rv = self.running_var[ch].to_f64_lossy();
                let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
                self.running_mean[ch] = T::from_f64_lossy((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * mean);
                self.running_var[ch] = T::from_f64_lossy((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * unbiased);
                (mean, var)
            } else {
                (
                    self.running_mean[ch].to_f64_lossy(),
                    self.running_var[ch].to_f64_lossy(),
                )
            };
            let inv_std = 1.0 / (var + BN_EPS).sqrt();
            inv_stds.push(inv_std);
            let (mean_t, inv_t) = (T::from_f64_lossy(mean), T::from_f64_lossy(inv_std));
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            for r in planes(ch) {
                for ((yv, xh), &xv) in y[r.clone()].iter_mut().zip(&mut xhat[r.clone()]).zip(&x.data()[r]) {
                    *xh = (xv - mean_t) * inv_t;
                    *yv = g * *xh + b;
                }
            }
        }
        let y = Tensor::from_vec(x.shape(), y)?;
        self.cache = Some(BnCache {
            shape: x.shape(),
            xhat,
            inv_std: inv_stds,
            train,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = cached(&self.cache, "batchnorm2d")?;
        let [n, c, h, w] = cache.shape;
        if dy.shape() != cache.shape {
            return Err(Error::Shape(format!("batchnorm2d gradient shape {:?}", dy.shape())));
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut dx = vec![T::zero(); dy.data().len()];
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
            for s in 0..n {
                let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                let (a, b) = plane_dots(&dy.data()[r.clone()], &cache.xhat[r]);
                sum_dy += a;
                sum_dy_xhat += b;
            }
            self.grad_gamma[ch] = T::from_f64_lossy(sum_dy_xhat);
            self.grad_beta[ch] = T::from_f64_lossy(sum_dy);
            let scale = self.gamma[ch].to_f64_lossy() * cache.inv_std[ch];
            // train: scale * (g - mean(dy) - xhat * mean(dy * xhat))
            let (k, c0, c1) = if cache.train {
                (scale, scale * sum_dy / m, scale * sum_dy_xhat / m)
            } else {
                (scale, 0.0, 0.0)
            };
            let (k, c0, c1) = (T::from_f64_lossy(k), T::from_f64_lossy(c0), T::from_f64_lossy(c1));
            for s in 0..n {
                let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                for ((d, &g), &xh) in dx[r.clone()].iter_mut().zip(&dy.data()[r.clone()]).zip(&cache.xhat[r]) {
                    *d = k * g - c0 - xh * c1;
                }
            }
        }
        Tensor::from_vec(cache.shape, dx)
    }
}

/// Sums in chunks of native precision, accumulated in f64.
fn plane_sum<T: Scalar>(v: &[T]) -> f64 {
    v.chunks(64)
        .map(|c| c.iter().fold(T::zero(), |a, &b| a + b).to_f64_lossy())
        .sum()
}

fn plane_sq_dev<T: Scalar>(v: &[T], mean: f64) -> f64 {
    let mt = T::from_f64_lossy(mean);
    v.chunks(64)
        .map(|c| c.iter().fold(T::zero(), |a, &b| a + (b - mt) * (b - mt)).to_f64_lossy())
        .sum()
}

fn plane_dots<T: Scalar>(g: &[T], xh: &[T]) -> (f64, f64) {
    g.chunks(64).zip(xh.chunks(64)).fold((0.0, 0.0), |(a, b), (gc, xc)| {
        let (s, p) = gc
            .iter()
            .zip(xc)
            .fold((T::zero(), T::zero()), |(s, p), (&g, &x)| (s + g, p + g * x));
        (a + s.to_f64_lossy(), b + p.to_f64_lossy())
    })
}

/// Max pooling with a square kernel and stride equal to the kernel.
/// Ties route the gradient to the first maximum in row-major order.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    argmax: Vec<usize>,
    in_shape: Option<[usize; 4]>,
}

impl MaxPool2d {
    pub fn new(kernel: usize) -> Self {
        Self {
            kernel,
            argmax: Vec::new(),
            in_shape: None,
        }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        let k = self.kernel;
        if h < k || w < k {
            return Err(Error::Shape(format!(
                "maxpool2d kernel {k} does not fit a {h}x{w} input"
            )));
        }
        let (oh, ow) = (h / k, w / k);
        let mut y = vec![T::zero(); n * c * oh * ow];
        self.argmax = vec![0; n * c * oh * ow];
        let data = x.data();
        let out = y.chunks_mut(ow).zip(self.argmax.chunks_mut(ow));
        for (row, (yr, ar)) in out.enumerate() {
            let (plane, oy) = (row / oh, row % oh);
            let base = plane * h * w + oy * k * w;
            for (ox, (yv, av)) in yr.iter_mut().zip(ar.iter_mut()).enumerate() {
                let mut best = base + ox * k;
                let mut bv = data[best];
                for dy in 0..k {
                    let start = base + dy * w + ox * k;
                    for (i, &v) in data[start..start + k].iter().enumerate() {
                        if v > bv {
                            bv = v;
                            best = start + i;
                        }
                    }
                }
                *av = best;
                *yv = bv;
            }
        }
        let y = Tensor::from_vec([n, c, oh, ow], y)?;
        self.in_shape = Some(x.shape());
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = *cached(&self.in_shape, "maxpool2d")?;
        if dy.data().len() != self.argmax.len() {
            return Err(Error::Shape(format!("maxpool2d gradient shape {:?}", dy.shape())));
        }
        let mut dx = Tensor::zeros(shape);
        for (&i, &g) in self.argmax.iter().zip(dy.data()) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }
}

/// Inverted dropout. The mask is drawn from the run RNG in training mode;
/// evaluation mode is the identity. A frozen layer reuses its last mask.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub rate: f64,
    pub frozen: bool,
    mask: Option<Vec<T>>,
    last_train: bool,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Self {
        Self {
            rate,
            frozen: false,
            mask: None,
            last_train: false,
        }
    }

    pub fn mask(&self) -> Option<&[T]> {
        self.mask.as_deref()
    }

    /// Replaces the mask and freezes it.
    pub fn set_mask(&mut self, mask: Vec<T>) {
        self.mask = Some(mask);
        self.frozen = true;
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Tensor<T> {
        let rng = match mode {
            Mode::Train(rng) if self.rate > 0.0 => rng,
            _ => {
                self.last_train = false;
                return x.clone();
            }
        };
        self.last_train = true;
        let len = x.data().len();
        let reuse = self.frozen && self.mask.as_ref().is_some_and(|m| m.len() == len);
        if !reuse {
            let keep = T::from_f64_lossy(1.0 / (1.0 - self.rate));
            let mask = (0..len)
                .map(|_| {
                    if rng.random::<f64>() < self.rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect();
            self.mask = Some(mask);
        }
        let mask = self.mask.as_ref().expect("mask");
        let data = x.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
        Tensor::from_vec(x.shape(), data).expect("same shape")
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.last_train {
            return Ok(dy.clone());
        }
        let mask = cached(&self.mask, "dropout")?;
        let data = dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
        Tensor::from_vec(dy.shape(), data)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    in_shape: Option<[usize; 4]>,
}

impl Flatten {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.in_shape = Some(x.shape());
        x.clone().reshape([x.batch(), x.item_len(), 1, 1])
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = *cached(&self.in_shape, "flatten")?;
        dy.clone().reshape(shape)
    }
}

/// Fully connected layer, `y = x W^T + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
            grad_weight: vec![T::zero(); in_features * out_features],
            grad_bias: vec![T::zero(); out_features],
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.item_len() != self.in_features {
            return Err(Error::Shape(format!(
                "linear expects {} features, got {}",
                self.in_features,
                x.item_len()
            )));
        }
        let n = x.batch();
        let mut y = Tensor::zeros([n, self.out_features, 1, 1]);
        for s in 0..n {
            y.item_mut(s).copy_from_slice(&self.bias);
        }
        gemm(
            n,
            self.in_features,
            self.out_features,
            x.data(),
            false,
            &self.weight,
            true,
            T::one(),
            y.data_mut(),
        );
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let x = cached(&self.input, "linear")?;
        let n = x.batch();
        if dy.shape() != [n, self.out_features, 1, 1] {
            return Err(Error::Shape(format!("linear gradient shape {:?}", dy.shape())));
        }
        gemm(
            self.out_features,
            n,
            self.in_features,
            dy.data(),
            true,
            x.data(),
            false,
            T::zero(),
            &mut self.grad_weight,
        );
        for (o, gb) in self.grad_bias.iter_mut().enumerate() {
            *gb = (0..n).map(|s| dy.item(s)[o]).sum();
        }
        if !need_input_grad {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            n,
            self.out_features,
            self.in_features,
            dy.data(),
            false,
            &self.weight,
            false,
            T::zero(),
            dx.data_mut(),
        );
        Ok(Some(dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(shape: [usize; 4], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_scalar_case() {
        let mut c = Conv2d::<f64>::new(1, 1, 1, 1);
        c.weight = vec![2.0];
        let y = c.forward(&t([1, 1, 1, 1], vec![3.0])).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn averaging_kernel_preserves_constant() {
        let mut c = Conv2d::<f64>::new(1, 1, 2, 2);
        c.weight = vec![0.25; 4];
        let y = c.forward(&t([1, 1, 4, 5], vec![7.0; 20])).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 4]);
        assert!(y.data().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut c = Conv2d::<f64>::new(2, 3, 2, 3);
        c.weight = (0..36).map(|i| (i as f64 * 0.7).sin()).collect();
        c.bias = vec![0.1, -0.2, 0.3];
        let x = t([2, 2, 4, 5], (0..80).map(|i| (i as f64 * 0.31).cos()).collect());
        let y = c.forward(&x).unwrap();
        assert_eq!(y.shape(), [2, 3, 3, 3]);
        for s in 0..2 {
            for o in 0..3 {
                for oy in 0..3 {
                    for ox in 0..3 {
                        let mut acc = c.bias[o];
                        for ci in 0..2 {
                            for i in 0..2 {
                                for j in 0..3 {
                                    acc += c.weight[((o * 2 + ci) * 2 + i) * 3 + j]
                                        * x.data()[((s * 2 + ci) * 4 + oy + i) * 5 + ox + j];
                                }
                            }
                        }
                        let got = y.data()[((s * 3 + o) * 3 + oy) * 3 + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_batches_across_chunks_match_single_items() {
        let mut c = Conv2d::<f64>::new(64, 4, 3, 3);
        c.weight = (0..c.weight.len()).map(|i| (i as f64 * 0.37).sin() * 0.1).collect();
        c.bias = vec![0.5, -0.1, 0.0, 0.2];
        let (n, item) = (9, 64 * 40 * 30);
        assert!(c.chunk(38 * 28) < n);
        let x = t(
            [n, 64, 40, 30],
            (0..n * item).map(|i| (i as f64 * 0.013).cos()).collect(),
        );
        let dy = t(
            [n, 4, 38, 28],
            (0..n * 4 * 38 * 28).map(|i| (i as f64 * 0.029).sin()).collect(),
        );
        let y = c.forward(&x).unwrap();
        let dx = c.backward(&dy, true).unwrap().unwrap();
        let (gw, gb) = (c.grad_weight.clone(), c.grad_bias.clone());
        let (mut sw, mut sb) = (vec![0.0; gw.len()], vec![0.0; 4]);
        for s in 0..n {
            let xs = t([1, 64, 40, 30], x.item(s).to_vec());
            let ys = c.forward(&xs).unwrap();
            assert!(ys.data().iter().zip(y.item(s)).all(|(a, b)| (a - b).abs() < 1e-9));
            let dxs = c
                .backward(&t([1, 4, 38, 28], dy.item(s).to_vec()), true)
                .unwrap()
                .unwrap();
            assert!(dxs.data().iter().zip(dx.item(s)).all(|(a, b)| (a - b).abs() < 1e-9));
            sw.iter_mut().zip(&c.grad_weight).for_each(|(a, b)| *a += b);
            sb.iter_mut().zip(&c.grad_bias).for_each(|(a, b)| *a += b);
        }
        assert!(sw.iter().zip(&gw).all(|(a, b)| (a - b).abs() < 1e-8));
        assert!(sb.iter().zip(&gb).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut c = Conv2d::<f64>::new(2, 1, 2, 2);
        assert!(c.forward(&t([1, 1, 3, 3], vec![0.0; 9])).is_err());
    }

    #[test]
    fn maxpool_cases() {
        let mut p = MaxPool2d::new(2);
        let y = p.forward(&t([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0]);

        let y = p.forward(&Tensor::<f64>::zeros([1, 1, 81, 50])).unwrap();
        assert_eq!(y.shape(), [1, 1, 40, 25]);

        p.forward(&t([1, 1, 2, 2], vec![5.0; 4])).unwrap();
        let dx = p.backward(&t([1, 1, 1, 1], vec![1.5])).unwrap();
        assert_eq!(dx.data(), &[1.5, 0.0, 0.0, 0.0]);

        assert!(p.forward(&t([1, 1, 1, 4], vec![0.0; 4])).is_err());
    }

    #[test]
    fn batchnorm_training_statistics() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let data: Vec<f64> = (0..48).map(|i| (i as f64 * 1.3).sin() * 4.0 + 2.0).collect();
        let y = bn.forward(&t([3, 2, 2, 4], data), true).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|s| y.data()[(s * 2 + ch) * 8..(s * 2 + ch + 1) * 8].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_zero_variance_and_batch_of_one() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let y = bn.forward(&t([2, 1, 1, 2], vec![3.0; 4]), true).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(bn.forward(&t([1, 1, 1, 2], vec![1.0, 2.0]), true).is_err());
        assert!(bn.forward(&t([1, 1, 1, 2], vec![1.0, 2.0]), false).is_ok());
    }

    #[test]
    fn running_mean_converges_geometrically() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = t([2, 1, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]);
        let batch_mean = 4.0;
        for i in 1..=100 {
            bn.forward(&x, true).unwrap();
            // rm_i = mean * (1 - 0.9^i)
            let oracle = batch_mean * (1.0 - 0.9f64.powi(i));
            assert!((bn.running_mean[0] - oracle).abs() < 1e-9);
        }
        assert!((bn.running_mean[0] - batch_mean).abs() < 1e-3);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = t([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let mut d = Dropout::<f64>::new(0.5);
        assert_eq!(d.forward(&x, &mut Mode::Eval), x);
        let mut z = Dropout::<f64>::new(0.0);
        assert_eq!(z.forward(&x, &mut Mode::Train(&mut rng)), x);
    }

    #[test]
    fn dropout_survivor_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let x = Tensor::<f32>::from_vec([1, n, 1, 1], vec![1.0; n]).unwrap();
        let mut d = Dropout::<f32>::new(0.5);
        let y = d.forward(&x, &mut Mode::Train(&mut rng));
        let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((kept - 0.5).abs() < 0.01, "{kept}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn linear_forward() {
        let mut l = Linear::<f64>::new(3, 2);
        l.weight = vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0];
        l.bias = vec![0.5, -0.5];
        let y = l
            .forward(&t([2, 3, 1, 1], vec![1.0, 1.0, 1.0, 2.0, 0.0, -1.0]))
            .unwrap();
        assert_eq!(y.data(), &[6.5, -0.5, -0.5, -3.5]);
    }
}
