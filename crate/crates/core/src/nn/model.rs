use super::layers::{BatchNorm2d, Conv2d, Dropout, Flatten, Layer, Linear, MaxPool2d, Mode, ParamRef, Relu};
use super::loss::{softmax, softmax_cross_entropy};
use super::spec::{CnnConfig, LayerSpec, ModelSpec};
use super::{ModelCheckpoint, Scalar, Tensor};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Runtime network built from a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    branches: Vec<Vec<Layer<T>>>,
    head: Vec<Layer<T>>,
    branch_features: Vec<usize>,
}

pub(crate) fn layer_from_spec<T: Scalar>(spec: &LayerSpec) -> Option<Layer<T>> {
    Some(match *spec {
        LayerSpec::Conv2d { in_ch, out_ch, kh, kw } => Layer::Conv2d(Conv2d::new(in_ch, out_ch, kh, kw)),
        LayerSpec::Relu => Layer::Relu(Relu::default()),
        LayerSpec::BatchNorm2d { channels } => Layer::BatchNorm2d(BatchNorm2d::new(channels)),
        LayerSpec::MaxPool2d { kernel } => Layer::MaxPool2d(MaxPool2d::new(kernel)),
        LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)),
        LayerSpec::Flatten => Layer::Flatten(Flatten::default()),
        LayerSpec::Linear {
            in_features,
            out_features,
        } => Layer::Linear(Linear::new(in_features, out_features)),
        LayerSpec::Softmax => return None,
    })
}

impl<T: Scalar> Model<T> {
    /// Builds the layers with zero weights, unit batch-norm scale.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let branch_features = spec.branch_features()?;
        let branches = spec
            .branches
            .iter()
            .map(|b| b.iter().filter_map(layer_from_spec).collect())
            .collect();
        let head = spec.head.iter().filter_map(layer_from_spec).collect();
        Ok(Self {
            spec,
            branches,
            head,
            branch_features,
        })
    }

    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut m = Self::new(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in m.layers_mut() {
            init_layer(layer, &mut rng);
        }
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn branch(&self, i: usize) -> &[Layer<T>] {
        &self.branches[i]
    }

    pub fn head(&self) -> &[Layer<T>] {
        &self.head
    }

    fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.branches.iter().flatten().chain(&self.head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.branches.iter_mut().flatten().chain(self.head.iter_mut())
    }

    /// Parameter tensors in declaration order.
    pub fn params(&self) -> Vec<&[T]> {
        self.layers().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_, T>> {
        self.layers_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Batch-norm running statistics in declaration order.
    pub fn buffers(&self) -> Vec<&[T]> {
        self.layers().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn dropouts_mut(&mut self) -> impl Iterator<Item = &mut Dropout<T>> {
        self.layers_mut().filter_map(|l| match l {
            Layer::Dropout(d) => Some(d),
            _ => None,
        })
    }

    /// Makes every dropout layer reuse its current mask in later training
    /// passes.
    pub fn freeze_dropout(&mut self) {
        self.dropouts_mut().for_each(|d| d.frozen = true);
    }

    fn check_inputs(&self, inputs: &[Tensor<T>]) -> Result<usize> {
        if inputs.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "model has {} branches, got {} inputs",
                self.branches.len(),
                inputs.len()
            )));
        }
        let n = inputs[0].batch();
        for x in inputs {
            let want = [n, 1, self.spec.input_height, self.spec.input_width];
            if x.shape() != want {
                return Err(Error::Shape(format!("input {:?}, expected {want:?}", x.shape())));
            }
        }
        Ok(n)
    }

    /// Returns the logits, shape `[n, classes, 1, 1]`.
    pub fn forward(&mut self, inputs: &[Tensor<T>], mode: &mut Mode<'_>) -> Result<Tensor<T>> {
        let n = self.check_inputs(inputs)?;
        let total: usize = self.branch_features.iter().sum();
        let mut fused = Tensor::zeros([n, total, 1, 1]);
        let mut offset = 0;
        for (b, layers) in self.branches.iter_mut().enumerate() {
            let mut x = inputs[b].clone();
            for l in layers.iter_mut() {
                x = l.forward(&x, mode)?;
            }
            let f = self.branch_features[b];
            for s in 0..n {
                fused.item_mut(s)[offset..offset + f].copy_from_slice(x.item(s));
            }
            offset += f;
        }
        let mut x = fused;
        for l in self.head.iter_mut() {
            x = l.forward(&x, mode)?;
        }
        Ok(x)
    }

    /// Back-propagates a logit gradient from the last `forward`, leaving
    /// parameter gradients in the layers.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<()> {
        let mut g = dlogits.clone();
        for l in self.head.iter_mut().rev() {
            g = l.backward(&g, true)?.expect("input gradient requested");
        }
        let n = g.batch();
        let mut offset = 0;
        for (b, layers) in self.branches.iter_mut().enumerate() {
            let f = self.branch_features[b];
            let mut part = Tensor::zeros([n, f, 1, 1]);
            for s in 0..n {
                part.item_mut(s).copy_from_slice(&g.item(s)[offset..offset + f]);
            }
            offset += f;
            let last = layers.len();
            for (i, l) in layers.iter_mut().enumerate().rev() {
                let need = i > 0;
                match l.backward(&part, need)? {
                    Some(dx) => part = dx,
                    None => debug_assert!(i == 0 || i == last),
                }
            }
        }
        Ok(())
    }

    /// Softmax probabilities in evaluation mode.
    pub fn predict(&mut self, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let logits = self.forward(inputs, &mut Mode::Eval)?;
        Ok(softmax(&logits))
    }

    /// Mean cross-entropy of a batch without touching gradients.
    pub fn loss(&mut self, inputs: &[Tensor<T>], targets: &Tensor<T>, mode: &mut Mode<'_>) -> Result<f64> {
        let logits = self.forward(inputs, mode)?;
        Ok(softmax_cross_entropy(&logits, targets)?.loss)
    }

    /// Forward and backward pass in training mode, returning the loss.
    pub fn compute_gradients(&mut self, inputs: &[Tensor<T>], targets: &Tensor<T>, mode: &mut Mode<'_>) -> Result<f64> {
        let logits = self.forward(inputs, mode)?;
        let out = softmax_cross_entropy(&logits, targets)?;
        self.backward(&out.grad)?;
        Ok(out.loss)
    }

    /// Applies `w <- w - lr * g` to every parameter.
    pub fn sgd_step(&mut self, lr: f64) {
        for p in self.params_mut() {
            sgd_update(p.value, p.grad, lr);
        }
    }

    /// One SGD step on a mini-batch; returns the pre-update loss.
    pub fn train_batch(
        &mut self,
        inputs: &[Tensor<T>],
        targets: &Tensor<T>,
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let loss = self.compute_gradients(inputs, targets, &mut Mode::Train(rng))?;
        self.sgd_step(lr);
        Ok(loss)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            branches: self
                .branches
                .iter()
                .map(|b| b.iter().map(|l| l.cast()).collect())
                .collect(),
            head: self.head.iter().map(|l| l.cast()).collect(),
            branch_features: self.branch_features.clone(),
        }
    }

    /// Restores a model from a checkpoint's spec, parameters and running
    /// statistics.
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let mut m = Self::new(ckpt.spec.clone())?;
        m.load_state(&ckpt.params, &ckpt.buffers)?;
        Ok(m)
    }

    pub fn load_state(&mut self, params: &[Vec<f32>], buffers: &[Vec<f32>]) -> Result<()> {
        let mut dst = self.params_mut();
        if dst.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors for a model with {}",
                params.len(),
                dst.len()
            )));
        }
        for (i, (d, s)) in dst.iter_mut().zip(params).enumerate() {
            if d.value.len() != s.len() {
                return Err(Error::Shape(format!(
                    "parameter tensor {i} has {} values, expected {}",
                    s.len(),
                    d.value.len()
                )));
            }
            for (a, &b) in d.value.iter_mut().zip(s) {
                *a = T::from_f64_lossy(b as f64);
            }
        }
        let mut dst = self.buffers_mut();
        if dst.len() != buffers.len() {
            return Err(Error::Shape(format!(
                "{} buffers for a model with {}",
                buffers.len(),
                dst.len()
            )));
        }
        for (d, s) in dst.iter_mut().zip(buffers) {
            if d.len() != s.len() {
                return Err(Error::Shape("running statistics size mismatch".into()));
            }
            for (a, &b) in d.iter_mut().zip(s) {
                *a = T::from_f64_lossy(b as f64);
            }
        }
        Ok(())
    }

    pub fn state(&self) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
        let conv = |v: &&[T]| v.iter().map(|x| x.to_f64_lossy() as f32).collect();
        (
            self.params().iter().map(conv).collect(),
            self.buffers().iter().map(conv).collect(),
        )
    }
}

fn init_layer<T: Scalar>(layer: &mut Layer<T>, rng: &mut ChaCha8Rng) {
    let mut fill = |w: &mut Vec<T>, fan_in: usize| {
        let bound = (6.0 / fan_in as f64).sqrt();
        for v in w.iter_mut() {
            *v = T::from_f64_lossy(rng.random_range(-bound..bound));
        }
    };
    match layer {
        Layer::Conv2d(c) => {
            let fan_in = c.fan_in();
            fill(&mut c.weight, fan_in);
            c.bias.iter_mut().for_each(|b| *b = T::zero());
        }
        Layer::Linear(l) => {
            let fan_in = l.in_features;
            fill(&mut l.weight, fan_in);
            l.bias.iter_mut().for_each(|b| *b = T::zero());
        }
        _ => {}
    }
}

/// Vanilla SGD: `w <- w - lr * g`.
pub fn sgd_update<T: Scalar>(params: &mut [T], grads: &[T], lr: f64) {
    let lr = T::from_f64_lossy(lr);
    for (w, &g) in params.iter_mut().zip(grads) {
        *w -= lr * g;
    }
}

/// Dual-input network whose branches start from the trained convolution
/// and batch-norm parameters (and running statistics) of two single-input
/// networks. The fusion layers are freshly initialized from `seed`.
pub fn build_dual_cnn(a: &ModelCheckpoint, b: &ModelCheckpoint, cfg: &CnnConfig, seed: u64) -> Result<Model<f32>> {
    for (name, c) in [("first", a), ("second", b)] {
        if c.spec.n_branches() != 1 {
            return Err(Error::Shape(format!("{name} checkpoint is not a single-input network")));
        }
    }
    if (a.spec.input_height, a.spec.input_width) != (b.spec.input_height, b.spec.input_width) {
        return Err(Error::Shape(format!(
            "branch inputs differ: {}x{} vs {}x{}",
            a.spec.input_height, a.spec.input_width, b.spec.input_height, b.spec.input_width
        )));
    }
    let fa = a.spec.branch_features()?[0];
    let fb = b.spec.branch_features()?[0];
    let spec = ModelSpec::new(
        a.spec.input_height,
        a.spec.input_width,
        vec![a.spec.branches[0].clone(), b.spec.branches[0].clone()],
        vec![
            LayerSpec::Linear {
                in_features: fa + fb,
                out_features: cfg.fusion,
            },
            LayerSpec::Relu,
            LayerSpec::Linear {
                in_features: cfg.fusion,
                out_features: 2,
            },
            LayerSpec::Softmax,
        ],
    )?;
    let mut dual = Model::<f32>::init(spec, seed)?;
    for (i, src) in [a, b].into_iter().enumerate() {
        let single = Model::<f32>::from_checkpoint(src)?;
        dual.branches[i] = single.branches[0].clone();
    }
    Ok(dual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_single_cnn_with, one_hot};

    fn toy_cfg() -> CnnConfig {
        CnnConfig {
            channels: 4,
            fusion: 8,
            ..CnnConfig::default()
        }
    }

    fn input(n: usize, k: usize, b: usize, phase: f32) -> Tensor<f32> {
        Tensor::from_vec(
            [n, 1, k, b],
            (0..n * k * b).map(|i| (i as f32 * 0.37 + phase).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_forward_rows_sum_to_one() {
        let mut m = Model::<f32>::init(build_single_cnn_with(16, 12, &toy_cfg()).unwrap(), 1).unwrap();
        let p = m.predict(&[input(2, 16, 12, 0.0)]).unwrap();
        assert_eq!(p.shape(), [2, 2, 1, 1]);
        for s in 0..2 {
            assert!((p.item(s).iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = build_single_cnn_with(16, 12, &toy_cfg()).unwrap();
        let a = Model::<f32>::init(spec.clone(), 3).unwrap();
        let b = Model::<f32>::init(spec.clone(), 3).unwrap();
        let c = Model::<f32>::init(spec, 4).unwrap();
        assert_eq!(a.state(), b.state());
        assert_ne!(a.state(), c.state());
        let bound = (6.0f32 / 4.0).sqrt();
        assert!(a.params()[0].iter().all(|w| w.abs() <= bound));
        assert!(a.params()[1].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn sgd_update_closed_form() {
        let mut w = [1.0f64];
        sgd_update(&mut w, &[0.5], 0.01);
        assert!((w[0] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn one_step_decreases_logistic_loss() {
        let spec = ModelSpec::new(
            1,
            2,
            vec![vec![LayerSpec::Flatten]],
            vec![
                LayerSpec::Linear {
                    in_features: 2,
                    out_features: 2,
                },
                LayerSpec::Softmax,
            ],
        )
        .unwrap();
        let mut m = Model::<f64>::init(spec, 0).unwrap();
        let x = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 0.5, -1.0, -0.3]).unwrap();
        let y = one_hot(&[0, 1], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let before = m.train_batch(std::slice::from_ref(&x), &y, 0.01, &mut rng).unwrap();
        let after = m.loss(&[x], &y, &mut Mode::Eval).unwrap();
        assert!(after < before);
    }

    #[test]
    fn dual_copies_branch_parameters() {
        let cfg = toy_cfg();
        let spec = build_single_cnn_with(16, 12, &cfg).unwrap();
        let mut sa = Model::<f32>::init(spec.clone(), 1).unwrap();
        let sb = Model::<f32>::init(spec, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sa.forward(&[input(3, 16, 12, 0.2)], &mut Mode::Train(&mut rng))
            .unwrap();
        let ca = ModelCheckpoint::from_model(&sa, 0.01, 1, 1, Vec::new());
        let cb = ModelCheckpoint::from_model(&sb, 0.01, 1, 2, Vec::new());
        let mut dual = build_dual_cnn(&ca, &cb, &cfg, 9).unwrap();
        let pa = sa.params();
        let pd = dual.params();
        assert_eq!(pd[0], pa[0]);
        assert_eq!(pd[2], pa[2]);
        assert_eq!(dual.buffers()[0], sa.buffers()[0]);
        assert_eq!(pd[pa.len() - 2], sb.params()[0]);
        assert_eq!(
            dual.spec().head[0],
            LayerSpec::Linear {
                in_features: 2 * 4 * 2,
                out_features: 8
            }
        );
        let p = dual.predict(&[input(2, 16, 12, 0.0), input(2, 16, 12, 1.0)]).unwrap();
        assert_eq!(p.shape(), [2, 2, 1, 1]);
        assert!((p.item(1).iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dual_rejects_mismatched_singles() {
        let cfg = toy_cfg();
        let a = Model::<f32>::init(build_single_cnn_with(16, 12, &cfg).unwrap(), 1).unwrap();
        let b = Model::<f32>::init(build_single_cnn_with(16, 14, &cfg).unwrap(), 1).unwrap();
        let ca = ModelCheckpoint::from_model(&a, 0.01, 0, 0, Vec::new());
        let cb = ModelCheckpoint::from_model(&b, 0.01, 0, 0, Vec::new());
        assert!(build_dual_cnn(&ca, &cb, &cfg, 0).is_err());
    }

    #[test]
    fn wrong_input_count_or_shape() {
        let mut m = Model::<f32>::init(build_single_cnn_with(16, 12, &toy_cfg()).unwrap(), 1).unwrap();
        assert!(m.predict(&[]).is_err());
        assert!(m.predict(&[input(1, 16, 13, 0.0)]).is_err());
    }
}
