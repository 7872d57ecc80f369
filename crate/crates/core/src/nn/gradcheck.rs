//! Central finite-difference checks of the analytic gradients.

use super::layers::{Layer, Mode};
use super::model::layer_from_spec;
use super::spec::{build_single_cnn_with, dual_cnn_spec, CnnConfig, LayerSpec, ModelSpec};
use super::{one_hot, Model, Tensor};
use crate::{Error, Result};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Disagreement above which an entry is probed for a kink.
const KINK_PROBE: f64 = 1e-3;

/// Which parameter entries to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// Up to `per_tensor` entries of every tensor, drawn with `seed`.
    Sample {
        per_tensor: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// (tensor, entry, analytic, numeric) at the largest error.
    pub worst: Option<(usize, usize, f64, f64)>,
    /// Entries whose perturbation crossed a ReLU or max-pool switch; these
    /// are compared against the matching one-sided difference.
    pub kinks: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            checked: 0,
            worst: None,
            kinks: 0,
        }
    }

    fn record(&mut self, tensor: usize, entry: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = Some((tensor, entry, analytic, numeric));
        }
    }
}

fn entries(len: usize, tensor: usize, coverage: Coverage) -> Vec<usize> {
    match coverage {
        Coverage::All => (0..len).collect(),
        Coverage::Sample { per_tensor, seed } if per_tensor < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (tensor as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut idx = sample(&mut rng, len, per_tensor).into_vec();
            idx.sort_unstable();
            idx
        }
        Coverage::Sample { .. } => (0..len).collect(),
    }
}

fn finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Training(format!(
            "non-finite loss during gradient check ({what})"
        )))
    }
}

/// Compares the analytic gradient of the mean cross-entropy with respect
/// to the model parameters against central differences.
///
/// When the central difference disagrees and the two one-sided slopes
/// also disagree with each other, the loss is not differentiable inside
/// `[w - eps, w + eps]`; the entry is then compared with the closer
/// one-sided slope and counted in `kinks`.
///
/// Batch normalization runs in training mode on the fixed batch. Dropout
/// masks are drawn once from `seed` and then frozen.
pub fn finite_difference_check(
    model: &mut Model<f64>,
    inputs: &[Tensor<f64>],
    targets: &Tensor<f64>,
    eps: f64,
    coverage: Coverage,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.forward(inputs, &mut Mode::Train(&mut rng))?;
    model.freeze_dropout();
    finite(
        model.compute_gradients(inputs, targets, &mut Mode::Train(&mut rng))?,
        "analytic pass",
    )?;
    let grads: Vec<Vec<f64>> = model.params_mut().into_iter().map(|p| p.grad.clone()).collect();

    let mut report = GradCheckReport::new();
    for (t, g) in grads.iter().enumerate() {
        for i in entries(g.len(), t, coverage) {
            let orig = model.params()[t][i];
            model.params_mut()[t].value[i] = orig + eps;
            let lp = finite(model.loss(inputs, targets, &mut Mode::Train(&mut rng))?, "perturbed +")?;
            model.params_mut()[t].value[i] = orig - eps;
            let lm = finite(model.loss(inputs, targets, &mut Mode::Train(&mut rng))?, "perturbed -")?;
            model.params_mut()[t].value[i] = orig;
            let central = (lp - lm) / (2.0 * eps);
            if relative_error(g[i], central) > KINK_PROBE {
                let l0 = model.loss(inputs, targets, &mut Mode::Train(&mut rng))?;
                let (fwd, bwd) = ((lp - l0) / eps, (l0 - lm) / eps);
                if relative_error(fwd, bwd) > KINK_PROBE {
                    report.kinks += 1;
                    let side = if relative_error(g[i], fwd) < relative_error(g[i], bwd) {
                        fwd
                    } else {
                        bwd
                    };
                    report.record(t, i, g[i], side);
                    continue;
                }
            }
            report.record(t, i, g[i], central);
        }
    }
    Ok(report)
}

/// Checks one layer in isolation with the loss `sum(y * r)` for a fixed
/// random `r`, covering both parameter and input gradients. Input
/// gradients are reported as tensor index `usize::MAX`.
pub fn layer_gradient_check(layer: &mut Layer<f64>, x: &Tensor<f64>, eps: f64, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = layer.forward(x, &mut Mode::Train(&mut rng))?;
    if let Layer::Dropout(d) = layer {
        d.frozen = true;
    }
    let r: Vec<f64> = (0..y.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dy = Tensor::from_vec(y.shape(), r.clone())?;
    let objective = |layer: &mut Layer<f64>, x: &Tensor<f64>, rng: &mut ChaCha8Rng| -> Result<f64> {
        let y = layer.forward(x, &mut Mode::Train(rng))?;
        finite(y.data().iter().zip(&r).map(|(a, b)| a * b).sum(), "layer objective")
    };
    objective(layer, x, &mut rng)?;
    let dx = layer.backward(&dy, true)?.expect("input gradient requested");
    let grads: Vec<Vec<f64>> = layer.params_mut().into_iter().map(|p| p.grad.clone()).collect();

    let mut report = GradCheckReport::new();
    for (t, g) in grads.iter().enumerate() {
        for (i, &gi) in g.iter().enumerate() {
            let orig = layer.params()[t][i];
            layer.params_mut()[t].value[i] = orig + eps;
            let lp = objective(layer, x, &mut rng)?;
            layer.params_mut()[t].value[i] = orig - eps;
            let lm = objective(layer, x, &mut rng)?;
            layer.params_mut()[t].value[i] = orig;
            report.record(t, i, gi, (lp - lm) / (2.0 * eps));
        }
    }
    let mut xp = x.clone();
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + eps;
        let lp = objective(layer, &xp, &mut rng)?;
        xp.data_mut()[i] = orig - eps;
        let lm = objective(layer, &xp, &mut rng)?;
        xp.data_mut()[i] = orig;
        report.record(usize::MAX, i, dx.data()[i], (lp - lm) / (2.0 * eps));
    }
    Ok(report)
}

/// Settings of the standard gradient-check suite.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    pub eps: f64,
    /// Entries per tensor checked on the full-width networks.
    pub samples_per_tensor: usize,
    /// Channel width of the reduced networks checked on every parameter.
    pub reduced_channels: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 12,
            batch: 4,
            eps: 1e-6,
            samples_per_tensor: 64,
            reduced_channels: 8,
            seed: 0,
        }
    }
}

/// Named result of one suite case.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub report: GradCheckReport,
}

fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn check_model(
    spec: ModelSpec,
    cfg: &GradCheckConfig,
    coverage: Coverage,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport> {
    let mut model = Model::<f64>::init(spec, rng.random())?;
    let n = cfg.batch;
    let inputs: Vec<Tensor<f64>> = (0..model.spec().n_branches())
        .map(|_| random_tensor([n, 1, cfg.height, cfg.width], rng))
        .collect();
    let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
    finite_difference_check(
        &mut model,
        &inputs,
        &one_hot(&classes, 2),
        cfg.eps,
        coverage,
        rng.random(),
    )
}

/// Every layer type on its own, then the single- and dual-input networks:
/// all parameters at reduced width, sampled parameters at full width.
pub fn gradcheck_suite(cfg: &GradCheckConfig) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let mut push = |name: &str, report: GradCheckReport| {
        log::info!(
            "gradcheck {name}: max relative error {:.3e} over {} entries",
            report.max_rel_error,
            report.checked
        );
        out.push(SuiteResult {
            name: name.to_string(),
            report,
        })
    };

    let layers: Vec<(&str, LayerSpec, [usize; 4])> = vec![
        (
            "conv2d",
            LayerSpec::Conv2d {
                in_ch: 1,
                out_ch: 1,
                kh: 2,
                kw: 2,
            },
            [1, 1, 6, 5],
        ),
        (
            "conv2d multi-channel",
            LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 3,
                kh: 3,
                kw: 2,
            },
            [2, 2, 6, 5],
        ),
        ("relu", LayerSpec::Relu, [2, 2, 4, 3]),
        ("batchnorm2d", LayerSpec::BatchNorm2d { channels: 3 }, [4, 3, 3, 2]),
        ("maxpool2d", LayerSpec::MaxPool2d { kernel: 2 }, [2, 2, 5, 4]),
        ("dropout", LayerSpec::Dropout { rate: 0.5 }, [2, 3, 2, 2]),
        ("flatten", LayerSpec::Flatten, [2, 2, 3, 2]),
        (
            "linear",
            LayerSpec::Linear {
                in_features: 6,
                out_features: 4,
            },
            [3, 6, 1, 1],
        ),
    ];
    for (name, spec, shape) in layers {
        let mut layer = single_layer(spec, &mut rng);
        let x = random_tensor(shape, &mut rng);
        push(name, layer_gradient_check(&mut layer, &x, cfg.eps, rng.random())?);
    }

    let reduced = CnnConfig {
        channels: cfg.reduced_channels,
        fusion: 2 * cfg.reduced_channels,
        ..CnnConfig::default()
    };
    let full = CnnConfig::default();
    let sampled = Coverage::Sample {
        per_tensor: cfg.samples_per_tensor,
        seed: cfg.seed,
    };
    let (k, b) = (cfg.height, cfg.width);
    push(
        "single cnn, reduced width, all parameters",
        check_model(build_single_cnn_with(k, b, &reduced)?, cfg, Coverage::All, &mut rng)?,
    );
    push(
        "dual cnn, reduced width, all parameters",
        check_model(dual_cnn_spec(k, b, &reduced)?, cfg, Coverage::All, &mut rng)?,
    );
    push(
        "single cnn, full width, sampled",
        check_model(build_single_cnn_with(k, b, &full)?, cfg, sampled, &mut rng)?,
    );
    push(
        "dual cnn, full width, sampled",
        check_model(dual_cnn_spec(k, b, &full)?, cfg, sampled, &mut rng)?,
    );
    Ok(out)
}

fn single_layer(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Layer<f64> {
    let mut layer = layer_from_spec::<f64>(&spec).expect("not softmax");
    let mut randomize = |v: &mut Vec<f64>, lo: f64, hi: f64| v.iter_mut().for_each(|x| *x = rng.random_range(lo..hi));
    match &mut layer {
        Layer::Conv2d(c) => {
            randomize(&mut c.weight, -1.0, 1.0);
            randomize(&mut c.bias, -0.5, 0.5);
        }
        Layer::Linear(l) => {
            randomize(&mut l.weight, -1.0, 1.0);
            randomize(&mut l.bias, -0.5, 0.5);
        }
        Layer::BatchNorm2d(bn) => {
            randomize(&mut bn.gamma, 0.5, 1.5);
            randomize(&mut bn.beta, -0.5, 0.5);
        }
        _ => {}
    }
    layer
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn linear_only_model() {
        let spec = ModelSpec::new(
            2,
            3,
            vec![vec![LayerSpec::Flatten]],
            vec![
                LayerSpec::Linear {
                    in_features: 6,
                    out_features: 2,
                },
                LayerSpec::Softmax,
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Model::<f64>::init(spec, 1).unwrap();
        let x = random_tensor([5, 1, 2, 3], &mut rng);
        let r = finite_difference_check(&mut m, &[x], &one_hot(&[0, 1, 1, 0, 1], 2), 1e-5, Coverage::All, 0).unwrap();
        assert_eq!(r.checked, 14);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn conv_layer_small_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut layer = single_layer(
            LayerSpec::Conv2d {
                in_ch: 1,
                out_ch: 1,
                kh: 2,
                kw: 2,
            },
            &mut rng,
        );
        let x = random_tensor([1, 1, 6, 5], &mut rng);
        let r = layer_gradient_check(&mut layer, &x, 1e-3, 0).unwrap();
        assert_eq!(r.checked, 5 + 30);
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn dropped_unit_gets_no_gradient() {
        let spec = ModelSpec::new(
            1,
            3,
            vec![vec![LayerSpec::Flatten]],
            vec![
                LayerSpec::Linear {
                    in_features: 3,
                    out_features: 4,
                },
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Linear {
                    in_features: 4,
                    out_features: 2,
                },
                LayerSpec::Softmax,
            ],
        )
        .unwrap();
        let mut m = Model::<f64>::init(spec, 2).unwrap();
        for d in m.dropouts_mut() {
            d.set_mask((0..8).map(|i| if i % 4 == 1 { 0.0 } else { 2.0 }).collect());
        }
        let x = Tensor::from_vec([2, 1, 1, 3], vec![0.3, -0.2, 0.9, 1.0, 0.4, -0.6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.compute_gradients(&[x], &one_hot(&[0, 1], 2), &mut Mode::Train(&mut rng))
            .unwrap();
        let grads: Vec<Vec<f64>> = m.params_mut().into_iter().map(|p| p.grad.clone()).collect();
        // First linear layer: weight row 1 and bias entry 1 feed only unit 1.
        assert!(grads[0][3..6].iter().all(|&g| g == 0.0));
        assert_eq!(grads[1][1], 0.0);
        assert!(grads[0][0..3].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn reduced_suite_passes() {
        let cfg = GradCheckConfig {
            reduced_channels: 3,
            samples_per_tensor: 8,
            ..GradCheckConfig::default()
        };
        for r in gradcheck_suite(&cfg).unwrap() {
            assert!(r.report.max_rel_error < 1e-3, "{}: {:?}", r.name, r.report);
            assert!(r.report.checked > 0);
        }
    }
}
