use crate::{Error, Result};
use std::fmt;
use std::str::FromStr;

/// One layer of a model description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
    },
    Relu,
    BatchNorm2d {
        channels: usize,
    },
    MaxPool2d {
        kernel: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv2d { in_ch, out_ch, kh, kw } => write!(f, "conv2d {in_ch} {out_ch} {kh} {kw}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::BatchNorm2d { channels } => write!(f, "batchnorm2d {channels}"),
            LayerSpec::MaxPool2d { kernel } => write!(f, "maxpool2d {kernel}"),
            LayerSpec::Dropout { rate } => write!(f, "dropout {rate}"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => write!(f, "linear {in_features} {out_features}"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Shape(format!("bad layer descriptor {s:?}"));
        let mut parts = s.split_whitespace();
        let name = parts.next().ok_or_else(bad)?;
        let args: Vec<&str> = parts.collect();
        let n = |i: usize| -> Result<usize> { args.get(i).and_then(|a| a.parse().ok()).ok_or_else(bad) };
        let arity = match name {
            "conv2d" => 4,
            "batchnorm2d" | "maxpool2d" | "dropout" => 1,
            "linear" => 2,
            _ => 0,
        };
        if args.len() != arity {
            return Err(bad());
        }
        Ok(match name {
            "conv2d" => LayerSpec::Conv2d {
                in_ch: n(0)?,
                out_ch: n(1)?,
                kh: n(2)?,
                kw: n(3)?,
            },
            "relu" => LayerSpec::Relu,
            "batchnorm2d" => LayerSpec::BatchNorm2d { channels: n(0)? },
            "maxpool2d" => LayerSpec::MaxPool2d { kernel: n(0)? },
            "dropout" => LayerSpec::Dropout {
                rate: args[0].parse().map_err(|_| bad())?,
            },
            "flatten" => LayerSpec::Flatten,
            "linear" => LayerSpec::Linear {
                in_features: n(0)?,
                out_features: n(1)?,
            },
            "softmax" => LayerSpec::Softmax,
            _ => return Err(bad()),
        })
    }
}

impl LayerSpec {
    /// Output shape `[c, h, w]` for an input item of shape `[c, h, w]`.
    pub fn output_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        let err = |msg: String| Err(Error::Shape(format!("{self}: {msg}")));
        match *self {
            LayerSpec::Conv2d { in_ch, out_ch, kh, kw } => {
                if c != in_ch {
                    return err(format!("input has {c} channels"));
                }
                if kh == 0 || kw == 0 || out_ch == 0 {
                    return err("zero-sized kernel or channel count".into());
                }
                if h < kh || w < kw {
                    return err(format!("input {h}x{w} smaller than kernel"));
                }
                Ok([out_ch, h - kh + 1, w - kw + 1])
            }
            LayerSpec::BatchNorm2d { channels } => {
                if c != channels {
                    return err(format!("input has {c} channels"));
                }
                Ok([c, h, w])
            }
            LayerSpec::MaxPool2d { kernel } => {
                if kernel == 0 || h < kernel || w < kernel {
                    return err(format!("input {h}x{w} too small to pool"));
                }
                Ok([c, h / kernel, w / kernel])
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return err("rate must be in [0, 1)".into());
                }
                Ok([c, h, w])
            }
            LayerSpec::Flatten => Ok([c * h * w, 1, 1]),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if c * h * w != in_features || h != 1 || w != 1 {
                    return err(format!("input {c}x{h}x{w} is not {in_features} flat features"));
                }
                Ok([out_features, 1, 1])
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok([c, h, w]),
        }
    }
}

/// A network of one or more convolutional branches, each fed a `1 x K x B`
/// map and ending in `flatten`, whose outputs are concatenated into a
/// fully connected head that ends in `softmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub branches: Vec<Vec<LayerSpec>>,
    pub head: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(
        input_height: usize,
        input_width: usize,
        branches: Vec<Vec<LayerSpec>>,
        head: Vec<LayerSpec>,
    ) -> Result<Self> {
        let spec = Self {
            input_height,
            input_width,
            branches,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Flattened output size of each branch.
    pub fn branch_features(&self) -> Result<Vec<usize>> {
        self.branches
            .iter()
            .enumerate()
            .map(|(i, layers)| {
                let mut shape = [1, self.input_height, self.input_width];
                for l in layers {
                    if *l == LayerSpec::Softmax {
                        return Err(Error::Shape(format!(
                            "branch {i}: softmax is only allowed at the output"
                        )));
                    }
                    shape = l.output_shape(shape)?;
                }
                if layers.last() != Some(&LayerSpec::Flatten) {
                    return Err(Error::Shape(format!("branch {i} must end with flatten")));
                }
                Ok(shape[0])
            })
            .collect()
    }

    /// Checks shape compatibility of every adjacent pair and that exactly
    /// one softmax sits at the output.
    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::Shape("model needs at least one branch".into()));
        }
        let features: usize = self.branch_features()?.iter().sum();
        let softmaxes = self.head.iter().filter(|l| **l == LayerSpec::Softmax).count();
        if softmaxes != 1 || self.head.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::Shape(
                "model must have exactly one softmax, at the output".into(),
            ));
        }
        let mut shape = [features, 1, 1];
        for l in &self.head {
            if matches!(
                l,
                LayerSpec::Conv2d { .. } | LayerSpec::MaxPool2d { .. } | LayerSpec::BatchNorm2d { .. }
            ) {
                return Err(Error::Shape(format!("{l} is not allowed in the fully connected head")));
            }
            shape = l.output_shape(shape)?;
        }
        Ok(())
    }

    /// Number of output classes.
    pub fn n_outputs(&self) -> usize {
        self.head
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Linear { out_features, .. } => Some(*out_features),
                _ => None,
            })
            .unwrap_or_else(|| self.branch_features().map(|f| f.iter().sum()).unwrap_or(0))
    }

    /// Serializes to descriptor lines: `net K B n`, then `branch L` and
    /// its L layers per branch, then `head L` and its layers.
    pub fn descriptors(&self) -> Vec<String> {
        let mut out = vec![format!(
            "net {} {} {}",
            self.input_height,
            self.input_width,
            self.branches.len()
        )];
        for b in &self.branches {
            out.push(format!("branch {}", b.len()));
            out.extend(b.iter().map(|l| l.to_string()));
        }
        out.push(format!("head {}", self.head.len()));
        out.extend(self.head.iter().map(|l| l.to_string()));
        out
    }

    pub fn from_descriptors<S: AsRef<str>>(lines: &[S]) -> Result<Self> {
        let mut it = lines.iter().map(|s| s.as_ref());
        let bad = |what: &str| Error::Shape(format!("bad model descriptor list: {what}"));
        let header: Vec<&str> = it.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        let (k, b, n) = match header.as_slice() {
            ["net", k, b, n] => (
                k.parse().map_err(|_| bad("K"))?,
                b.parse().map_err(|_| bad("B"))?,
                n.parse::<usize>().map_err(|_| bad("branch count"))?,
            ),
            _ => return Err(bad("missing net header")),
        };
        let mut section = |tag: &str| -> Result<Vec<LayerSpec>> {
            let line = it.next().ok_or_else(|| bad("truncated"))?;
            let count = line
                .strip_prefix(tag)
                .and_then(|r| r.trim().parse::<usize>().ok())
                .ok_or_else(|| bad(&format!("expected {tag} section, got {line:?}")))?;
            (0..count)
                .map(|_| it.next().ok_or_else(|| bad("truncated"))?.parse())
                .collect()
        };
        let branches = (0..n).map(|_| section("branch")).collect::<Result<Vec<_>>>()?;
        let head = section("head")?;
        if it.next().is_some() {
            return Err(bad("trailing descriptors"));
        }
        Self::new(k, b, branches, head)
    }
}

/// Widths of the reference CNN.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub channels: usize,
    pub first_kernel: usize,
    pub second_kernel: usize,
    pub pool: usize,
    pub dropout: f64,
    /// Width of the fusion layer of the dual-input network.
    pub fusion: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            first_kernel: 2,
            second_kernel: 3,
            pool: 2,
            dropout: 0.5,
            fusion: 128,
        }
    }
}

impl CnnConfig {
    /// conv -> relu -> batchnorm -> pool, twice, then dropout and flatten.
    pub fn branch(&self) -> Vec<LayerSpec> {
        let c = self.channels;
        vec![
            LayerSpec::Conv2d {
                in_ch: 1,
                out_ch: c,
                kh: self.first_kernel,
                kw: self.first_kernel,
            },
            LayerSpec::Relu,
            LayerSpec::BatchNorm2d { channels: c },
            LayerSpec::MaxPool2d { kernel: self.pool },
            LayerSpec::Conv2d {
                in_ch: c,
                out_ch: c,
                kh: self.second_kernel,
                kw: self.second_kernel,
            },
            LayerSpec::Relu,
            LayerSpec::BatchNorm2d { channels: c },
            LayerSpec::MaxPool2d { kernel: self.pool },
            LayerSpec::Dropout { rate: self.dropout },
            LayerSpec::Flatten,
        ]
    }

    fn branch_features(&self, k: usize, b: usize) -> Result<usize> {
        let mut shape = [1, k, b];
        for l in self.branch() {
            shape = l.output_shape(shape)?;
        }
        Ok(shape[0])
    }
}

pub fn build_single_cnn(k: usize, b: usize) -> Result<ModelSpec> {
    build_single_cnn_with(k, b, &CnnConfig::default())
}

pub fn build_single_cnn_with(k: usize, b: usize, cfg: &CnnConfig) -> Result<ModelSpec> {
    if k < 8 || b < 8 {
        return Err(Error::Shape(format!(
            "input {k}x{b} too small for the CNN (need at least 8x8)"
        )));
    }
    let f = cfg.branch_features(k, b)?;
    ModelSpec::new(
        k,
        b,
        vec![cfg.branch()],
        vec![
            LayerSpec::Linear {
                in_features: f,
                out_features: 2,
            },
            LayerSpec::Softmax,
        ],
    )
}

/// Layout of the dual-input network. Parameters are filled by
/// [`crate::nn::build_dual_cnn`].
pub fn dual_cnn_spec(k: usize, b: usize, cfg: &CnnConfig) -> Result<ModelSpec> {
    if k < 8 || b < 8 {
        return Err(Error::Shape(format!(
            "input {k}x{b} too small for the CNN (need at least 8x8)"
        )));
    }
    let f = cfg.branch_features(k, b)?;
    ModelSpec::new(
        k,
        b,
        vec![cfg.branch(), cfg.branch()],
        vec![
            LayerSpec::Linear {
                in_features: 2 * f,
                out_features: cfg.fusion,
            },
            LayerSpec::Relu,
            LayerSpec::Linear {
                in_features: cfg.fusion,
                out_features: 2,
            },
            LayerSpec::Softmax,
        ],
    )
}
