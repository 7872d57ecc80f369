use super::report::{EvaluationReport, ScoreRow};
use super::train::{speaker_scores, train_model, Dataset};
use super::{make_folds, mix_seed, Fold};
use crate::corpus::CorpusManifest;
use crate::featurizer::{FeatureSegment, Representation};
use crate::nn::{build_dual_cnn, build_single_cnn_with, CnnConfig, Model, ModelCheckpoint, TrainConfig};
use crate::{Error, Result};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Classifier configuration: one representation or a pair fed to the
/// dual-input network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelConfig {
    Single(Representation),
    Dual(Representation, Representation),
}

impl ModelConfig {
    pub fn representations(&self) -> Vec<Representation> {
        match *self {
            ModelConfig::Single(r) => vec![r],
            ModelConfig::Dual(a, b) => vec![a, b],
        }
    }

    /// Table label, e.g. `IF` or `Magnitude-IF`.
    pub fn display_name(&self) -> String {
        self.representations()
            .iter()
            .map(|r| r.display_name())
            .collect::<Vec<_>>()
            .join("-")
    }

    fn tag(&self) -> u64 {
        let idx = |r: Representation| Representation::ALL.iter().position(|x| *x == r).expect("listed") as u64;
        match *self {
            ModelConfig::Single(r) => 1 + idx(r),
            ModelConfig::Dual(a, b) => 100 + 10 * idx(a) + idx(b),
        }
    }
}

/// `single:if` or `dual:mag+if`.
impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelConfig::Single(r) => write!(f, "single:{r}"),
            ModelConfig::Dual(a, b) => write!(f, "dual:{a}+{b}"),
        }
    }
}

/// Accepts `if`, `mag+if`, `single:if` and `dual:mag+if`.
impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let body = s
            .strip_prefix("single:")
            .or_else(|| s.strip_prefix("dual:"))
            .unwrap_or(s);
        let parts: Vec<&str> = body.split('+').collect();
        let cfg = match parts.as_slice() {
            [r] => ModelConfig::Single(r.parse()?),
            [a, b] => ModelConfig::Dual(a.parse()?, b.parse()?),
            _ => return Err(Error::Config(format!("bad model configuration {s:?}"))),
        };
        let kind_ok = matches!(
            (s.split_once(':').map(|(k, _)| k), &cfg),
            (None, _) | (Some("single"), ModelConfig::Single(_)) | (Some("dual"), ModelConfig::Dual(..))
        );
        if !kind_ok {
            return Err(Error::Config(format!("bad model configuration {s:?}")));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub folds: usize,
    pub n_seeds: usize,
    pub n_splits: usize,
    /// Base seed from which every split, model and shuffle seed derives.
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            n_seeds: 5,
            n_splits: 5,
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 || self.n_seeds == 0 || self.n_splits == 0 {
            return Err(Error::Config(format!(
                "cross-validation needs folds >= 2 and at least one seed and split: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn split_seed(&self, split: usize) -> u64 {
        mix_seed(&[self.seed, 0x5B11, split as u64])
    }
}

/// Everything a cross-validation run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub configs: Vec<ModelConfig>,
    pub cv: CvConfig,
    pub train: TrainConfig,
    pub cnn: CnnConfig,
    pub workers: usize,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    seed: usize,
    split: usize,
    fold: usize,
}

/// Runs every (seed, split, fold) job and assembles the report in that
/// canonical order, so the output does not depend on scheduling.
///
/// For each job the single-input networks are trained first (once per
/// representation), then each dual network is initialized from the two
/// trained singles and trained in turn. Test speakers are scored by soft
/// voting.
pub fn run_cross_validation(
    manifest: &CorpusManifest,
    features: &BTreeMap<Representation, Vec<FeatureSegment>>,
    run: &CrossValidation,
) -> Result<EvaluationReport> {
    run.cv.validate()?;
    run.train.validate()?;
    if run.configs.is_empty() {
        return Err(Error::Config("no model configurations requested".into()));
    }
    let mut reps: Vec<Representation> = run.configs.iter().flat_map(|c| c.representations()).collect();
    reps.sort();
    reps.dedup();
    let mut singles = BTreeMap::new();
    for &r in &reps {
        let segs = features
            .get(&r)
            .ok_or_else(|| Error::Config(format!("no extracted features for representation {r}")))?;
        singles.insert(r, Dataset::from_segments(&[segs])?);
    }
    let mut duals = BTreeMap::new();
    for c in &run.configs {
        if let ModelConfig::Dual(a, b) = *c {
            duals.insert((a, b), Dataset::from_segments(&[&features[&a], &features[&b]])?);
        }
    }

    let plans = (0..run.cv.n_splits)
        .map(|s| make_folds(manifest, run.cv.folds, run.cv.split_seed(s)))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<Job> = (0..run.cv.n_seeds)
        .flat_map(|seed| {
            (0..run.cv.n_splits).flat_map(move |split| (0..run.cv.folds).map(move |fold| Job { seed, split, fold }))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows: Vec<Vec<ScoreRow>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(job, &plans[job.split].folds[job.fold], &singles, &duals, run))
            .collect::<Result<_>>()
    })?;
    EvaluationReport::from_scores(rows.into_iter().flatten().collect())
}

fn run_job(
    job: &Job,
    fold: &Fold,
    singles: &BTreeMap<Representation, Dataset>,
    duals: &BTreeMap<(Representation, Representation), Dataset>,
    run: &CrossValidation,
) -> Result<Vec<ScoreRow>> {
    log::info!("seed {} split {} fold {}: training", job.seed, job.split, job.fold);
    let seed_for = |cfg: &ModelConfig, what: u64| {
        mix_seed(&[
            run.cv.seed,
            job.seed as u64,
            job.split as u64,
            job.fold as u64,
            cfg.tag(),
            what,
        ])
    };
    let fit = |cfg: &ModelConfig, model: Model<f32>, data: &Dataset| -> Result<ModelCheckpoint> {
        let train_cfg = TrainConfig {
            seed: seed_for(cfg, 2),
            ..run.train
        };
        let ckpt = train_model(&train_cfg, model, &data.subset(&fold.train), &data.subset(&fold.dev))?;
        log::info!(
            "seed {} split {} fold {}: {cfg} trained for {} epochs",
            job.seed,
            job.split,
            job.fold,
            ckpt.history.len()
        );
        Ok(ckpt)
    };

    let mut trained: BTreeMap<Representation, ModelCheckpoint> = BTreeMap::new();
    let single =
        |r: Representation, trained: &mut BTreeMap<Representation, ModelCheckpoint>| -> Result<ModelCheckpoint> {
            if let Some(c) = trained.get(&r) {
                return Ok(c.clone());
            }
            let data = &singles[&r];
            let cfg = ModelConfig::Single(r);
            let model = Model::init(
                build_single_cnn_with(data.height, data.width, &run.cnn)?,
                seed_for(&cfg, 1),
            )?;
            let ckpt = fit(&cfg, model, data)?;
            trained.insert(r, ckpt.clone());
            Ok(ckpt)
        };

    let mut rows = Vec::new();
    for cfg in &run.configs {
        let (ckpt, data) = match *cfg {
            ModelConfig::Single(r) => (single(r, &mut trained)?, &singles[&r]),
            ModelConfig::Dual(a, b) => {
                let ca = single(a, &mut trained)?;
                let cb = single(b, &mut trained)?;
                let data = &duals[&(a, b)];
                let model = build_dual_cnn(&ca, &cb, &run.cnn, seed_for(cfg, 1))?;
                (fit(cfg, model, data)?, data)
            }
        };
        let mut model = ckpt.model()?;
        for s in speaker_scores(&mut model, &data.subset(&fold.test))? {
            rows.push(ScoreRow {
                config: cfg.to_string(),
                representations: cfg.display_name(),
                seed: job.seed,
                split: job.split,
                fold: job.fold,
                speaker_id: s.speaker_id,
                label: s.label,
                score: s.score,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_names() {
        let d: ModelConfig = "mag+if".parse().unwrap();
        assert_eq!(d, ModelConfig::Dual(Representation::Magnitude, Representation::If));
        assert_eq!(d.to_string(), "dual:mag+if");
        assert_eq!(d.display_name(), "Magnitude-IF");
        assert_eq!("dual:mag+if".parse::<ModelConfig>().unwrap(), d);
        assert_eq!(
            "single:if".parse::<ModelConfig>().unwrap(),
            ModelConfig::Single(Representation::If)
        );
        assert!("single:mag+if".parse::<ModelConfig>().is_err());
        assert!("a+b+c".parse::<ModelConfig>().is_err());
        assert_eq!(
            "env+tfs".parse::<ModelConfig>().unwrap().display_name(),
            "Envelope-Fine structure"
        );
    }

    #[test]
    fn cv_validation() {
        assert!(CvConfig::default().validate().is_ok());
        assert!(CvConfig {
            folds: 1,
            ..CvConfig::default()
        }
        .validate()
        .is_err());
        assert!(CvConfig {
            n_seeds: 0,
            ..CvConfig::default()
        }
        .validate()
        .is_err());
    }
}
