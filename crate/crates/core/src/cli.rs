//! The `dysphase` command line.
//!
//! Every subcommand reads the same [`RunConfig`](crate::config::RunConfig)
//! (`--config`, else defaults), with `DYSPHASE_OUT_DIR` and
//! `DYSPHASE_WORKERS` overrides. Default layout under `out_dir`:
//!
//! ```text
//! corpus/manifest.csv     synth
//! features/<rep>.cache    extract
//! figure/                 render
//! models/<config>.ckpt    train
//! report/                 crossval, report
//! ```

use crate::config::RunConfig;
use crate::corpus::{load_manifest, load_wav, synthesize_corpus, CorpusManifest};
use crate::experiment::{
    auc, emit_report, make_folds, read_results, run_cross_validation, speaker_scores, train_model, CrossValidation,
    Dataset, EvaluationReport, ModelConfig, RESULTS_FILE,
};
use crate::featurizer::{cache_read, cache_write, extract_corpus, FeatureSegment, Representation};
use crate::nn::{build_dual_cnn, build_single_cnn_with, gradcheck_suite, Model, ModelCheckpoint, TrainConfig};
use crate::render::render_figure;
use crate::{Error, Result};
use clap::{Parser, Subcommand};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

/// Gradient checks fail at or above this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(
    name = "dysphase",
    version,
    about = "Phase-aware features and CNN classifiers for dysarthric speech"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Output root (overrides the config and DYSPHASE_OUT_DIR).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-class corpus.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract normalized segments into feature caches.
    Extract {
        /// Representation(s): mag, phase, mgd, if, env, tfs.
        #[arg(long, required = true, value_delimiter = ',')]
        rep: Vec<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write the magnitude, phase, MGD and IF panels of one WAV.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on the train/dev speakers of a single fold.
    Train {
        /// Model configuration, e.g. `if` or `mag+if`.
        #[arg(long, default_value = "if")]
        model: String,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Full cross-validation over the configured models.
    Crossval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Finite-difference gradient checks of every layer and both networks.
    Gradcheck,
    /// Rebuild the summary from a results table.
    Report {
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

/// Error classes and their exit codes.
fn exit_code(e: &Error) -> (i32, &'static str) {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => (1, "config"),
        Error::MissingFile { .. } | Error::Io { .. } => (3, "io"),
        Error::MalformedHeader { .. }
        | Error::UnsupportedEncoding { .. }
        | Error::Manifest { .. }
        | Error::ConflictingLabel { .. }
        | Error::CacheFormat { .. }
        | Error::Truncated { .. }
        | Error::Checkpoint { .. } => (4, "input"),
        Error::NonFiniteLoss { .. } | Error::Training(_) => (5, "training"),
        _ => (6, "runtime"),
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Usage errors exit with 2.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let (code, class) = exit_code(&e);
            eprintln!("error [{class}]: {e}");
            code
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref())?;
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
    }
    let out = cfg.out_dir.clone();
    match cli.command {
        Command::Synth { out: dir } => {
            let dir = dir.unwrap_or_else(|| out.join("corpus"));
            let m = synthesize_corpus(&cfg.synth, &dir)?;
            println!("{} utterances -> {}", m.len(), dir.join("manifest.csv").display());
        }
        Command::Extract { rep, manifest, workers } => {
            let reps = parse_reps(&rep)?;
            let manifest = open_manifest(manifest, &out)?;
            let workers = workers.unwrap_or(cfg.workers);
            for (r, path) in reps.iter().zip(extract_to_cache(&manifest, &reps, &cfg, workers)?) {
                println!("{r} -> {}", path.display());
            }
        }
        Command::Render { input, out: dir } => {
            let clip = load_wav(&input)?;
            for p in render_figure(&clip, &cfg.render.stft, &cfg.mgd, &dir)? {
                let (lo, hi) = p.map.min_max();
                println!(
                    "{:<14} {} x {}  [{lo:.3}, {hi:.3}]  {}",
                    p.map.kind.name(),
                    p.map.n_bins(),
                    p.map.n_frames(),
                    p.png.display()
                );
            }
        }
        Command::Train { model, fold, manifest } => {
            let mc: ModelConfig = model.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            let manifest = open_manifest(manifest, &out)?;
            let features = load_or_extract(&manifest, &mc.representations(), &cfg)?;
            train_one(&manifest, &features, mc, fold, &cfg)?;
        }
        Command::Crossval { manifest, workers } => {
            let models = cfg.model_configs()?;
            let manifest = open_manifest(manifest, &out)?;
            let mut reps: Vec<Representation> = models.iter().flat_map(|m| m.representations()).collect();
            reps.sort();
            reps.dedup();
            let features = load_or_extract(&manifest, &reps, &cfg)?;
            let run = CrossValidation {
                configs: models,
                cv: cfg.cv,
                train: cfg.train,
                cnn: cfg.cnn,
                workers: workers.unwrap_or(cfg.workers),
            };
            let mut report = run_cross_validation(&manifest, &features, &run)?;
            report.config_echo = Some(cfg.to_toml());
            emit_report(&report, out.join("report"))?;
            print!("{}", report.summary_table());
        }
        Command::Gradcheck => {
            let mut worst: f64 = 0.0;
            for r in gradcheck_suite(&cfg.gradcheck)? {
                println!(
                    "{:<45} {:>10.3e}  ({} entries)",
                    r.name, r.report.max_rel_error, r.report.checked
                );
                worst = worst.max(r.report.max_rel_error);
            }
            println!("max relative error {worst:.3e}");
            if !(worst < GRADCHECK_TOLERANCE) {
                eprintln!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
                return Ok(7);
            }
        }
        Command::Report { results } => {
            let path = results.unwrap_or_else(|| out.join("report").join(RESULTS_FILE));
            let report = EvaluationReport::from_scores(read_results(&path)?)?;
            print!("{}", report.summary_table());
        }
    }
    Ok(0)
}

fn parse_reps(names: &[String]) -> Result<Vec<Representation>> {
    names
        .iter()
        .map(|s| s.trim().parse().map_err(|e: Error| Error::Config(e.to_string())))
        .collect()
}

fn open_manifest(path: Option<PathBuf>, out: &Path) -> Result<CorpusManifest> {
    load_manifest(path.unwrap_or_else(|| out.join("corpus").join("manifest.csv")))
}

pub fn cache_path(out: &Path, rep: Representation) -> PathBuf {
    out.join("features").join(format!("{rep}.cache"))
}

fn extract_to_cache(
    manifest: &CorpusManifest,
    reps: &[Representation],
    cfg: &RunConfig,
    workers: usize,
) -> Result<Vec<PathBuf>> {
    let segs = extract_corpus(manifest, reps, &cfg.features(), workers)?;
    reps.iter()
        .zip(segs)
        .map(|(&r, s)| {
            let p = cache_path(&cfg.out_dir, r);
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            cache_write(&s, &p)?;
            Ok(p)
        })
        .collect()
}

/// Reads existing caches and extracts the missing representations.
fn load_or_extract(
    manifest: &CorpusManifest,
    reps: &[Representation],
    cfg: &RunConfig,
) -> Result<BTreeMap<Representation, Vec<FeatureSegment>>> {
    let missing: Vec<Representation> = reps
        .iter()
        .copied()
        .filter(|&r| !cache_path(&cfg.out_dir, r).exists())
        .collect();
    if !missing.is_empty() {
        log::info!("extracting {missing:?}");
        extract_to_cache(manifest, &missing, cfg, cfg.workers)?;
    }
    reps.iter()
        .map(|&r| Ok((r, cache_read(cache_path(&cfg.out_dir, r))?)))
        .collect()
}

fn train_one(
    manifest: &CorpusManifest,
    features: &BTreeMap<Representation, Vec<FeatureSegment>>,
    mc: ModelConfig,
    fold: usize,
    cfg: &RunConfig,
) -> Result<()> {
    let plan = make_folds(manifest, cfg.cv.folds, cfg.cv.split_seed(0))?;
    let f = plan
        .folds
        .get(fold)
        .ok_or_else(|| Error::Config(format!("fold {fold} out of range (folds = {})", cfg.cv.folds)))?;
    let fit = |reps: &[Representation], model: Model<f32>, seed: u64| -> Result<(ModelCheckpoint, Dataset)> {
        let segs: Vec<&[FeatureSegment]> = reps.iter().map(|r| features[r].as_slice()).collect();
        let data = Dataset::from_segments(&segs)?;
        let tc = TrainConfig { seed, ..cfg.train };
        let ckpt = train_model(&tc, model, &data.subset(&f.train), &data.subset(&f.dev))?;
        Ok((ckpt, data))
    };
    let single = |r: Representation| -> Result<(ModelCheckpoint, Dataset)> {
        let probe = Dataset::from_segments(&[&features[&r]])?;
        let model = Model::init(
            build_single_cnn_with(probe.height, probe.width, &cfg.cnn)?,
            cfg.train.seed,
        )?;
        fit(&[r], model, cfg.train.seed)
    };
    let (ckpt, data) = match mc {
        ModelConfig::Single(r) => single(r)?,
        ModelConfig::Dual(a, b) => {
            let (ca, _) = single(a)?;
            let (cb, _) = single(b)?;
            fit(
                &[a, b],
                build_dual_cnn(&ca, &cb, &cfg.cnn, cfg.train.seed)?,
                cfg.train.seed,
            )?
        }
    };
    let dir = cfg.out_dir.join("models");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{}.ckpt", mc.to_string().replace([':', '+'], "_")));
    ckpt.save(&path)?;
    for r in &ckpt.history {
        println!("train {:.4}  dev {:.4}  lr {:.2e}", r.train_loss, r.dev_loss, r.lr);
    }
    let scores = speaker_scores(&mut ckpt.model()?, &data.subset(&f.test))?;
    let s: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let l: Vec<_> = scores.iter().map(|s| s.label).collect();
    println!(
        "test speakers {}  AUC {:.3}  -> {}",
        s.len(),
        auc(&s, &l)?,
        path.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(dispatch(["dysphase"]), 2);
        assert_eq!(dispatch(["dysphase", "frobnicate"]), 2);
        assert_eq!(dispatch(["dysphase", "extract"]), 2);
    }

    #[test]
    fn invalid_config_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, "[stft]\nbogus = 1\n").unwrap();
        assert_eq!(
            dispatch([
                "dysphase".as_ref(),
                "--config".as_ref(),
                p.as_os_str(),
                "report".as_ref()
            ]),
            1
        );
        assert_eq!(dispatch(["dysphase", "extract", "--rep", "xyz"]), 1);
    }

    #[test]
    fn missing_results_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(dispatch(["dysphase", "--out-dir", out, "report"]), 3);
    }
}
