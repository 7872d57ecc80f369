//! Cross-validation on the synthetic corpus: single IF, single magnitude and
//! the dual magnitude+IF network, two folds, one seed and split.
//!
//! ```text
//! cargo run --example crossval_synthetic [-- <epochs> [<config>...]]
//! ```

use dysphase::corpus::{synthesize_corpus, SynthSpec};
use dysphase::experiment::{run_cross_validation, CrossValidation, CvConfig, ModelConfig};
use dysphase::featurizer::{extract_corpus, FeatureConfig, Representation};
use dysphase::nn::{CnnConfig, TrainConfig};
use std::collections::BTreeMap;
use std::time::Instant;

fn main() -> dysphase::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().and_then(|a| a.parse().ok()).unwrap_or(30);
    let configs: Vec<ModelConfig> = if args.len() > 1 {
        args[1..].iter().map(|a| a.parse()).collect::<dysphase::Result<_>>()?
    } else {
        vec![
            "if".parse()?,
            "mag".parse()?,
            ModelConfig::Dual(Representation::Magnitude, Representation::If),
        ]
    };
    let dir = tempfile::tempdir().map_err(|e| dysphase::Error::io("tempdir", e))?;
    let t0 = Instant::now();

    let manifest = synthesize_corpus(&SynthSpec::default(), dir.path())?;
    let reps = [Representation::Magnitude, Representation::If];
    let segs = extract_corpus(&manifest, &reps, &FeatureConfig::default(), 1)?;
    let features: BTreeMap<_, _> = reps.into_iter().zip(segs).collect();
    println!(
        "{} utterances, {} segments per representation ({:.1}s)",
        manifest.len(),
        features[&Representation::If].len(),
        t0.elapsed().as_secs_f64()
    );

    let run = CrossValidation {
        configs,
        cv: CvConfig {
            folds: 2,
            n_seeds: 1,
            n_splits: 1,
            seed: 0,
        },
        train: TrainConfig {
            max_epochs: epochs,
            ..TrainConfig::default()
        },
        cnn: CnnConfig::default(),
        workers: 1,
    };
    let report = run_cross_validation(&manifest, &features, &run)?;
    print!("{}", report.summary_table());
    for r in &report.scores {
        println!(
            "{:<12} fold {} {} {:?} {:.3}",
            r.config, r.fold, r.speaker_id, r.label, r.score
        );
    }
    println!("done in {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
