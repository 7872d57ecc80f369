//! Trains the single-input CNN on IF segments of a small synthetic corpus
//! and scores held-out speakers.

use dysphase::corpus::{synthesize_corpus, SynthSpec};
use dysphase::experiment::{auc, make_folds, speaker_scores, train_model, Dataset};
use dysphase::featurizer::{extract_corpus, FeatureConfig, Representation};
use dysphase::nn::{build_single_cnn, Model, TrainConfig};

fn main() -> dysphase::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| dysphase::Error::io("tempdir", e))?;
    let spec = SynthSpec {
        n_speakers_per_class: 6,
        utterances_per_speaker: 1,
        ..SynthSpec::default()
    };
    let manifest = synthesize_corpus(&spec, dir.path())?;
    let segs = extract_corpus(&manifest, &[Representation::If], &FeatureConfig::default(), 1)?.remove(0);
    let data = Dataset::from_segments(&[&segs])?;

    let plan = make_folds(&manifest, 3, 0)?;
    let fold = &plan.folds[0];
    println!("train {:?}\ndev   {:?}\ntest  {:?}", fold.train, fold.dev, fold.test);

    let model = Model::init(build_single_cnn(data.height, data.width)?, 1)?;
    println!("{} parameters", model.n_params());
    let cfg = TrainConfig {
        max_epochs: 15,
        ..TrainConfig::default()
    };
    let ckpt = train_model(&cfg, model, &data.subset(&fold.train), &data.subset(&fold.dev))?;
    for (i, r) in ckpt.history.iter().enumerate() {
        println!(
            "epoch {:>2}  train {:.4}  dev {:.4}  lr {:.0e}",
            i + 1,
            r.train_loss,
            r.dev_loss,
            r.lr
        );
    }

    let scores = speaker_scores(&mut ckpt.model()?, &data.subset(&fold.test))?;
    for s in &scores {
        println!("{:<8} {:<12} {:.3}", s.speaker_id, format!("{:?}", s.label), s.score);
    }
    let s: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let l: Vec<_> = scores.iter().map(|s| s.label).collect();
    println!("AUC {:.3}", auc(&s, &l)?);
    Ok(())
}
