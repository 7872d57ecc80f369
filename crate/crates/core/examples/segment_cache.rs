//! Extracts IF segments from a small synthetic corpus, writes the binary
//! cache and reads it back.

use dysphase::corpus::{synthesize_corpus, SynthSpec};
use dysphase::featurizer::{cache_read, cache_write, extract_corpus, FeatureConfig, Representation};

fn main() -> dysphase::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| dysphase::Error::io("tempdir", e))?;
    let spec = SynthSpec {
        n_speakers_per_class: 2,
        utterances_per_speaker: 1,
        utterance_seconds: 2.0,
        ..SynthSpec::default()
    };
    let manifest = synthesize_corpus(&spec, dir.path())?;
    let cfg = FeatureConfig::default();
    let segs = extract_corpus(&manifest, &[Representation::If], &cfg, 1)?.remove(0);
    println!(
        "{} segments of {} x {} (hop {} frames)",
        segs.len(),
        segs[0].values.rows(),
        segs[0].values.cols(),
        cfg.segment.hop()
    );

    let path = dir.path().join("if.cache");
    cache_write(&segs, &path)?;
    let back = cache_read(&path)?;
    let worst = segs
        .iter()
        .zip(&back)
        .flat_map(|(a, b)| a.values.iter().zip(b.values.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!(
        "cache {} bytes, {} segments read back, max f32 rounding {worst:.1e}",
        std::fs::metadata(&path)
            .map_err(|e| dysphase::Error::io(&path, e))?
            .len(),
        back.len()
    );
    for s in back.iter().step_by(back.len() / 4) {
        println!("  {} {:?} segment {}", s.speaker_id, s.label, s.index);
    }
    Ok(())
}
