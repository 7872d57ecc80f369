//! Writes the synthetic two-class corpus and prints a per-speaker summary.
//!
//! ```text
//! cargo run --example synth_corpus -- /tmp/corpus
//! ```

use dysphase::corpus::{load_manifest, load_wav, synthesize_corpus, SynthSpec};

fn main() -> dysphase::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic-corpus".into());
    let spec = SynthSpec {
        n_speakers_per_class: 3,
        ..SynthSpec::default()
    };
    synthesize_corpus(&spec, &out)?;

    // Reading it back goes through the same path as an external corpus.
    let manifest = load_manifest(format!("{out}/manifest.csv"))?;
    for e in &manifest.entries {
        let clip = load_wav(&e.path)?;
        let rms = (clip.samples.iter().map(|v| v * v).sum::<f64>() / clip.len() as f64).sqrt();
        println!(
            "{:<8} {:<12} {:.2}s  rms {:.3}  {}",
            e.speaker_id,
            format!("{:?}", e.label),
            clip.duration_secs(),
            rms,
            e.path.display()
        );
    }
    Ok(())
}
