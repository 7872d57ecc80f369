//! Renders the four analysis panels of a WAV file (or of a synthetic
//! utterance) as CSV matrices and PNG images.
//!
//! ```text
//! cargo run --example render_figure -- input.wav out/
//! ```

use dysphase::config::RenderConfig;
use dysphase::corpus::{load_wav, synthesize_corpus, SynthSpec};
use dysphase::render::render_figure;
use dysphase::spectral::MgdParams;

fn main() -> dysphase::Result<()> {
    let mut args = std::env::args().skip(1);
    let input = args.next();
    let out = args.next().unwrap_or_else(|| "figure".into());
    let scratch = tempfile::tempdir().map_err(|e| dysphase::Error::io("tempdir", e))?;
    let wav = match input {
        Some(p) => p.into(),
        None => {
            let spec = SynthSpec {
                n_speakers_per_class: 1,
                utterances_per_speaker: 1,
                utterance_seconds: 1.0,
                ..SynthSpec::default()
            };
            synthesize_corpus(&spec, scratch.path())?.entries.remove(0).path
        }
    };
    let clip = load_wav(&wav)?;
    for p in render_figure(&clip, &RenderConfig::default().stft, &MgdParams::default(), &out)? {
        let (lo, hi) = p.map.min_max();
        println!(
            "{:<14} {} x {}  [{lo:8.3}, {hi:8.3}]  {}",
            p.map.kind.name(),
            p.map.n_bins(),
            p.map.n_frames(),
            p.csv.display()
        );
    }
    Ok(())
}
