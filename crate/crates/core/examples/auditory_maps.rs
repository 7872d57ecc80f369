//! Gammatone envelope and fine-structure maps of a two-tone signal.

use dysphase::auditory::{design_gammatone_bank, envelope_fine_structure};
use dysphase::corpus::AudioClip;
use std::f64::consts::PI;

fn main() -> dysphase::Result<()> {
    let bank = design_gammatone_bank(81, 50.0, 7800.0, 16000)?;
    let x: Vec<f64> = (0..16000)
        .map(|i| {
            let t = i as f64 / 16000.0;
            0.4 * (2.0 * PI * 500.0 * t).sin() + 0.1 * (2.0 * PI * 3000.0 * t).sin()
        })
        .collect();
    let clip = AudioClip::new(x, 16000)?;
    let (env, tfs) = envelope_fine_structure(&clip, &bank, 160, 160)?;
    println!(
        "envelope {} x {}, fine structure {} x {}",
        env.n_bins(),
        env.n_frames(),
        tfs.n_bins(),
        tfs.n_frames()
    );

    let mid = env.n_frames() / 2;
    let mut bands: Vec<usize> = (0..bank.n_bands()).collect();
    bands.sort_by(|&a, &b| env.values[(b, mid)].total_cmp(&env.values[(a, mid)]));
    println!("strongest bands at frame {mid}:");
    for &k in &bands[..6] {
        println!(
            "  band {k:>2}  {:>7.1} Hz  envelope {:.3}  fine structure {:+.3}",
            bank.center_freqs[k],
            env.values[(k, mid)],
            tfs.values[(k, mid)]
        );
    }
    Ok(())
}
