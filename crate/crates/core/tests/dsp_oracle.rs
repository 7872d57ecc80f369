//! STFT against a direct DFT and Parseval's relation, frame by frame.

mod common;

use std::time::Instant;

#[test]
fn stft_matches_direct_dft_and_parseval() {
    let t = Instant::now();
    let (coef, parseval) = common::stft_oracle_errors(7);
    let secs = t.elapsed().as_secs_f64();
    assert!(coef < 1e-9, "coefficient error {coef}");
    assert!(parseval < 1e-9, "parseval error {parseval}");
    assert!(secs < 5.0, "took {secs}s");
}
