//! Finite-difference check of every layer and of both network layouts.

use dysphase::nn::{gradcheck_suite, GradCheckConfig};
use std::time::Instant;

fn main() -> dysphase::Result<()> {
    let cfg = GradCheckConfig::default();
    let start = Instant::now();
    let results = gradcheck_suite(&cfg)?;
    for r in &results {
        println!(
            "{:<45} {:>9.3e}  ({} entries, {} at kinks)",
            r.name, r.report.max_rel_error, r.report.checked, r.report.kinks
        );
    }
    let worst = results.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    println!("max relative error {worst:.3e} in {:.1?}", start.elapsed());
    Ok(())
}
