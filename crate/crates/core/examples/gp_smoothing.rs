//! Gaussian-process smoothing of noisy per-column candidates, with a gap and
//! a spurious duplicate, against the SEG heuristic.
//!
//! ```text
//! cargo run --example gp_smoothing
//! ```

use octseg::gp::{smooth_surface, GpConfig};

fn main() -> octseg::Result<()> {
    let width = 120;
    let truth: Vec<f64> = (0..width).map(|c| 40.0 + 8.0 * (c as f64 / 30.0).sin()).collect();
    let mut candidates: Vec<Vec<usize>> = truth.iter().map(|t| vec![t.ceil() as usize]).collect();
    for cands in candidates.iter_mut().take(70).skip(55) {
        cands.clear();
    }
    candidates[20].push(70);
    let config = GpConfig::default();
    let smooth = smooth_surface(&candidates, 100, &config)?;
    let mut worst: f64 = 0.0;
    for c in (0..width).step_by(10) {
        println!(
            "column {c:>3}  truth {:>6.2}  candidates {:<10}  gp {:>6.2}",
            truth[c],
            format!("{:?}", candidates[c]),
            smooth[c]
        );
    }
    for c in 0..width {
        worst = worst.max((smooth[c] - truth[c]).abs());
    }
    println!("max |gp - truth| = {worst:.3} px (kernel variance {}, length scale {}, noise {})",
        config.kernel.variance, config.kernel.length_scale, config.noise_variance);
    Ok(())
}
