//! Draws ground truth and the second grader over a synthetic scan as SVG and PNG.
//!
//! ```text
//! cargo run --example render_overlay -- [out_prefix]
//! ```

use octseg::io::{generate_synthetic, render_overlay, SynthConfig};

fn main() -> octseg::Result<()> {
    let prefix = std::env::args().nth(1).unwrap_or_else(|| "overlay".into());
    let data = generate_synthetic(&SynthConfig {
        num_patients: 1,
        ..SynthConfig::default()
    })?;
    let scan = &data[0].scans[0];
    let mut grader2 = scan.grader2.clone().expect("synthetic scans carry a second grader");
    for c in 40..60 {
        grader2.invalidate(2, c);
    }
    let sets = [("grader 1", &scan.ground_truth), ("grader 2", &grader2)];
    for ext in ["svg", "png"] {
        let path = std::path::PathBuf::from(format!("{prefix}.{ext}"));
        render_overlay(&scan.scan, &sets, &path)?;
        println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    }
    Ok(())
}
