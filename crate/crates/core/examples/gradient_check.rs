//! Compares backpropagated gradients with central finite differences, group
//! by group, on a small dense network.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use octseg::fcn::{gradient_check, Activation, BlockSpec, NetworkConfig, Probe};
use octseg::model::NUM_CLASSES;

fn main() -> octseg::Result<()> {
    let config = NetworkConfig {
        stem_channels: 3,
        depth: 1,
        dense_blocks: vec![BlockSpec { layers: 2, growth: 2 }; 3],
        transition_channels: 3,
        activation: Activation::Softplus,
        seed: 5,
        ..NetworkConfig::default()
    };
    let report = gradient_check(&config, &Probe::random(6, 6, NUM_CLASSES, 9))?;
    for g in &report.groups {
        println!("{:<28} {:>5} values  max rel err {:.2e}", g.name, g.rel_errors.len(), g.max_rel_error);
    }
    println!("overall max relative error {:.2e}", report.max_rel_error);
    let flagged = report.flagged(1e-4);
    if !flagged.is_empty() {
        println!("groups above 1e-4: {flagged:?}");
    }
    Ok(())
}
