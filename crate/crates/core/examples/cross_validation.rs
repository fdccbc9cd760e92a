//! Leave-one-patient-out cross validation on a synthetic cohort, printing
//! the unsigned, signed and regional tables.
//!
//! ```text
//! cargo run --release --example cross_validation -- [patients] [epochs] [seed] [noise_std]
//! ```

use std::time::Instant;

use octseg::eval::{run_cross_validation, TableKind, XvalConfig, SEG, SEG_REG};
use octseg::fcn::TrainingConfig;
use octseg::io::{generate_synthetic, SynthConfig};

fn main() -> octseg::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);

    let synth = SynthConfig {
        num_patients: arg(0, 3) as usize,
        seed: arg(2, 0),
        noise_std: args.get(3).and_then(|s| s.parse().ok()).unwrap_or(SynthConfig::default().noise_std),
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&synth)?;
    let config = XvalConfig {
        training: TrainingConfig {
            epochs: arg(1, 50) as usize,
            ..TrainingConfig::default()
        },
        ..XvalConfig::default()
    };

    let start = Instant::now();
    let outcome = run_cross_validation(&data, &config)?;
    for fold in &outcome.folds {
        let last = fold.loss_history.last().copied().unwrap_or(f64::NAN);
        println!("fold {} (test {}): final loss {last:.4}", fold.spec.fold_id, fold.spec.test_patient);
        for img in &fold.held_out {
            for (method, surfaces) in &img.unresolved {
                println!("  {}: {method} unresolved {surfaces:?}", img.image_id);
            }
        }
    }
    println!();
    for kind in [TableKind::Unsigned, TableKind::Signed, TableKind::Regional] {
        println!("{}", outcome.table.render_text(kind));
    }
    let seg = outcome.table.aggregate_unsigned(SEG).unwrap_or(f64::NAN);
    let reg = outcome.table.aggregate_unsigned(SEG_REG).unwrap_or(f64::NAN);
    println!("aggregate mean unsigned error: SEG {seg:.3} px, SEG+REG {reg:.3} px");
    println!("elapsed {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
