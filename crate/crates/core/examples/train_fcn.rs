//! Trains the dense FCN on synthetic scans and reports held-out pixel accuracy.
//!
//! ```text
//! cargo run --release --example train_fcn -- [epochs] [learning_rate]
//! ```

use std::time::Instant;

use octseg::fcn::{pixel_accuracy, train, Network, NetworkConfig, TrainingConfig, TrainingSample};
use octseg::io::{generate_synthetic, SynthConfig};
use octseg::model::rasterize_surfaces;

fn samples(patients: &[octseg::model::PatientRecord]) -> Vec<TrainingSample> {
    patients
        .iter()
        .flat_map(|p| &p.scans)
        .map(|s| TrainingSample {
            labels: rasterize_surfaces(&s.ground_truth, s.scan.height(), s.scan.width()).unwrap(),
            image: s.scan.clone(),
            ignore: s.ignore_mask.clone(),
        })
        .collect()
}

fn main() -> octseg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);

    let data = generate_synthetic(&SynthConfig::default())?;
    let (train_set, test_set) = data.split_at(data.len() - 1);
    let train_samples = samples(train_set);
    let test_samples = samples(test_set);

    let tconfig = TrainingConfig {
        epochs: arg(0, 30.0) as usize,
        learning_rate: arg(1, TrainingConfig::default().learning_rate),
        ..TrainingConfig::default()
    };
    let nconfig = NetworkConfig::default();
    let net = Network::new(nconfig.clone())?;
    println!(
        "{} training / {} held-out scans, {} parameters",
        train_samples.len(),
        test_samples.len(),
        net.init_params().num_values()
    );
    let start = Instant::now();
    let outcome = train(&train_samples, &tconfig, &nconfig)?;
    println!("trained {} epochs in {:.1?}", tconfig.epochs, start.elapsed());
    for (e, l) in outcome.loss_history.iter().enumerate() {
        println!("epoch {e:3}  loss {l:.4}");
    }
    let acc = pixel_accuracy(&net, &outcome.params, &test_samples)?;
    println!("held-out pixel accuracy: {:.2}%", 100.0 * acc);
    Ok(())
}
