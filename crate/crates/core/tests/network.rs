use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use octseg::fcn::train::sample_gradient;
use octseg::fcn::{train, BlockSpec, Network, NetworkConfig, Probe, Tensor, TrainingConfig, TrainingSample};
use octseg::model::{rasterize_surfaces, BScan, Grid, RegionTag, SurfaceSet, NUM_CLASSES};

fn small_config() -> NetworkConfig {
    NetworkConfig {
        stem_channels: 4,
        depth: 1,
        dense_blocks: vec![BlockSpec { layers: 1, growth: 3 }; 3],
        transition_channels: 4,
        ..NetworkConfig::default()
    }
}

#[test]
fn shifting_by_the_stride_shifts_interior_outputs() {
    let net = Network::new(small_config()).unwrap();
    let params = net.init_params();
    let stride = net.config().stride();
    let (h, w) = (32, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let wide: Vec<f64> = (0..h * (w + stride)).map(|_| rng.random::<f64>()).collect();
    let crop = |offset: usize| Tensor {
        channels: 1,
        height: h,
        width: w,
        data: (0..h).flat_map(|r| wide[r * (w + stride) + offset..r * (w + stride) + offset + w].to_vec()).collect(),
    };
    let (a, _) = net.forward_tensor(&params, &crop(0)).unwrap();
    let (b, _) = net.forward_tensor(&params, &crop(stride)).unwrap();
    let margin = 10;
    for k in 0..NUM_CLASSES {
        for r in margin..h - margin {
            for c in margin..w - margin - stride {
                let pa = a.data[(k * h + r) * w + c + stride];
                let pb = b.data[(k * h + r) * w + c];
                assert!((pa - pb).abs() < 1e-12, "class {k} ({r},{c}): {pa} vs {pb}");
            }
        }
    }
}

#[test]
fn scaling_class_weights_leaves_gradients_unchanged() {
    let net = Network::new(small_config()).unwrap();
    let params = net.init_params();
    let probe = Probe::random(8, 8, NUM_CLASSES, 11);
    let scaled: Vec<f64> = probe.weights.iter().map(|w| w * 7.5).collect();
    let (l1, g1) = sample_gradient(&net, &params, &probe.sample, &probe.weights, true).unwrap();
    let (l2, g2) = sample_gradient(&net, &params, &probe.sample, &scaled, true).unwrap();
    assert!((l1 - l2).abs() < 1e-12 * l1.abs().max(1.0));
    for (a, b) in g1.groups.iter().zip(&g2.groups) {
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-8), "{}: {x} vs {y}", a.name);
        }
    }
}

fn toy_dataset(n: usize, seed: u64) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let base: f64 = rng.random_range(3.0..6.0);
            let truth = SurfaceSet::constant([base, base + 3.0, base + 6.0, base + 9.0, base + 12.0], 16);
            let labels = rasterize_surfaces(&truth, 24, 16).unwrap();
            let pixels = labels.map(|&l| (l as f64 / 6.0 + rng.random_range(0.0..0.1)).min(1.0));
            TrainingSample {
                image: BScan::new(pixels, "P", RegionTag::Fovea, format!("img{i}")).unwrap(),
                labels,
                ignore: None::<Grid<bool>>,
            }
        })
        .collect()
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let data = toy_dataset(4, 1);
    let tconfig = TrainingConfig {
        epochs: 40,
        batch_size: 2,
        seed: 4,
        ..TrainingConfig::default()
    };
    let a = train(&data, &tconfig, &small_config()).unwrap();
    let b = train(&data, &tconfig, &small_config()).unwrap();
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.params, b.params);
    let first = a.loss_history[0];
    let last = *a.loss_history.last().unwrap();
    assert!(last < 0.5 * first, "loss {first} -> {last}");

    let other = train(&data, &TrainingConfig { seed: 5, ..tconfig }, &small_config()).unwrap();
    assert_ne!(other.loss_history, a.loss_history);
}
