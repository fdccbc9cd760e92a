//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so every line shows up in plain `cargo test` output.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use octseg::eval::{
    evaluate_method, make_folds, run_cross_validation, signed_error, unsigned_stats, XvalConfig, SEG, SEG_REG,
};
use octseg::extraction::seg_pipeline;
use octseg::fcn::{
    gradient_check, weighted_cross_entropy, weighted_nll_terms, Activation, BlockSpec, Network, NetworkConfig, Probe,
    TrainingConfig,
};
use octseg::gp::{kernel_value, posterior_mean, GpConfig, Observations};
use octseg::io::{generate_synthetic, SynthConfig};
use octseg::model::{
    one_hot, rasterize_surfaces, BScan, ClassProbabilityMap, Grid, RegionTag, SurfaceSet, NUM_CLASSES, NUM_SURFACES,
};

type Check = (bool, String);

fn c1_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    for _ in 0..100 {
        let h = rng.random_range(2..=64usize);
        let w = rng.random_range(1..=64usize);
        let mut rows = vec![vec![0.0; w]; NUM_SURFACES];
        for c in 0..w {
            let mut col: Vec<usize> = (0..NUM_SURFACES).map(|_| rng.random_range(0..h)).collect();
            col.sort_unstable();
            for k in 0..NUM_SURFACES {
                rows[k][c] = col[k] as f64;
            }
        }
        let s = SurfaceSet::from_rows(rows).unwrap();
        let labels = rasterize_surfaces(&s, h, w).unwrap();
        if seg_pipeline(&one_hot(&labels, NUM_CLASSES)).ok() != Some(s) {
            failures += 1;
        }
    }
    (failures == 0, format!("{failures}/100 sets not recovered exactly"))
}

/// Posterior mean by a dense LU solve of (K + (noise + jitter) I) alpha = y - m.
fn dense_oracle(cols: &[f64], rows: &[f64], queries: &[f64], config: &GpConfig) -> Vec<f64> {
    let n = cols.len();
    let mean = rows.iter().sum::<f64>() / n as f64;
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel_value(cols[i], cols[j], &config.kernel) + if i == j { config.noise_variance + config.jitter } else { 0.0 }
    });
    let y = DVector::from_iterator(n, rows.iter().map(|r| r - mean));
    let alpha = k.lu().solve(&y).expect("nonsingular");
    queries
        .iter()
        .map(|&q| mean + (0..n).map(|i| kernel_value(q, cols[i], &config.kernel) * alpha[i]).sum::<f64>())
        .collect()
}

fn c2_gp_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let config = GpConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=200usize);
        let width = rng.random_range(n.max(2)..=400) as f64;
        let cols: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..width).floor()).collect();
        let rows: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..500.0)).collect();
        let queries: Vec<f64> = (0..width as usize).map(|q| q as f64).collect();
        let got = posterior_mean(&Observations::new(cols.clone(), rows.clone()).unwrap(), &queries, &config).unwrap();
        let want = dense_oracle(&cols, &rows, &queries, &config);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    (worst <= 1e-8, format!("max |cholesky - dense| = {worst:.3e} (tol 1e-8)"))
}

fn c3_gp_properties() -> Check {
    let config = GpConfig::default();
    let cols: Vec<f64> = (0..60).map(|c| c as f64 * 2.0).collect();
    let queries: Vec<f64> = (0..120).map(|q| q as f64).collect();
    let constant = posterior_mean(&Observations::new(cols.clone(), vec![42.5; 60]).unwrap(), &queries, &config).unwrap();
    let const_err = constant.iter().map(|v| (v - 42.5).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<f64> = (0..60).map(|_| rng.random_range(10.0..90.0)).collect();
    let base = posterior_mean(&Observations::new(cols.clone(), rows.clone()).unwrap(), &queries, &config).unwrap();
    let shifted: Vec<f64> = rows.iter().map(|r| r + 17.25).collect();
    let moved = posterior_mean(&Observations::new(cols.clone(), shifted).unwrap(), &queries, &config).unwrap();
    let shift_err = base.iter().zip(&moved).map(|(a, b)| (b - a - 17.25).abs()).fold(0.0, f64::max);

    let mean = rows.iter().sum::<f64>() / rows.len() as f64;
    let far = posterior_mean(&Observations::new(cols, rows).unwrap(), &[5000.0, -5000.0], &config).unwrap();
    let far_err = far.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);

    let pass = const_err <= 1e-9 && shift_err <= 1e-9 && far_err <= 1e-6;
    (
        pass,
        format!("constant {const_err:.1e} (1e-9), shift {shift_err:.1e} (1e-9), far field {far_err:.1e} (1e-6)"),
    )
}

fn c4_gradient_check() -> Check {
    let config = NetworkConfig {
        stem_channels: 3,
        depth: 1,
        dense_blocks: vec![BlockSpec { layers: 2, growth: 2 }; 3],
        transition_channels: 3,
        activation: Activation::Softplus,
        seed: 5,
        ..NetworkConfig::default()
    };
    let net = Network::new(config.clone()).unwrap();
    let count = net.init_params().num_values();
    let report = gradient_check(&config, &Probe::random(6, 6, NUM_CLASSES, 9)).unwrap();
    let pass = count <= 5000 && report.max_rel_error < 1e-4;
    (pass, format!("{count} parameters, max relative error {:.2e} (tol 1e-4)", report.max_rel_error))
}

fn c5_softmax_and_loss() -> Check {
    let net = Network::new(NetworkConfig::default()).unwrap();
    let params = net.init_params();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scan = BScan::new(Grid::from_fn(20, 28, |_, _| rng.random::<f64>()), "p", RegionTag::Fovea, "i").unwrap();
    let norm_err = net.forward(&params, &scan).unwrap().max_normalization_error();

    let labels = Grid::from_fn(4, 5, |r, c| ((r + c) % NUM_CLASSES) as u8);
    let uniform = ClassProbabilityMap::uniform(NUM_CLASSES, 4, 5);
    let loss = weighted_cross_entropy(&uniform, &labels, &[1.0; NUM_CLASSES], None).unwrap().loss;
    let ln6_err = (loss - 6f64.ln()).abs();

    // Two pixels with the same true-class probability, one in a weight-10 class.
    let mut probs = ClassProbabilityMap::uniform(NUM_CLASSES, 1, 2);
    for (c, class) in [(0, 1usize), (1, 4usize)] {
        for k in 0..NUM_CLASSES {
            probs.set_prob(0, c, k, if k == class { 0.3 } else { 0.14 });
        }
    }
    let two = Grid::from_vec(1, 2, vec![1u8, 4]).unwrap();
    let mut weights = [1.0; NUM_CLASSES];
    weights[4] = 10.0;
    let terms = weighted_nll_terms(&probs, &two, &weights, None).unwrap();
    let ratio = terms[1] / terms[0];

    let pass = norm_err <= 1e-6 && ln6_err <= 1e-9 && ratio == 10.0;
    (
        pass,
        format!("sum error {norm_err:.1e} (1e-6), |loss - ln 6| {ln6_err:.1e} (1e-9), minority/majority term ratio {ratio}"),
    )
}

fn c6_metrics() -> Check {
    let e = signed_error(&[10.0], &[13.0], &[true]).unwrap();
    let s = unsigned_stats(&[1.0, 2.0, 3.0]).unwrap();
    // Hand computation: |e| = 1, 2, 3; mean 2; deviations -1, 0, 1; variance 2/3.
    let std_oracle = (2.0f64 / 3.0).sqrt();
    let pass = e.values == [-3.0]
        && (s.mean_unsigned - 2.0).abs() <= 1e-9
        && (s.max_unsigned - 3.0).abs() <= 1e-9
        && (s.std_unsigned - std_oracle).abs() <= 1e-9;
    (
        pass,
        format!(
            "signed {:?}, mean {}, max {}, std {:.6} (oracle {std_oracle:.6})",
            e.values, s.mean_unsigned, s.max_unsigned, s.std_unsigned
        ),
    )
}

fn c7_cross_validation_protocol() -> Check {
    let data = generate_synthetic(&SynthConfig {
        num_patients: 10,
        width: 16,
        height: 32,
        min_thickness: 2.0,
        seed: 7,
        ..SynthConfig::default()
    })
    .unwrap();
    let ids: Vec<String> = data.iter().map(|p| p.patient_id.clone()).collect();
    let folds = make_folds(&ids, 10).unwrap();
    let scans_of = |id: &str| data.iter().find(|p| p.patient_id == id).unwrap().scans.len();
    let splits_ok = folds.len() == 10
        && folds.iter().all(|f| {
            let train: usize = f.train_patients.iter().map(|p| scans_of(p)).sum();
            train == 45 && scans_of(&f.test_patient) == 5 && !f.train_patients.contains(&f.test_patient)
        });

    let config = XvalConfig {
        network: NetworkConfig::linear(),
        training: TrainingConfig {
            epochs: 1,
            ..TrainingConfig::default()
        },
        ..XvalConfig::default()
    };
    let a = run_cross_validation(&data, &config).unwrap();
    let b = run_cross_validation(&data, &config).unwrap();
    let mut tested: Vec<String> = a.folds.iter().flat_map(|f| f.held_out.iter().map(|h| h.image_id.clone())).collect();
    let total = tested.len();
    tested.sort();
    tested.dedup();
    let all: usize = data.iter().map(|p| p.scans.len()).sum();
    let once = total == all && tested.len() == all;
    let identical = a.table == b.table
        && a.folds.iter().zip(&b.folds).all(|(x, y)| {
            x.params == y.params && x.loss_history == y.loss_history && x.held_out == y.held_out
        });
    (
        splits_ok && once && identical,
        format!("45/5 splits {splits_ok}, {total} test images of {all} each once {once}, rerun bit-identical {identical}"),
    )
}

/// Frozen synthetic cohort and training schedule for the desk-scale run.
fn c8_setup() -> (SynthConfig, XvalConfig) {
    let synth = SynthConfig {
        num_patients: 3,
        width: 128,
        height: 128,
        noise_std: 0.15,
        ..SynthConfig::default()
    };
    let xval = XvalConfig {
        training: TrainingConfig {
            epochs: 50,
            ..TrainingConfig::default()
        },
        ..XvalConfig::default()
    };
    (synth, xval)
}

/// SEG+REG aggregate threshold, fixed after the reference run on the frozen
/// seed (SEG 0.626 px, SEG+REG 0.565 px, Inter-Observer 0.64 px).
const C8_MAX_SEG_REG_PX: f64 = 1.0;

fn c8_directional() -> Check {
    let (synth, xval) = c8_setup();
    let data = generate_synthetic(&synth).unwrap();
    let outcome = run_cross_validation(&data, &xval).unwrap();
    let seg = outcome.table.aggregate_unsigned(SEG).unwrap_or(f64::INFINITY);
    let reg = outcome.table.aggregate_unsigned(SEG_REG).unwrap_or(f64::INFINITY);
    let inter = outcome.table.aggregate_unsigned(octseg::eval::INTER_OBSERVER).unwrap_or(f64::NAN);
    (
        reg <= seg && reg < C8_MAX_SEG_REG_PX,
        format!(
            "SEG {seg:.3} px, SEG+REG {reg:.3} px, Inter-Observer {inter:.3} px; need SEG+REG <= SEG and SEG+REG < {C8_MAX_SEG_REG_PX}"
        ),
    )
}

fn c9_shared_mask() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let width = 40;
    let mut truths = Vec::new();
    let mut a_sets = Vec::new();
    let mut b_sets = Vec::new();
    let mut regions = Vec::new();
    for i in 0..6 {
        let truth = SurfaceSet::constant([5.0, 10.0, 15.0, 20.0, 25.0], width);
        let mut a = truth.shifted(rng.random_range(-2.0..2.0));
        let mut b = truth.shifted(rng.random_range(-2.0..2.0));
        for k in 0..NUM_SURFACES {
            // Different validity spans per method.
            let (s, e) = (rng.random_range(0..width / 2), rng.random_range(width / 2..width));
            for c in (0..s).chain(e..width) {
                a.invalidate(k, c);
            }
            for c in 0..width {
                if rng.random_bool(0.2) {
                    b.invalidate(k, c);
                }
            }
        }
        truths.push(truth);
        a_sets.push(a);
        b_sets.push(b);
        regions.push(RegionTag::ALL[i % 3]);
    }
    let mask_inputs: Vec<Vec<SurfaceSet>> = (0..6).map(|i| vec![a_sets[i].clone(), b_sets[i].clone()]).collect();
    let ta = evaluate_method("A", &a_sets, &truths, &regions, &mask_inputs).unwrap();
    let tb = evaluate_method("B", &b_sets, &truths, &regions, &mask_inputs).unwrap();
    let mut cells = 0;
    let mut mismatched = 0;
    let mut counts = BTreeMap::new();
    for k in 0..NUM_SURFACES {
        for region in std::iter::once(None).chain(RegionTag::ALL.map(Some)) {
            let na = ta.get(k, region, "A").map(|s| s.n);
            let nb = tb.get(k, region, "B").map(|s| s.n);
            cells += 1;
            if na != nb {
                mismatched += 1;
            }
            counts.insert((k, region), na);
        }
    }
    (mismatched == 0, format!("{mismatched} of {cells} cells differ in n between methods"))
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 9] = [
        ("round-trip identity", c1_round_trip),
        ("GP dense-solve oracle", c2_gp_oracle),
        ("GP analytic properties", c3_gp_properties),
        ("gradient check", c4_gradient_check),
        ("softmax and loss contracts", c5_softmax_and_loss),
        ("metric definitions", c6_metrics),
        ("cross-validation protocol", c7_cross_validation_protocol),
        ("directional desk-scale reproduction", c8_directional),
        ("shared valid region", c9_shared_mask),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = check();
        println!(
            "criterion {n} ({name}): {} - {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
