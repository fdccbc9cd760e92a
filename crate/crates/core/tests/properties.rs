use std::collections::BTreeMap;

use proptest::prelude::*;

use octseg::eval::{evaluate_methods, unsigned_stats, EvalImage, Pooling};
use octseg::extraction::{adjudicate, extract_candidates, seg_pipeline, CandidateSet};
use octseg::gp::{kernel_matrix, posterior_mean, GpConfig, Observations, RbfKernel};
use octseg::model::{
    intersect_validity, one_hot, rasterize_surfaces, RegionTag, SurfaceSet, NUM_CLASSES, NUM_SURFACES,
};

/// Ordered integer surfaces: sorted draws from `0..height` per column.
fn ordered_integer_set() -> impl Strategy<Value = (usize, SurfaceSet)> {
    (2usize..=64, 1usize..=64).prop_flat_map(|(h, w)| {
        prop::collection::vec(prop::collection::vec(0..h, NUM_SURFACES), w).prop_map(move |cols| {
            let mut rows = vec![vec![0.0; w]; NUM_SURFACES];
            for (c, mut col) in cols.into_iter().enumerate() {
                col.sort_unstable();
                for k in 0..NUM_SURFACES {
                    rows[k][c] = col[k] as f64;
                }
            }
            (h, SurfaceSet::from_rows(rows).unwrap())
        })
    })
}

fn validity_set(width: usize) -> impl Strategy<Value = SurfaceSet> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), width), NUM_SURFACES).prop_map(|flags| {
        let rows = flags
            .into_iter()
            .map(|r| r.into_iter().map(|ok| if ok { 1.0 } else { f64::NAN }).collect())
            .collect();
        SurfaceSet::from_rows(rows).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rasterize_then_extract_is_identity((h, s) in ordered_integer_set()) {
        let labels = rasterize_surfaces(&s, h, s.width()).unwrap();
        prop_assert_eq!(seg_pipeline(&one_hot(&labels, NUM_CLASSES)).unwrap(), s);
    }

    #[test]
    fn band_widths_sum_to_height((h, s) in ordered_integer_set()) {
        let labels = rasterize_surfaces(&s, h, s.width()).unwrap();
        for c in 0..s.width() {
            let mut widths = [0usize; NUM_CLASSES];
            for r in 0..h {
                widths[labels.at(r, c) as usize] += 1;
            }
            prop_assert_eq!(widths.iter().sum::<usize>(), h);
            // Labels never decrease down a column.
            prop_assert!(labels.column(c).windows(2).all(|p| p[0] <= p[1]));
        }
    }

    #[test]
    fn intersection_laws(a in validity_set(9), b in validity_set(9), c in validity_set(9)) {
        let ab = intersect_validity(&[&a, &b]).unwrap();
        prop_assert_eq!(&ab, &intersect_validity(&[&b, &a]).unwrap());
        prop_assert_eq!(intersect_validity(&[&a, &a]).unwrap(), intersect_validity(&[&a]).unwrap());
        let ab_set = SurfaceSet::from_rows(
            ab.iter().map(|r| r.iter().map(|&v| if v { 1.0 } else { f64::NAN }).collect()).collect(),
        )
        .unwrap();
        let bc = intersect_validity(&[&b, &c]).unwrap();
        let bc_set = SurfaceSet::from_rows(
            bc.iter().map(|r| r.iter().map(|&v| if v { 1.0 } else { f64::NAN }).collect()).collect(),
        )
        .unwrap();
        let left = intersect_validity(&[&ab_set, &c]).unwrap();
        prop_assert_eq!(&left, &intersect_validity(&[&a, &bc_set]).unwrap());
        prop_assert_eq!(&left, &intersect_validity(&[&a, &b, &c]).unwrap());
    }

    #[test]
    fn adjudication_never_invents_rows(
        entries in prop::collection::vec((0..NUM_SURFACES, 0usize..12, 0usize..40), 0..60)
    ) {
        let mut cands = CandidateSet::new(40, 12);
        for &(k, c, r) in &entries {
            cands.push(k, c, r);
        }
        let adj = adjudicate(&cands);
        prop_assert_eq!(&adj, &adjudicate(&cands));
        for k in 0..NUM_SURFACES {
            let all: Vec<usize> = (0..12).flat_map(|c| cands.get(k, c).to_vec()).collect();
            if all.is_empty() {
                prop_assert!(adj.surfaces.validity(k).iter().all(|&v| !v));
                continue;
            }
            for c in 0..12 {
                let v = adj.surfaces.get(k, c).expect("resolved surfaces are fully valid") as usize;
                if cands.get(k, c).is_empty() {
                    prop_assert!(all.contains(&v));
                } else {
                    prop_assert!(cands.get(k, c).contains(&v));
                }
            }
        }
    }

    #[test]
    fn extraction_rows_are_boundary_crossings(
        col in prop::collection::vec(0u8..NUM_CLASSES as u8, 1..30)
    ) {
        let labels = octseg::model::Grid::from_vec(col.len(), 1, col.clone()).unwrap();
        let cands = extract_candidates(&labels);
        for k in 0..NUM_SURFACES {
            for &r in cands.get(k, 0) {
                let above = if r == 0 { 0 } else { col[r - 1] };
                prop_assert!(above as usize <= k && k < col[r] as usize);
            }
        }
    }

    #[test]
    fn gp_shift_invariance(
        rows in prop::collection::vec(0.0f64..100.0, 1..40),
        shift in -50.0f64..50.0,
    ) {
        let cols: Vec<f64> = (0..rows.len()).map(|i| (i * 3 % 37) as f64).collect();
        let queries: Vec<f64> = (0..40).map(|q| q as f64).collect();
        let config = GpConfig::default();
        let base = posterior_mean(&Observations::new(cols.clone(), rows.clone()).unwrap(), &queries, &config).unwrap();
        let shifted_rows: Vec<f64> = rows.iter().map(|r| r + shift).collect();
        let moved = posterior_mean(&Observations::new(cols, shifted_rows).unwrap(), &queries, &config).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((b - a - shift).abs() < 1e-9);
        }
    }

    #[test]
    fn more_noise_shrinks_toward_the_mean(
        rows in prop::collection::vec(0.0f64..100.0, 2..30),
        low in 0.01f64..5.0,
        extra in 0.1f64..50.0,
    ) {
        // Euclidean norm over the observed columns; the sup norm over
        // extrapolated columns can grow (e.g. 11 points, noise 1.43 -> 1.53).
        let cols: Vec<f64> = (0..rows.len()).map(|i| (i * 7) as f64).collect();
        let mean = rows.iter().sum::<f64>() / rows.len() as f64;
        let obs = Observations::new(cols.clone(), rows.clone()).unwrap();
        let norm = |noise: f64| {
            let cfg = GpConfig { noise_variance: noise, ..GpConfig::default() };
            posterior_mean(&obs, &cols, &cfg).unwrap().iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt()
        };
        prop_assert!(norm(low + extra) <= norm(low) + 1e-9);
    }

    #[test]
    fn kernel_matrix_is_symmetric(cols in prop::collection::vec(-100.0f64..100.0, 1..30)) {
        let n = cols.len();
        let k = kernel_matrix(&cols, &RbfKernel::default());
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(k[i * n + j], k[j * n + i]);
            }
        }
    }

    #[test]
    fn mean_unsigned_bounds_mean_signed(e in prop::collection::vec(-1e3f64..1e3, 1..100)) {
        let s = unsigned_stats(&e).unwrap();
        prop_assert!(s.mean_unsigned + 1e-9 >= s.mean_signed.abs());
        prop_assert!(s.max_unsigned + 1e-9 >= s.mean_unsigned);
        prop_assert!(s.std_unsigned >= 0.0);
    }

    #[test]
    fn method_cells_do_not_depend_on_method_set_order(
        a in validity_set(8), b in validity_set(8), offset in -3.0f64..3.0
    ) {
        let truth = SurfaceSet::constant([2.0, 4.0, 6.0, 8.0, 10.0], 8);
        let mk = |order: [&str; 2]| {
            let mut est = BTreeMap::new();
            for name in order {
                let set = if name == "A" { a.shifted(offset) } else { b.shifted(-offset) };
                est.insert(name.to_string(), set);
            }
            let images = vec![EvalImage {
                image_id: "x".into(),
                region: RegionTag::Parafovea,
                ground_truth: truth.clone(),
                estimates: est,
                mask_only: Vec::new(),
            }];
            evaluate_methods(&images, 1.0, Pooling::PerPixel).unwrap()
        };
        let one = mk(["A", "B"]);
        let two = mk(["B", "A"]);
        prop_assert_eq!(&one.cells, &two.cells);
        for k in 0..NUM_SURFACES {
            let na = one.get(k, None, "A").map(|s| s.n);
            let nb = one.get(k, None, "B").map(|s| s.n);
            prop_assert_eq!(na, nb);
        }
    }
}
