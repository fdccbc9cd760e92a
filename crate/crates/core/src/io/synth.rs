//! Synthetic layered B-scans with known surfaces.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    detect_zero_regions, rasterize_surfaces, BScan, Grid, PatientRecord, RegionTag, ScanRecord, SurfaceSet,
    DEFAULT_AXIAL_RES, DEFAULT_TRANSVERSAL_RES, NUM_CLASSES, NUM_SURFACES,
};

/// Region of each of a patient's five scans, in generation order.
pub const SCAN_REGIONS: [RegionTag; 5] = [
    RegionTag::Fovea,
    RegionTag::Parafovea,
    RegionTag::Parafovea,
    RegionTag::Perifovea,
    RegionTag::Perifovea,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_patients: usize,
    pub width: usize,
    pub height: usize,
    /// Shortest sinusoid period used for surface undulation, px.
    pub smoothness: f64,
    /// Minimum band thickness between consecutive surfaces, px.
    pub min_thickness: f64,
    /// Standard deviation of the Gaussian foveal pit profile, px.
    pub pit_sigma: f64,
    /// Mean intensity of each of the six layers.
    pub layer_means: [f64; NUM_CLASSES],
    /// Standard deviation of additive Gaussian intensity noise.
    pub noise_std: f64,
    /// Per-column std of the simulated second grader's deviation, px.
    pub grader2_std: f64,
    pub transversal_res: f64,
    pub axial_res: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_patients: 3,
            width: 128,
            height: 128,
            smoothness: 160.0,
            min_thickness: 3.0,
            pit_sigma: 40.0,
            layer_means: [0.05, 0.75, 0.45, 0.2, 0.55, 0.9],
            noise_std: 0.1,
            grader2_std: 0.8,
            transversal_res: DEFAULT_TRANSVERSAL_RES,
            axial_res: DEFAULT_AXIAL_RES,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::Config("synthetic images must be at least 2x2".into()));
        }
        if self.num_patients == 0 {
            return Err(Error::Config("num_patients must be >= 1".into()));
        }
        if !(self.min_thickness > 0.0) || self.min_thickness * NUM_SURFACES as f64 > self.height as f64 {
            return Err(Error::Config(format!(
                "min_thickness {} x {NUM_SURFACES} does not fit in height {}",
                self.min_thickness, self.height
            )));
        }
        if self.layer_means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Config("layer means must lie in [0, 1]".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.grader2_std >= 0.0) || !(self.smoothness > 0.0) || !(self.pit_sigma > 0.0) {
            return Err(Error::Config(
                "noise and grader2 std must be nonnegative, smoothness and pit_sigma positive".into(),
            ));
        }
        Ok(())
    }
}

/// Random smooth function with values in `[-1, 1]`.
struct Undulation {
    terms: Vec<(f64, f64, f64)>,
}

impl Undulation {
    fn sample(rng: &mut impl Rng, min_period: f64) -> Self {
        let terms = (0..3)
            .map(|j| {
                let amp = rng.random_range(0.3..1.0);
                let period = min_period * (1.0 + j as f64) * rng.random_range(1.0..2.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                (amp, period, phase)
            })
            .collect();
        Undulation { terms }
    }

    fn at(&self, x: f64) -> f64 {
        let total: f64 = self.terms.iter().map(|t| t.0).sum();
        self.terms
            .iter()
            .map(|&(a, p, ph)| a * (2.0 * PI * x / p + ph).sin())
            .sum::<f64>()
            / total
    }
}

/// Fractions of the image height: top surface depth, then the four band thicknesses.
const TOP_DEPTH: f64 = 0.22;
const BAND_FRACTIONS: [f64; 4] = [0.06, 0.14, 0.12, 0.26];

/// Samples five ordered smooth surfaces with bands at least `min_thickness` thick.
pub fn sample_surfaces(config: &SynthConfig, region: RegionTag, rng: &mut impl Rng) -> SurfaceSet {
    let (w, h) = (config.width, config.height as f64);
    let top = Undulation::sample(rng, config.smoothness * 2.0);
    let bands: Vec<Undulation> = (0..4).map(|_| Undulation::sample(rng, config.smoothness)).collect();
    let center = w as f64 * rng.random_range(0.4..0.6);
    let pit_width = config.pit_sigma;

    let mut rows = vec![vec![0.0; w]; NUM_SURFACES];
    for c in 0..w {
        let x = c as f64;
        rows[0][c] = h * (TOP_DEPTH + 0.05 * top.at(x));
        let pit = match region {
            RegionTag::Fovea => 0.75 * (-(x - center).powi(2) / (2.0 * pit_width * pit_width)).exp(),
            _ => 0.0,
        };
        for k in 0..4 {
            let mut t = h * BAND_FRACTIONS[k] * (1.0 + 0.35 * bands[k].at(x));
            if k < 2 {
                t *= 1.0 - pit;
            }
            rows[k + 1][c] = rows[k][c] + t.max(config.min_thickness);
        }
    }
    // Compress everything below the top surface if the stack overruns the image.
    let bottom_limit = h - 2.0;
    for c in 0..w {
        let top_row = rows[0][c].max(0.0);
        let span = rows[NUM_SURFACES - 1][c] - top_row;
        let available = bottom_limit - top_row;
        if span > available {
            let min_span = config.min_thickness * (NUM_SURFACES - 1) as f64;
            let shrink = ((available - min_span) / (span - min_span)).max(0.0);
            let mut prev = top_row;
            rows[0][c] = top_row;
            for k in 1..NUM_SURFACES {
                let t = rows[k][c] - (rows[k - 1][c]);
                let extra = (t - config.min_thickness).max(0.0) * shrink;
                let v = prev + config.min_thickness + extra;
                rows[k][c] = v;
                prev = v;
            }
        }
    }
    SurfaceSet::from_rows(rows).expect("five equal-width rows")
}

fn quantize16(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

/// Generates `num_patients` records of five scans each, with grader-1 ground
/// truth and a perturbed second grader. A pure function of the config.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<PatientRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let grader_noise = Normal::new(0.0, config.grader2_std).map_err(|e| Error::Config(e.to_string()))?;
    let (h, w) = (config.height, config.width);
    let mut patients = Vec::with_capacity(config.num_patients);
    for p in 0..config.num_patients {
        let patient_id = format!("P{:02}", p + 1);
        let mut scans = Vec::with_capacity(SCAN_REGIONS.len());
        let mut region_seen = [0usize; 3];
        for region in SCAN_REGIONS {
            let idx = RegionTag::ALL.iter().position(|&r| r == region).unwrap();
            region_seen[idx] += 1;
            let image_id = match region {
                RegionTag::Fovea => format!("{patient_id}_{region}"),
                _ => format!("{patient_id}_{region}{}", region_seen[idx]),
            };
            let truth = sample_surfaces(config, region, &mut rng);
            let labels = rasterize_surfaces(&truth, h, w)?;
            let pixels = Grid::from_fn(h, w, |r, c| {
                let mean = config.layer_means[labels.at(r, c) as usize];
                quantize16(mean + noise.sample(&mut rng))
            });
            let mut grader2 = truth.clone();
            for k in 0..NUM_SURFACES {
                for c in 0..w {
                    let v = truth.get(k, c).unwrap() + grader_noise.sample(&mut rng);
                    grader2.set(k, c, v.clamp(0.0, (h - 1) as f64));
                }
            }
            let scan = BScan::new(pixels, patient_id.clone(), region, image_id)?
                .with_resolution(config.transversal_res, config.axial_res);
            let mut record = ScanRecord::new(scan, truth);
            record.grader2 = Some(grader2);
            record.ignore_mask = Some(detect_zero_regions(&record.scan.pixels, 32, 32));
            scans.push(record);
        }
        patients.push(PatientRecord { patient_id, scans });
    }
    Ok(patients)
}
