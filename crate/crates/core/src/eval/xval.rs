//! Leave-one-patient-out cross validation of the SEG and SEG+REG pipelines.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{make_folds, FoldSpec};
use super::report::{evaluate_methods, EvalImage, Pooling, ReportTable, INTER_OBSERVER, SEG, SEG_REG};
use crate::error::{Error, Result};
use crate::extraction::seg_pipeline;
use crate::fcn::{train, Network, NetworkConfig, Parameters, TrainingConfig, TrainingSample};
use crate::gp::{seg_reg_pipeline, GpConfig};
use crate::model::{rasterize_surfaces, ClassProbabilityMap, Grid, PatientRecord, ScanRecord, SurfaceSet, NUM_SURFACES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    #[serde(rename = "seg")]
    Seg,
    #[serde(rename = "seg+reg")]
    SegReg,
}

impl Pipeline {
    pub fn method_name(self) -> &'static str {
        match self {
            Pipeline::Seg => SEG,
            Pipeline::SegReg => SEG_REG,
        }
    }

    /// Surfaces from class probabilities. Unresolved surfaces come back as
    /// `Error::UnresolvedSurfaces` carrying the partial result.
    pub fn run(self, probs: &ClassProbabilityMap, gp: &GpConfig) -> Result<SurfaceSet> {
        match self {
            Pipeline::Seg => seg_pipeline(probs),
            Pipeline::SegReg => seg_reg_pipeline(probs, gp),
        }
    }
}

impl std::str::FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "seg" => Ok(Pipeline::Seg),
            "seg+reg" | "segreg" | "seg-reg" => Ok(Pipeline::SegReg),
            other => Err(Error::Config(format!("unknown pipeline {other:?} (expected seg or seg+reg)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XvalConfig {
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub gp: GpConfig,
    pub pipelines: Vec<Pipeline>,
    /// Number of folds; `None` uses one fold per patient.
    pub k: Option<usize>,
    pub pooling: Pooling,
    /// Score external estimates attached to the records.
    pub include_external: bool,
    /// Score grader 2 against grader 1 as the inter-observer baseline.
    pub include_inter_observer: bool,
    /// Train folds concurrently.
    pub parallel_folds: bool,
}

impl Default for XvalConfig {
    fn default() -> Self {
        XvalConfig {
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            gp: GpConfig::default(),
            pipelines: vec![Pipeline::Seg, Pipeline::SegReg],
            k: None,
            pooling: Pooling::PerPixel,
            include_external: true,
            include_inter_observer: true,
            parallel_folds: true,
        }
    }
}

/// Per-image outcome inside a fold.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutImage {
    pub image_id: String,
    pub estimates: BTreeMap<String, SurfaceSet>,
    /// Surfaces a pipeline could not resolve, by method name.
    pub unresolved: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct FoldArtifacts {
    pub spec: FoldSpec,
    pub params: Parameters,
    pub loss_history: Vec<f64>,
    pub held_out: Vec<HeldOutImage>,
}

#[derive(Debug, Clone)]
pub struct XvalOutcome {
    pub table: ReportTable,
    pub folds: Vec<FoldArtifacts>,
}

/// Labels rasterized from the ground truth. Columns where the truth is
/// incomplete or out of order are left out of the loss, as is the record's
/// zero-region mask.
pub fn training_sample(record: &ScanRecord) -> Result<TrainingSample> {
    let (h, w) = (record.scan.height(), record.scan.width());
    let truth = &record.ground_truth;
    if truth.width() != w {
        return Err(Error::Shape(format!(
            "{}: ground truth width {} differs from image width {w}",
            record.scan.image_id,
            truth.width()
        )));
    }
    let mut filled = truth.clone();
    let mut bad_columns = vec![false; w];
    for (c, bad) in bad_columns.iter_mut().enumerate() {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..NUM_SURFACES {
            match truth.get(k, c) {
                Some(v) if v >= prev => prev = v,
                _ => *bad = true,
            }
        }
        if *bad {
            for k in 0..NUM_SURFACES {
                filled.set(k, c, k as f64);
            }
        }
    }
    let labels = rasterize_surfaces(&filled, h, w)?;
    let any_bad = bad_columns.iter().any(|&b| b);
    let ignore = match (&record.ignore_mask, any_bad) {
        (None, false) => None,
        (mask, _) => Some(Grid::from_fn(h, w, |r, c| {
            bad_columns[c] || mask.as_ref().is_some_and(|m| m.at(r, c))
        })),
    };
    Ok(TrainingSample {
        image: record.scan.clone(),
        labels,
        ignore,
    })
}

/// Runs the held-out pipelines on one scan with trained parameters.
pub fn segment_scan(
    net: &Network,
    params: &Parameters,
    record: &ScanRecord,
    pipelines: &[Pipeline],
    gp: &GpConfig,
) -> Result<HeldOutImage> {
    let probs = net.forward(params, &record.scan)?;
    let mut out = HeldOutImage {
        image_id: record.scan.image_id.clone(),
        estimates: BTreeMap::new(),
        unresolved: BTreeMap::new(),
    };
    for &p in pipelines {
        let name = p.method_name().to_string();
        let est = match p.run(&probs, gp) {
            Ok(s) => s,
            Err(Error::UnresolvedSurfaces { surfaces, partial }) => {
                log::warn!("{}: {name} left surfaces {surfaces:?} unresolved", record.scan.image_id);
                out.unresolved.insert(name.clone(), surfaces);
                *partial
            }
            Err(e) => return Err(e),
        };
        out.estimates.insert(name, est);
    }
    Ok(out)
}

fn run_fold(
    spec: &FoldSpec,
    by_patient: &BTreeMap<&str, &PatientRecord>,
    config: &XvalConfig,
) -> Result<FoldArtifacts> {
    let mut train_set = Vec::new();
    for id in &spec.train_patients {
        for record in &by_patient[id.as_str()].scans {
            train_set.push(training_sample(record)?);
        }
    }
    log::info!(
        "fold {}: training on {} images, testing patient {}",
        spec.fold_id,
        train_set.len(),
        spec.test_patient
    );
    let outcome = train(&train_set, &config.training, &config.network)?;
    let net = Network::new(config.network.clone())?;
    let held_out = by_patient[spec.test_patient.as_str()]
        .scans
        .iter()
        .map(|r| segment_scan(&net, &outcome.params, r, &config.pipelines, &config.gp))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldArtifacts {
        spec: spec.clone(),
        params: outcome.params,
        loss_history: outcome.loss_history,
        held_out,
    })
}

/// Trains one network per fold, segments the held-out patient's scans and
/// scores every image once. Deterministic for fixed seeds, with or without
/// parallel folds.
pub fn run_cross_validation(dataset: &[PatientRecord], config: &XvalConfig) -> Result<XvalOutcome> {
    if config.pipelines.is_empty() {
        return Err(Error::Config("no pipelines selected".into()));
    }
    config.training.validate()?;
    config.gp.validate()?;
    Network::new(config.network.clone())?;
    let ids: Vec<String> = dataset.iter().map(|p| p.patient_id.clone()).collect();
    let folds = make_folds(&ids, config.k.unwrap_or(ids.len()))?;
    let by_patient: BTreeMap<&str, &PatientRecord> = dataset.iter().map(|p| (p.patient_id.as_str(), p)).collect();

    let attach = |spec: &FoldSpec, r: Result<FoldArtifacts>| {
        r.map_err(|e| Error::Fold {
            fold: spec.fold_id,
            source: Box::new(e),
        })
    };
    let artifacts: Vec<FoldArtifacts> = if config.parallel_folds {
        folds
            .par_iter()
            .map(|f| attach(f, run_fold(f, &by_patient, config)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<_>>()?
    } else {
        folds
            .iter()
            .map(|f| attach(f, run_fold(f, &by_patient, config)))
            .collect::<Result<_>>()?
    };

    let mut images = Vec::new();
    for fold in &artifacts {
        let patient = by_patient[fold.spec.test_patient.as_str()];
        for (record, held) in patient.scans.iter().zip(&fold.held_out) {
            let mut estimates = held.estimates.clone();
            if config.include_external {
                for (name, set) in &record.external {
                    estimates.insert(name.clone(), set.clone());
                }
            }
            if config.include_inter_observer {
                if let Some(g2) = &record.grader2 {
                    estimates.insert(INTER_OBSERVER.to_string(), g2.clone());
                }
            }
            images.push(EvalImage {
                image_id: held.image_id.clone(),
                region: record.scan.region,
                ground_truth: record.ground_truth.clone(),
                estimates,
                mask_only: Vec::new(),
            });
        }
    }
    let axial_res = dataset
        .first()
        .and_then(|p| p.scans.first())
        .map_or(crate::model::DEFAULT_AXIAL_RES, |s| s.scan.axial_res);
    let table = evaluate_methods(&images, axial_res, config.pooling)?;
    Ok(XvalOutcome {
        table,
        folds: artifacts,
    })
}
