//! Dataset manifests: one `[[image]]` block per scan, paths relative to the
//! manifest file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::images::{load_grayscale, save_grayscale, BitDepth};
use super::surfaces::{load_surfaces, save_surfaces};
use crate::error::{Error, Result};
use crate::model::{
    detect_zero_regions, BScan, PatientRecord, RegionTag, ScanRecord, DEFAULT_AXIAL_RES, DEFAULT_TRANSVERSAL_RES,
};

pub const DEFAULT_ZERO_REGION: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub image_id: String,
    pub region: RegionTag,
    pub image_path: PathBuf,
    pub ground_truth_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grader2_path: Option<PathBuf>,
    #[serde(default = "default_transversal")]
    pub transversal_res: f64,
    #[serde(default = "default_axial")]
    pub axial_res: f64,
    /// External estimates keyed by method name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub methods: BTreeMap<String, PathBuf>,
}

fn default_transversal() -> f64 {
    DEFAULT_TRANSVERSAL_RES
}

fn default_axial() -> f64 {
    DEFAULT_AXIAL_RES
}

fn default_true() -> bool {
    true
}

fn default_zero_region() -> usize {
    DEFAULT_ZERO_REGION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Require one fovea, two parafovea and two perifovea scans per patient.
    #[serde(default = "default_true")]
    pub check_regions: bool,
    /// Minimum height and width of an all-zero block excluded from training.
    #[serde(default = "default_zero_region")]
    pub zero_region_height: usize,
    #[serde(default = "default_zero_region")]
    pub zero_region_width: usize,
    #[serde(rename = "image", default)]
    pub images: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1));
            Error::format(source, line, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::format(path, None, e.to_string()))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn load_entry(entry: &ManifestEntry, base: &Path, manifest: &DatasetManifest) -> Result<ScanRecord> {
    let image_path = base.join(&entry.image_path);
    let pixels = load_grayscale(&image_path)?;
    let width = pixels.width();
    let scan = BScan::new(pixels, entry.patient_id.clone(), entry.region, entry.image_id.clone())
        .map_err(|e| Error::format(&image_path, None, e.to_string()))?
        .with_resolution(entry.transversal_res, entry.axial_res);
    let height = scan.height();
    let surfaces = |p: &Path| -> Result<_> {
        let path = base.join(p);
        let set = load_surfaces(&path, Some(width))?;
        set.check_bounds(height).map_err(|e| Error::format(&path, None, e.to_string()))?;
        Ok(set)
    };
    let mut record = ScanRecord::new(scan, surfaces(&entry.ground_truth_path)?);
    record.grader2 = entry.grader2_path.as_deref().map(surfaces).transpose()?;
    for (name, p) in &entry.methods {
        record.external.insert(name.clone(), surfaces(p)?);
    }
    record.ignore_mask = Some(detect_zero_regions(
        &record.scan.pixels,
        manifest.zero_region_height,
        manifest.zero_region_width,
    ));
    Ok(record)
}

/// Loads every scan in the manifest, grouped by patient in order of first appearance.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<PatientRecord>> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let records = manifest
        .images
        .par_iter()
        .map(|e| load_entry(e, base, &manifest))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.scan.image_id.clone()) {
            return Err(Error::format(manifest_path, None, format!("duplicate image_id {}", r.scan.image_id)));
        }
    }
    let mut patients: Vec<PatientRecord> = Vec::new();
    for record in records {
        match patients.iter_mut().find(|p| p.patient_id == record.scan.patient_id) {
            Some(p) => p.scans.push(record),
            None => patients.push(PatientRecord {
                patient_id: record.scan.patient_id.clone(),
                scans: vec![record],
            }),
        }
    }
    if manifest.check_regions {
        for p in &patients {
            p.validate_regions().map_err(|e| Error::format(manifest_path, None, e.to_string()))?;
        }
    }
    Ok(patients)
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes images as 16-bit PNG, surfaces as CSV and a `manifest.toml` into
/// `dir`; returns the manifest path.
pub fn save_dataset(patients: &[PatientRecord], dir: &Path, check_regions: bool) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("surfaces"))?;
    let mut manifest = DatasetManifest {
        check_regions,
        zero_region_height: DEFAULT_ZERO_REGION,
        zero_region_width: DEFAULT_ZERO_REGION,
        images: Vec::new(),
    };
    for record in patients.iter().flat_map(|p| &p.scans) {
        let stem = file_stem(&record.scan.image_id);
        let image_path = PathBuf::from("images").join(format!("{stem}.png"));
        save_grayscale(&record.scan.pixels, &dir.join(&image_path), BitDepth::Sixteen)?;
        let surface_path = |tag: &str| PathBuf::from("surfaces").join(format!("{stem}.{}.csv", file_stem(tag)));
        let ground_truth_path = surface_path("grader1");
        save_surfaces(&record.ground_truth, &dir.join(&ground_truth_path))?;
        let grader2_path = match &record.grader2 {
            Some(g) => {
                let p = surface_path("grader2");
                save_surfaces(g, &dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        let mut methods = BTreeMap::new();
        for (name, set) in &record.external {
            let p = surface_path(&format!("method-{name}"));
            save_surfaces(set, &dir.join(&p))?;
            methods.insert(name.clone(), p);
        }
        manifest.images.push(ManifestEntry {
            patient_id: record.scan.patient_id.clone(),
            image_id: record.scan.image_id.clone(),
            region: record.scan.region,
            image_path,
            ground_truth_path,
            grader2_path,
            transversal_res: record.scan.transversal_res,
            axial_res: record.scan.axial_res,
            methods,
        });
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, manifest.to_toml()?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{generate_synthetic, SynthConfig};
    use crate::model::SurfaceSet;

    fn small() -> Vec<PatientRecord> {
        generate_synthetic(&SynthConfig {
            num_patients: 1,
            width: 20,
            height: 24,
            min_thickness: 2.0,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = small();
        let mut ext = data[0].scans[1].ground_truth.shifted(0.5);
        ext.invalidate(3, 4);
        data[0].scans[1].external.insert("AURA".into(), ext);
        let path = save_dataset(&data, dir.path(), true).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, data);
        assert_eq!(back[0].scans[1].external.keys().collect::<Vec<_>>(), ["AURA"]);
    }

    #[test]
    fn width_mismatch_names_the_surface_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_dataset(&small(), dir.path(), true).unwrap();
        let victim = dir.path().join("surfaces/P01_fovea.grader1.csv");
        crate::io::save_surfaces(&SurfaceSet::constant([1.0, 2.0, 3.0, 4.0, 5.0], 19), &victim).unwrap();
        let err = load_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("P01_fovea.grader1.csv"), "{err}");
    }

    #[test]
    fn region_check_can_be_disabled() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = small();
        data[0].scans.truncate(3);
        let path = save_dataset(&data, dir.path(), true).unwrap();
        assert!(load_dataset(&path).is_err());
        let path = save_dataset(&data, dir.path(), false).unwrap();
        assert_eq!(load_dataset(&path).unwrap()[0].scans.len(), 3);
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let text = "[[image]]\npatient_id = \"P1\"\nregion = \"macula\"\n";
        let err = DatasetManifest::parse(text, Path::new("m.toml")).unwrap_err();
        match err {
            Error::Format { line, .. } => assert!(line.is_some()),
            e => panic!("{e}"),
        }
        let missing = Path::new("/nonexistent/manifest.toml");
        assert!(load_dataset(missing).unwrap_err().to_string().contains("manifest.toml"));
    }
}
