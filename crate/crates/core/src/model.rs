//! Core data model: B-scans, annotated surfaces, label and probability maps,
//! patient records, and the conversions among them.
//!
//! Rows index the axial (depth) direction, columns the transversal direction.
//! Surfaces are stored per column as fractional row coordinates. Layers are
//! the six bands cut out by the five annotated surfaces: class `k` is the
//! band below the `k`-th surface (class 0 is above surface 1, class 5 below
//! surface 11).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset numbering of the annotated surfaces, top to bottom.
pub const SURFACE_IDS: [u8; 5] = [1, 2, 4, 6, 11];
pub const NUM_SURFACES: usize = SURFACE_IDS.len();
pub const NUM_CLASSES: usize = NUM_SURFACES + 1;

pub const DEFAULT_WIDTH: usize = 768;
pub const DEFAULT_HEIGHT: usize = 496;
/// µm per pixel.
pub const DEFAULT_TRANSVERSAL_RES: f64 = 11.11;
/// µm per pixel.
pub const DEFAULT_AXIAL_RES: f64 = 3.867;

/// Index (0..5) of a dataset surface id.
pub fn surface_index(id: u8) -> Option<usize> {
    SURFACE_IDS.iter().position(|&s| s == id)
}

/// Dense row-major 2-D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Grid { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Grid { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.width + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.data[r * self.width + c]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.width + c] = value;
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.height).map(|r| self.at(r, c)).collect()
    }
}

/// Per-pixel layer labels in `0..NUM_CLASSES`.
pub type LabelMap = Grid<u8>;

/// Per-pixel boolean mask.
pub type PixelMask = Grid<bool>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionTag {
    Fovea,
    Parafovea,
    Perifovea,
}

impl RegionTag {
    pub const ALL: [RegionTag; 3] = [RegionTag::Fovea, RegionTag::Parafovea, RegionTag::Perifovea];

    /// Scans of each region in one patient record.
    pub fn expected_count(self) -> usize {
        match self {
            RegionTag::Fovea => 1,
            RegionTag::Parafovea | RegionTag::Perifovea => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionTag::Fovea => "fovea",
            RegionTag::Parafovea => "parafovea",
            RegionTag::Perifovea => "perifovea",
        }
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fovea" => Ok(RegionTag::Fovea),
            "parafovea" => Ok(RegionTag::Parafovea),
            "perifovea" => Ok(RegionTag::Perifovea),
            other => Err(Error::Config(format!("unknown region '{other}'"))),
        }
    }
}

/// One grayscale OCT image, intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BScan {
    pub pixels: Grid<f64>,
    /// µm per pixel along a row.
    pub transversal_res: f64,
    /// µm per pixel along a column.
    pub axial_res: f64,
    pub patient_id: String,
    pub region: RegionTag,
    pub image_id: String,
}

impl BScan {
    pub fn new(
        pixels: Grid<f64>,
        patient_id: impl Into<String>,
        region: RegionTag,
        image_id: impl Into<String>,
    ) -> Result<Self> {
        if pixels.height() < 2 || pixels.width() < 2 {
            return Err(Error::Shape(format!(
                "B-scan must be at least 2x2, got {}x{}",
                pixels.height(),
                pixels.width()
            )));
        }
        if let Some(v) = pixels.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("intensity {v} outside [0, 1]")));
        }
        Ok(BScan {
            pixels,
            transversal_res: DEFAULT_TRANSVERSAL_RES,
            axial_res: DEFAULT_AXIAL_RES,
            patient_id: patient_id.into(),
            region,
            image_id: image_id.into(),
        })
    }

    pub fn with_resolution(mut self, transversal_res: f64, axial_res: f64) -> Self {
        self.transversal_res = transversal_res;
        self.axial_res = axial_res;
        self
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }
}

/// Axial positions of the five annotated surfaces, one value per column,
/// with a validity flag per (surface, column).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceSet {
    positions: Vec<Vec<f64>>,
    valid: Vec<Vec<bool>>,
}

/// Equal validity and equal positions on valid entries.
impl PartialEq for SurfaceSet {
    fn eq(&self, other: &Self) -> bool {
        self.valid == other.valid
            && self.positions.iter().zip(&self.valid).zip(&other.positions).all(|((a, v), b)| {
                a.iter().zip(v).zip(b).all(|((x, &ok), y)| !ok || x == y)
            })
    }
}

impl SurfaceSet {
    /// All positions invalid.
    pub fn empty(width: usize) -> Self {
        SurfaceSet {
            positions: vec![vec![f64::NAN; width]; NUM_SURFACES],
            valid: vec![vec![false; width]; NUM_SURFACES],
        }
    }

    /// Builds a set from per-surface rows; non-finite entries are invalid.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != NUM_SURFACES {
            return Err(Error::Shape(format!("expected {NUM_SURFACES} surfaces, got {}", rows.len())));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("surface rows differ in width".into()));
        }
        let valid = rows.iter().map(|r| r.iter().map(|v| v.is_finite()).collect()).collect();
        let positions = rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| if v.is_finite() { v } else { f64::NAN }).collect())
            .collect();
        Ok(SurfaceSet { positions, valid })
    }

    /// Every surface at a constant row across `width` columns.
    pub fn constant(rows: [f64; NUM_SURFACES], width: usize) -> Self {
        SurfaceSet::from_rows(rows.iter().map(|&v| vec![v; width]).collect()).expect("constant rows are well-formed")
    }

    pub fn width(&self) -> usize {
        self.positions[0].len()
    }

    pub fn get(&self, surface: usize, column: usize) -> Option<f64> {
        self.valid[surface][column].then(|| self.positions[surface][column])
    }

    pub fn set(&mut self, surface: usize, column: usize, row: f64) {
        self.positions[surface][column] = row;
        self.valid[surface][column] = true;
    }

    pub fn invalidate(&mut self, surface: usize, column: usize) {
        self.positions[surface][column] = f64::NAN;
        self.valid[surface][column] = false;
    }

    pub fn is_valid(&self, surface: usize, column: usize) -> bool {
        self.valid[surface][column]
    }

    /// Row of positions for one surface; invalid entries are NaN.
    pub fn positions(&self, surface: usize) -> &[f64] {
        &self.positions[surface]
    }

    pub fn validity(&self, surface: usize) -> &[bool] {
        &self.valid[surface]
    }

    pub fn is_fully_valid(&self) -> bool {
        self.valid.iter().all(|v| v.iter().all(|&b| b))
    }

    /// Translates every valid position by `delta` rows.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        for row in out.positions.iter_mut() {
            for v in row.iter_mut() {
                *v += delta;
            }
        }
        out
    }

    /// Checks positions lie in `[0, height - 1]` wherever valid.
    pub fn check_bounds(&self, height: usize) -> Result<()> {
        let max = height as f64 - 1.0;
        for (k, row) in self.positions.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if self.valid[k][c] && !(0.0..=max).contains(&v) {
                    return Err(Error::Shape(format!(
                        "surface {} at column {c} has row {v} outside [0, {max}]",
                        SURFACE_IDS[k]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Result of [`validate_surface_ordering`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderingReport {
    pub ordered: bool,
    /// `(surface id, column)` of each surface found above the valid surface preceding it.
    pub violations: Vec<(u8, usize)>,
}

/// Checks `pos(1) <= pos(2) <= pos(4) <= pos(6) <= pos(11)` per column,
/// comparing each valid surface with the nearest valid surface above it.
pub fn validate_surface_ordering(surfaces: &SurfaceSet) -> OrderingReport {
    let mut violations = Vec::new();
    for c in 0..surfaces.width() {
        let mut above: Option<f64> = None;
        for k in 0..NUM_SURFACES {
            if let Some(v) = surfaces.get(k, c) {
                if above.is_some_and(|a| v < a) {
                    violations.push((SURFACE_IDS[k], c));
                }
                above = Some(v);
            }
        }
    }
    OrderingReport {
        ordered: violations.is_empty(),
        violations,
    }
}

/// Paints the six layer bands: pixel `(r, c)` gets the number of surfaces
/// with `pos(s, c) <= r`.
pub fn rasterize_surfaces(surfaces: &SurfaceSet, height: usize, width: usize) -> Result<LabelMap> {
    if surfaces.width() != width {
        return Err(Error::Shape(format!(
            "surface width {} does not match label width {width}",
            surfaces.width()
        )));
    }
    for k in 0..NUM_SURFACES {
        if let Some(c) = surfaces.validity(k).iter().position(|&v| !v) {
            return Err(Error::PartiallyValid {
                surface: SURFACE_IDS[k],
                column: c,
            });
        }
    }
    let report = validate_surface_ordering(surfaces);
    if !report.ordered {
        return Err(Error::NotOrdered {
            violations: report.violations,
        });
    }
    let mut labels = Grid::filled(height, width, 0u8);
    for c in 0..width {
        for r in 0..height {
            let row = r as f64;
            let class = (0..NUM_SURFACES).filter(|&k| surfaces.positions[k][c] <= row).count();
            labels.set(r, c, class as u8);
        }
    }
    Ok(labels)
}

/// Per-surface, per-column validity mask.
pub type ValidityMask = Vec<Vec<bool>>;

/// Columns where every input set is valid, per surface.
pub fn intersect_validity(sets: &[&SurfaceSet]) -> Result<ValidityMask> {
    let Some(first) = sets.first() else {
        return Err(Error::Shape("intersect_validity needs at least one surface set".into()));
    };
    let width = first.width();
    let mut mask = vec![vec![true; width]; NUM_SURFACES];
    for set in sets {
        if set.width() != width {
            return Err(Error::Shape(format!(
                "surface sets differ in width ({} vs {width})",
                set.width()
            )));
        }
        for (k, row) in mask.iter_mut().enumerate() {
            for (m, &v) in row.iter_mut().zip(set.validity(k)) {
                *m &= v;
            }
        }
    }
    Ok(mask)
}

/// Per-pixel class posteriors, stored class-major (`class, row, column`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilityMap {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl ClassProbabilityMap {
    pub fn from_class_major(num_classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_classes * height * width {
            return Err(Error::Shape(format!(
                "probability map {num_classes}x{height}x{width} needs {} values, got {}",
                num_classes * height * width,
                data.len()
            )));
        }
        Ok(ClassProbabilityMap {
            height,
            width,
            num_classes,
            data,
        })
    }

    /// Uniform `1 / num_classes` at every pixel.
    pub fn uniform(num_classes: usize, height: usize, width: usize) -> Self {
        ClassProbabilityMap {
            height,
            width,
            num_classes,
            data: vec![1.0 / num_classes as f64; num_classes * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn prob(&self, r: usize, c: usize, class: usize) -> f64 {
        self.data[(class * self.height + r) * self.width + c]
    }

    #[inline]
    pub fn set_prob(&mut self, r: usize, c: usize, class: usize, p: f64) {
        self.data[(class * self.height + r) * self.width + c] = p;
    }

    pub fn class_plane(&self, class: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[class * n..(class + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest deviation of a per-pixel probability sum from one.
    pub fn max_normalization_error(&self) -> f64 {
        let n = self.height * self.width;
        (0..n)
            .map(|i| {
                let s: f64 = (0..self.num_classes).map(|k| self.data[k * n + i]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// One-hot encoding of a label map.
pub fn one_hot(labels: &LabelMap, num_classes: usize) -> ClassProbabilityMap {
    let (h, w) = labels.shape();
    let mut data = vec![0.0; num_classes * h * w];
    for (i, &l) in labels.as_slice().iter().enumerate() {
        data[l as usize * h * w + i] = 1.0;
    }
    ClassProbabilityMap {
        height: h,
        width: w,
        num_classes,
        data,
    }
}

/// One annotated image with its references.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub scan: BScan,
    /// First grader, used as ground truth.
    pub ground_truth: SurfaceSet,
    /// Second grader, the inter-observer baseline.
    pub grader2: Option<SurfaceSet>,
    /// Estimates of third-party algorithms keyed by method name.
    pub external: BTreeMap<String, SurfaceSet>,
    /// Pixels excluded from the training loss (all-zero regions).
    pub ignore_mask: Option<PixelMask>,
}

impl ScanRecord {
    pub fn new(scan: BScan, ground_truth: SurfaceSet) -> Self {
        ScanRecord {
            scan,
            ground_truth,
            grader2: None,
            external: BTreeMap::new(),
            ignore_mask: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub scans: Vec<ScanRecord>,
}

impl PatientRecord {
    /// Checks for five scans: one fovea, two parafovea, two perifovea.
    pub fn validate_regions(&self) -> Result<()> {
        if self.scans.len() != 5 {
            return Err(Error::Config(format!(
                "patient {} has {} scans, expected 5",
                self.patient_id,
                self.scans.len()
            )));
        }
        for region in RegionTag::ALL {
            let n = self.scans.iter().filter(|s| s.scan.region == region).count();
            if n != region.expected_count() {
                return Err(Error::Config(format!(
                    "patient {} has {n} {region} scan(s), expected {}",
                    self.patient_id,
                    region.expected_count()
                )));
            }
        }
        Ok(())
    }
}

/// Marks every pixel covered by some all-zero `min_height x min_width` window.
pub fn detect_zero_regions(pixels: &Grid<f64>, min_height: usize, min_width: usize) -> PixelMask {
    let (h, w) = pixels.shape();
    let mut mask = Grid::filled(h, w, false);
    if min_height == 0 || min_width == 0 || min_height > h || min_width > w {
        return mask;
    }
    // Summed-area table of nonzero pixels.
    let mut sat = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut run = 0u32;
        for c in 0..w {
            run += u32::from(pixels.at(r, c) != 0.0);
            sat[(r + 1) * (w + 1) + c + 1] = sat[r * (w + 1) + c + 1] + run;
        }
    }
    // Difference array accumulating window coverage.
    let mut cover = vec![0i32; (h + 1) * (w + 1)];
    for r in 0..=h - min_height {
        for c in 0..=w - min_width {
            let (r1, c1) = (r + min_height, c + min_width);
            let nonzero = sat[r1 * (w + 1) + c1] + sat[r * (w + 1) + c] - sat[r * (w + 1) + c1] - sat[r1 * (w + 1) + c];
            if nonzero == 0 {
                cover[r * (w + 1) + c] += 1;
                cover[r * (w + 1) + c1] -= 1;
                cover[r1 * (w + 1) + c] -= 1;
                cover[r1 * (w + 1) + c1] += 1;
            }
        }
    }
    for r in 0..h {
        for c in 0..w {
            if r > 0 {
                cover[r * (w + 1) + c] += cover[(r - 1) * (w + 1) + c];
            }
        }
    }
    for r in 0..h {
        let mut acc = 0;
        for c in 0..w {
            acc += cover[r * (w + 1) + c];
            if acc > 0 {
                mask.set(r, c, true);
            }
        }
    }
    mask
}
