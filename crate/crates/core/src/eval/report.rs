//! Scoring methods against ground truth on a shared valid region, and the
//! report tables built from the scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::metrics::{signed_error, summarize, unsigned_stats, ErrorStats};
use crate::error::{Error, Result};
use crate::model::{intersect_validity, surface_index, RegionTag, SurfaceSet, DEFAULT_AXIAL_RES, NUM_SURFACES, SURFACE_IDS};

pub const SEG: &str = "SEG";
pub const SEG_REG: &str = "SEG+REG";
pub const INTER_OBSERVER: &str = "Inter-Observer";

/// How columns of several images are combined into one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Every evaluated column of every image counts once.
    #[default]
    PerPixel,
    /// Mean errors are averaged per image first; std, max and n stay pooled.
    PerImage,
}

/// Everything needed to score one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalImage {
    pub image_id: String,
    pub region: RegionTag,
    pub ground_truth: SurfaceSet,
    /// Estimates keyed by method name.
    pub estimates: BTreeMap<String, SurfaceSet>,
    /// Extra sets whose validity restricts the evaluated region without being scored.
    pub mask_only: Vec<SurfaceSet>,
}

/// A `(surface, region)` row; `region == None` pools all regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    /// Index into [`SURFACE_IDS`].
    pub surface: usize,
    pub region: Option<RegionTag>,
}

impl RowKey {
    pub fn label(&self) -> String {
        match self.region {
            None => format!("surface {}", SURFACE_IDS[self.surface]),
            Some(r) => format!("surface{} {r}", SURFACE_IDS[self.surface]),
        }
    }
}

/// An `(image, surface)` pair left out because no column was valid for every input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedCell {
    pub image_id: String,
    pub surface: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub max: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MeanUnsigned,
    MeanSigned,
}

impl Metric {
    fn of(self, s: &ErrorStats) -> f64 {
        match self {
            Metric::MeanUnsigned => s.mean_unsigned,
            Metric::MeanSigned => s.mean_signed,
        }
    }
}

/// Layouts of the printed tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// Mean unsigned error per surface over all regions, with mean/max/std rows.
    Unsigned,
    /// Mean signed error per surface over all regions.
    Signed,
    /// Mean unsigned error per surface and region, with mean/max/std rows.
    Regional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    /// Column order: SEG, SEG+REG, external methods, Inter-Observer.
    pub methods: Vec<String>,
    pub cells: BTreeMap<(RowKey, String), ErrorStats>,
    pub excluded: Vec<ExcludedCell>,
    /// µm per pixel used for the converted columns.
    pub axial_res: f64,
    pub pooling: Pooling,
}

/// Sorts method names into report column order.
pub fn canonical_method_order<'a>(names: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = names.into_iter().collect();
    let rank = |m: &str| match m {
        SEG => 0,
        SEG_REG => 1,
        INTER_OBSERVER => 3,
        _ => 2,
    };
    let mut out: Vec<&str> = set.into_iter().collect();
    out.sort_by_key(|m| (rank(m), *m));
    out.into_iter().map(str::to_string).collect()
}

#[derive(Default)]
struct Accumulator {
    errors: Vec<f64>,
    per_image: Vec<(f64, f64)>,
}

/// Scores every method on every image, restricted per (image, surface) to
/// the columns valid in the ground truth, every estimate and every mask-only set.
pub fn evaluate_methods(images: &[EvalImage], axial_res: f64, pooling: Pooling) -> Result<ReportTable> {
    let methods = canonical_method_order(images.iter().flat_map(|im| im.estimates.keys().map(String::as_str)));
    let mut acc: BTreeMap<(RowKey, String), Accumulator> = BTreeMap::new();
    let mut excluded = Vec::new();
    for image in images {
        for m in &methods {
            if !image.estimates.contains_key(m) {
                return Err(Error::Config(format!("image {} has no estimate for method {m}", image.image_id)));
            }
        }
        let mut inputs: Vec<&SurfaceSet> = vec![&image.ground_truth];
        inputs.extend(methods.iter().map(|m| &image.estimates[m]));
        inputs.extend(image.mask_only.iter());
        let mask = intersect_validity(&inputs)?;
        for (k, surface_mask) in mask.iter().enumerate() {
            if !surface_mask.iter().any(|&v| v) {
                excluded.push(ExcludedCell {
                    image_id: image.image_id.clone(),
                    surface: SURFACE_IDS[k],
                });
                continue;
            }
            for m in &methods {
                let e = signed_error(
                    image.ground_truth.positions(k),
                    image.estimates[m].positions(k),
                    surface_mask,
                )?;
                let stats = unsigned_stats(&e.values)?;
                for region in [None, Some(image.region)] {
                    let cell = acc.entry((RowKey { surface: k, region }, m.clone())).or_default();
                    cell.errors.extend_from_slice(&e.values);
                    cell.per_image.push((stats.mean_signed, stats.mean_unsigned));
                }
            }
        }
    }
    let mut cells = BTreeMap::new();
    for (key, a) in acc {
        let mut stats = unsigned_stats(&a.errors)?;
        if pooling == Pooling::PerImage {
            let n = a.per_image.len() as f64;
            stats.mean_signed = a.per_image.iter().map(|p| p.0).sum::<f64>() / n;
            stats.mean_unsigned = a.per_image.iter().map(|p| p.1).sum::<f64>() / n;
        }
        cells.insert(key, stats);
    }
    Ok(ReportTable {
        methods,
        cells,
        excluded,
        axial_res,
        pooling,
    })
}

/// Scores a single method; `mask_inputs` are the other methods' estimates
/// per image, used only to restrict the evaluated region.
pub fn evaluate_method(
    name: &str,
    estimates: &[SurfaceSet],
    ground_truth: &[SurfaceSet],
    regions: &[RegionTag],
    mask_inputs: &[Vec<SurfaceSet>],
) -> Result<ReportTable> {
    if estimates.len() != ground_truth.len() || regions.len() != ground_truth.len() {
        return Err(Error::Shape("estimates, ground truth and regions differ in length".into()));
    }
    let images = (0..estimates.len())
        .map(|i| EvalImage {
            image_id: format!("image{i}"),
            region: regions[i],
            ground_truth: ground_truth[i].clone(),
            estimates: BTreeMap::from([(name.to_string(), estimates[i].clone())]),
            mask_only: mask_inputs.get(i).cloned().unwrap_or_default(),
        })
        .collect::<Vec<_>>();
    evaluate_methods(&images, DEFAULT_AXIAL_RES, Pooling::PerPixel)
}

impl ReportTable {
    pub fn get(&self, surface: usize, region: Option<RegionTag>, method: &str) -> Option<&ErrorStats> {
        self.cells.get(&(RowKey { surface, region }, method.to_string()))
    }

    /// Row keys in table order.
    pub fn rows(&self, regional: bool) -> Vec<RowKey> {
        let mut out = Vec::new();
        for surface in 0..NUM_SURFACES {
            if regional {
                for r in RegionTag::ALL {
                    out.push(RowKey {
                        surface,
                        region: Some(r),
                    });
                }
            } else {
                out.push(RowKey { surface, region: None });
            }
        }
        out
    }

    /// Mean, max and population std of `metric` across the table rows that exist for `method`.
    pub fn summary(&self, method: &str, regional: bool, metric: Metric) -> Option<Summary> {
        let values: Vec<f64> = self
            .rows(regional)
            .into_iter()
            .filter_map(|k| self.cells.get(&(k, method.to_string())))
            .map(|s| metric.of(s))
            .collect();
        summarize(&values).map(|(mean, max, std)| Summary { mean, max, std })
    }

    /// Aggregate mean unsigned error of a method (mean over surface rows).
    pub fn aggregate_unsigned(&self, method: &str) -> Option<f64> {
        self.summary(method, false, Metric::MeanUnsigned).map(|s| s.mean)
    }

    /// Aligned text table.
    pub fn render_text(&self, kind: TableKind) -> String {
        let (regional, metric, title) = match kind {
            TableKind::Unsigned => (false, Metric::MeanUnsigned, "Mean unsigned error aggregated across all regions (px)"),
            TableKind::Signed => (false, Metric::MeanSigned, "Mean signed error across all regions (px)"),
            TableKind::Regional => (true, Metric::MeanUnsigned, "Mean unsigned error for all surfaces and regions (px)"),
        };
        let label_w = if regional { 20 } else { 11 };
        let widths: Vec<usize> = self.methods.iter().map(|m| m.len().max(6)).collect();
        let mut out = String::new();
        let _ = writeln!(out, "{title}");
        let mut header = format!("{:<label_w$}", "");
        for (m, w) in self.methods.iter().zip(&widths) {
            let _ = write!(header, "  {m:>w$}");
        }
        let rule = "-".repeat(header.len());
        let _ = writeln!(out, "{rule}\n{header}\n{rule}");
        let fmt = |v: Option<f64>, w: usize| match v {
            Some(v) => format!("  {v:>w$.2}"),
            None => format!("  {:>w$}", "-"),
        };
        for key in self.rows(regional) {
            let mut line = format!("{:<label_w$}", key.label());
            for (m, &w) in self.methods.iter().zip(&widths) {
                line += &fmt(self.cells.get(&(key, m.clone())).map(|s| metric.of(s)), w);
            }
            let _ = writeln!(out, "{line}");
        }
        if kind != TableKind::Signed {
            let _ = writeln!(out, "{rule}");
            for (name, pick) in [("mean", 0), ("max", 1), ("std", 2)] {
                let mut line = format!("{name:<label_w$}");
                for (m, &w) in self.methods.iter().zip(&widths) {
                    let v = self.summary(m, regional, metric).map(|s| [s.mean, s.max, s.std][pick]);
                    line += &fmt(v, w);
                }
                let _ = writeln!(out, "{line}");
            }
        }
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(
            out,
            "std: population standard deviation across rows; 1 px = {} um axial; pooling: {}",
            self.axial_res,
            match self.pooling {
                Pooling::PerPixel => "per pixel",
                Pooling::PerImage => "per image",
            }
        );
        if !self.excluded.is_empty() {
            let _ = writeln!(out, "excluded (image, surface) cells with an empty valid region: {}", self.excluded.len());
        }
        out
    }

    /// One row per `(surface, region, method)` cell, then summary rows.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record([
            "surface",
            "region",
            "method",
            "n",
            "mean_signed_px",
            "mean_unsigned_px",
            "std_unsigned_px",
            "max_unsigned_px",
            "mean_signed_um",
            "mean_unsigned_um",
        ])
        .map_err(io)?;
        let mut keys: Vec<RowKey> = self.rows(false);
        keys.extend(self.rows(true));
        for key in keys {
            for m in &self.methods {
                let Some(s) = self.cells.get(&(key, m.clone())) else {
                    continue;
                };
                let region = key.region.map_or("all".to_string(), |r| r.to_string());
                w.write_record([
                    SURFACE_IDS[key.surface].to_string(),
                    region,
                    m.clone(),
                    s.n.to_string(),
                    s.mean_signed.to_string(),
                    s.mean_unsigned.to_string(),
                    s.std_unsigned.to_string(),
                    s.max_unsigned.to_string(),
                    (s.mean_signed * self.axial_res).to_string(),
                    (s.mean_unsigned * self.axial_res).to_string(),
                ])
                .map_err(io)?;
            }
        }
        for (scope, regional) in [("all", false), ("regional", true)] {
            for m in &self.methods {
                let Some(s) = self.summary(m, regional, Metric::MeanUnsigned) else {
                    continue;
                };
                for (name, v) in [("mean", s.mean), ("max", s.max), ("std", s.std)] {
                    w.write_record([
                        name.to_string(),
                        scope.to_string(),
                        m.clone(),
                        String::new(),
                        String::new(),
                        v.to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        (v * self.axial_res).to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the cell rows of [`ReportTable::write_csv`] output; summary rows are recomputed.
    pub fn read_csv(input: impl Read, source: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut cells = BTreeMap::new();
        let mut axial_res = None;
        for (i, rec) in r.records().enumerate() {
            let line = Some(i + 2);
            let rec = rec.map_err(|e| Error::format(source, line, e.to_string()))?;
            if rec.len() != 10 {
                return Err(Error::format(source, line, format!("expected 10 fields, got {}", rec.len())));
            }
            let Ok(id) = rec[0].parse::<u8>() else {
                continue; // summary row
            };
            let surface = surface_index(id).ok_or_else(|| Error::format(source, line, format!("unknown surface {id}")))?;
            let region = match &rec[1] {
                "all" => None,
                s => Some(s.parse::<RegionTag>().map_err(|e| Error::format(source, line, e.to_string()))?),
            };
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .parse::<f64>()
                    .map_err(|e| Error::format(source, line, format!("field {j}: {e}")))
            };
            let stats = ErrorStats {
                n: rec[3].parse().map_err(|e| Error::format(source, line, format!("n: {e}")))?,
                mean_signed: num(4)?,
                mean_unsigned: num(5)?,
                std_unsigned: num(6)?,
                max_unsigned: num(7)?,
            };
            if axial_res.is_none() && stats.mean_unsigned != 0.0 {
                axial_res = Some(num(9)? / stats.mean_unsigned);
            }
            cells.insert((RowKey { surface, region }, rec[2].to_string()), stats);
        }
        let methods = canonical_method_order(cells.keys().map(|(_, m)| m.as_str()));
        Ok(ReportTable {
            methods,
            cells,
            excluded: Vec::new(),
            axial_res: axial_res.unwrap_or(DEFAULT_AXIAL_RES),
            pooling: Pooling::PerPixel,
        })
    }
}
