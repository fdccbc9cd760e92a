//! Gaussian-process smoothing of surface candidates (the `SEG+REG` pipeline).
//!
//! Each surface is treated as a scalar function of the column coordinate.
//! Every boundary crossing found in the label map becomes a noisy
//! observation, duplicates included, and the surface estimate is the GP
//! posterior mean under an RBF kernel evaluated at every column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::extract_candidates;
use crate::fcn::predict_labels;
use crate::model::{ClassProbabilityMap, SurfaceSet, NUM_SURFACES, SURFACE_IDS};

/// Largest jitter tried before giving up on a factorization.
pub const MAX_JITTER: f64 = 1e-2;

/// `k(x, x') = variance * exp(-(x - x')^2 / (2 length_scale^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RbfKernel {
    /// px^2
    pub variance: f64,
    /// px
    pub length_scale: f64,
}

impl Default for RbfKernel {
    fn default() -> Self {
        RbfKernel {
            variance: 50.0,
            length_scale: 50.0,
        }
    }
}

#[inline]
pub fn kernel_value(x: f64, x_prime: f64, kernel: &RbfKernel) -> f64 {
    let d = x - x_prime;
    kernel.variance * (-(d * d) / (2.0 * kernel.length_scale * kernel.length_scale)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMean {
    /// Constant prior mean equal to the mean of the observed rows.
    #[default]
    EmpiricalMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub kernel: RbfKernel,
    /// Observation noise, px^2.
    pub noise_variance: f64,
    /// Added to the diagonal; escalated x10 up to [`MAX_JITTER`] on factorization failure.
    pub jitter: f64,
    pub prior_mean: PriorMean,
    /// Keep candidates from every `subsample_stride`-th column only.
    pub subsample_stride: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            kernel: RbfKernel::default(),
            noise_variance: 1.0,
            jitter: 1e-8,
            prior_mean: PriorMean::EmpiricalMean,
            subsample_stride: 1,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let k = &self.kernel;
        if !(k.variance > 0.0 && k.variance.is_finite() && k.length_scale > 0.0 && k.length_scale.is_finite()) {
            return Err(Error::Config("kernel variance and length_scale must be positive".into()));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::Config("noise_variance must be >= 0".into()));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::Config("jitter must be > 0".into()));
        }
        if self.subsample_stride == 0 {
            return Err(Error::Config("subsample_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Paired (column, row) observations; repeated columns are allowed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observations {
    pub columns: Vec<f64>,
    pub rows: Vec<f64>,
}

impl Observations {
    pub fn new(columns: Vec<f64>, rows: Vec<f64>) -> Result<Self> {
        if columns.len() != rows.len() {
            return Err(Error::Shape(format!(
                "{} columns vs {} rows",
                columns.len(),
                rows.len()
            )));
        }
        Ok(Observations { columns, rows })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// Lower-triangular Cholesky factor stored row-major, `n x n`.
struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `a` (row-major, symmetric); `Err((row, pivot))` on a non-positive pivot.
    fn factor(a: &[f64], n: usize) -> std::result::Result<Self, (usize, f64)> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let dot: f64 = l[i * n..i * n + j].iter().zip(&l[j * n..j * n + j]).map(|(x, y)| x * y).sum();
                let s = a[i * n + j] - dot;
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err((i, s));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, l })
    }

    /// Solves `L L^T x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let s: f64 = self.l[i * n..i * n + i].iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = 0.0;
            for (k, yk) in y.iter().enumerate().skip(i + 1) {
                s += self.l[k * n + i] * yk;
            }
            y[i] = (y[i] - s) / self.l[i * n + i];
        }
        y
    }
}

/// Dense kernel matrix `K(x_i, x_j)`, row-major.
pub fn kernel_matrix(columns: &[f64], kernel: &RbfKernel) -> Vec<f64> {
    let n = columns.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_value(columns[i], columns[j], kernel);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Weights `alpha = (K + (noise + jitter) I)^-1 (y - m)` and the prior mean `m`.
fn fit(obs: &Observations, config: &GpConfig) -> Result<(Vec<f64>, f64)> {
    config.validate()?;
    if obs.is_empty() {
        return Err(Error::Shape("posterior needs at least one observation".into()));
    }
    let n = obs.len();
    let mean = match config.prior_mean {
        PriorMean::EmpiricalMean => obs.rows.iter().sum::<f64>() / n as f64,
    };
    let residual: Vec<f64> = obs.rows.iter().map(|y| y - mean).collect();
    let base = kernel_matrix(&obs.columns, &config.kernel);
    let mut jitter = config.jitter;
    loop {
        let mut a = base.clone();
        for i in 0..n {
            a[i * n + i] += config.noise_variance + jitter;
        }
        match Cholesky::factor(&a, n) {
            Ok(chol) => return Ok((chol.solve(&residual), mean)),
            Err((pivot, pivot_value)) => {
                if jitter >= MAX_JITTER {
                    return Err(Error::Cholesky {
                        size: n,
                        jitter,
                        pivot,
                        pivot_value,
                    });
                }
                log::debug!("cholesky failed at row {pivot} with jitter {jitter:e}; escalating");
                jitter = (jitter * 10.0).min(MAX_JITTER);
            }
        }
    }
}

/// GP posterior mean at `queries`, computed with a Cholesky solve.
pub fn posterior_mean(obs: &Observations, queries: &[f64], config: &GpConfig) -> Result<Vec<f64>> {
    let (alpha, mean) = fit(obs, config)?;
    Ok(queries
        .iter()
        .map(|&q| {
            mean + obs
                .columns
                .iter()
                .zip(&alpha)
                .map(|(&x, a)| kernel_value(q, x, &config.kernel) * a)
                .sum::<f64>()
        })
        .collect())
}

/// Smooths one surface from its per-column candidate rows. Every candidate
/// is an observation; the posterior mean is evaluated at columns
/// `0..width` and clamped to `[0, height - 1]`.
pub fn smooth_surface(candidates: &[Vec<usize>], height: usize, config: &GpConfig) -> Result<Vec<f64>> {
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    for (c, list) in candidates.iter().enumerate().step_by(config.subsample_stride.max(1)) {
        for &r in list {
            columns.push(c as f64);
            rows.push(r as f64);
        }
    }
    if rows.is_empty() {
        return Err(Error::Shape("surface has no candidates".into()));
    }
    let obs = Observations { columns, rows };
    let queries: Vec<f64> = (0..candidates.len()).map(|c| c as f64).collect();
    let max = height.saturating_sub(1) as f64;
    Ok(posterior_mean(&obs, &queries, config)?
        .into_iter()
        .map(|v| v.clamp(0.0, max))
        .collect())
}

/// Argmax labels, candidate crossings, and per-surface GP smoothing.
pub fn seg_reg_pipeline(probs: &ClassProbabilityMap, config: &GpConfig) -> Result<SurfaceSet> {
    config.validate()?;
    let cands = extract_candidates(&predict_labels(probs));
    let mut out = SurfaceSet::empty(cands.width());
    let mut unresolved = Vec::new();
    for k in 0..NUM_SURFACES {
        if cands.count(k) == 0 {
            unresolved.push(SURFACE_IDS[k]);
            continue;
        }
        let row = smooth_surface(cands.surface(k), cands.height(), config)?;
        for (c, v) in row.into_iter().enumerate() {
            out.set(k, c, v);
        }
    }
    if unresolved.is_empty() {
        Ok(out)
    } else {
        Err(Error::UnresolvedSurfaces {
            surfaces: unresolved,
            partial: Box::new(out),
        })
    }
}
