//! Per-column surface errors and their summary statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signed differences `reference - estimate` on the columns selected by a mask.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorVector {
    pub columns: Vec<usize>,
    pub values: Vec<f64>,
}

impl ErrorVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn signed_error(reference: &[f64], estimate: &[f64], mask: &[bool]) -> Result<ErrorVector> {
    if reference.len() != estimate.len() || reference.len() != mask.len() {
        return Err(Error::Shape(format!(
            "reference ({}), estimate ({}) and mask ({}) widths differ",
            reference.len(),
            estimate.len(),
            mask.len()
        )));
    }
    let mut out = ErrorVector::default();
    for (c, ((&r, &e), &m)) in reference.iter().zip(estimate).zip(mask).enumerate() {
        if m {
            out.columns.push(c);
            out.values.push(r - e);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean_signed: f64,
    pub mean_unsigned: f64,
    /// Population standard deviation of the unsigned errors.
    pub std_unsigned: f64,
    pub max_unsigned: f64,
    pub n: usize,
}

/// Mean signed error, and mean / population std / max of `|e|`.
pub fn unsigned_stats(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::EmptyStats);
    }
    let n = errors.len() as f64;
    let mean_signed = errors.iter().sum::<f64>() / n;
    let mean_unsigned = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let var = errors.iter().map(|e| (e.abs() - mean_unsigned).powi(2)).sum::<f64>() / n;
    let max_unsigned = errors.iter().map(|e| e.abs()).fold(0.0, f64::max);
    Ok(ErrorStats {
        mean_signed,
        mean_unsigned,
        std_unsigned: var.sqrt(),
        max_unsigned,
        n: errors.len(),
    })
}

/// Mean, max and population std of a list of values.
pub fn summarize(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Some((mean, max, std))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_error_definition() {
        assert_eq!(signed_error(&[10.0, 12.0], &[10.0, 12.0], &[true; 2]).unwrap().values, vec![0.0, 0.0]);
        assert_eq!(signed_error(&[10.0], &[13.0], &[true]).unwrap().values, vec![-3.0]);
        let e = signed_error(&[10.0, 99.0], &[11.0, 0.0], &[true, false]).unwrap();
        assert_eq!(e.values, vec![-1.0]);
        assert_eq!(e.columns, vec![0]);
        assert!(signed_error(&[1.0], &[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn stats_examples() {
        let s = unsigned_stats(&[-3.0, 3.0]).unwrap();
        assert_eq!((s.mean_unsigned, s.mean_signed), (3.0, 0.0));
        let s = unsigned_stats(&[0.0; 3]).unwrap();
        assert_eq!((s.mean_unsigned, s.mean_signed, s.std_unsigned, s.max_unsigned), (0.0, 0.0, 0.0, 0.0));
        let s = unsigned_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert!((s.mean_unsigned - 2.0).abs() < 1e-12);
        assert_eq!(s.max_unsigned, 3.0);
        assert!((s.std_unsigned - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(matches!(unsigned_stats(&[]), Err(Error::EmptyStats)));
    }

    #[test]
    fn summary_uses_population_std() {
        let (mean, max, std) = summarize(&[1.0, 3.0]).unwrap();
        assert_eq!((mean, max, std), (2.0, 3.0, 1.0));
        assert!(summarize(&[]).is_none());
    }
}
