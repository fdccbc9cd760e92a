//! Retinal OCT surface segmentation.
//!
//! A B-scan is classified pixel by pixel into six retinal bands by a small
//! dense-connectivity fully convolutional network ([`fcn`]). Surfaces are
//! then recovered from the label map either by local repairs
//! ([`extraction`], the `SEG` pipeline) or by per-surface Gaussian-process
//! regression ([`gp`], the `SEG+REG` pipeline). [`eval`] scores estimates
//! against grader annotations under leave-one-patient-out cross validation,
//! and [`io`] covers dataset files, synthetic data and overlays.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod eval;
pub mod extraction;
pub mod fcn;
pub mod gp;
pub mod io;
pub mod model;

pub use error::{Error, Result};
