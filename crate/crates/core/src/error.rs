use std::path::PathBuf;

use thiserror::Error;

use crate::model::SurfaceSet;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("surface set violates ordering at {} location(s), first: surface {} column {}", .violations.len(), .violations[0].0, .violations[0].1)]
    NotOrdered { violations: Vec<(u8, usize)> },

    #[error("surface {surface} has no valid position at column {column}")]
    PartiallyValid { surface: u8, column: usize },

    #[error("surface(s) {surfaces:?} have no candidate in any column")]
    UnresolvedSurfaces {
        surfaces: Vec<u8>,
        partial: Box<SurfaceSet>,
    },

    #[error("cholesky factorization failed ({size}x{size} system, jitter escalated to {jitter:e}, non-positive pivot {pivot_value:e} at row {pivot})")]
    Cholesky {
        size: usize,
        jitter: f64,
        pivot: usize,
        pivot_value: f64,
    },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("statistics are undefined for an empty error vector")]
    EmptyStats,

    #[error("{}{}: {msg}", .path.display(), .line.map(|l| format!(":{l}")).unwrap_or_default())]
    Format {
        path: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn format(path: impl Into<PathBuf>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for failures of the numerical core (factorization, divergence,
    /// unresolvable surfaces) as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Cholesky { .. } | Error::Diverged { .. } | Error::UnresolvedSurfaces { .. } => true,
            Error::Fold { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            2
        } else {
            1
        }
    }
}
