//! On-disk formats, synthetic data, overlays and run configuration.

pub mod config;
pub mod dataset;
pub mod images;
pub mod render;
pub mod surfaces;
pub mod synth;

pub use config::{EvaluationConfig, RunConfig, RunRecord, Seeds};
pub use dataset::{load_dataset, save_dataset, DatasetManifest, ManifestEntry};
pub use images::{load_grayscale, save_grayscale, BitDepth};
pub use render::{overlay_png, overlay_svg, render_overlay};
pub use surfaces::{load_surfaces, read_surfaces, save_surfaces, write_surfaces};
pub use synth::{generate_synthetic, SynthConfig};
