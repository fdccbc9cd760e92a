//! TOML run configuration and the JSON run record written by every CLI run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::eval::{Pipeline, Pooling, XvalConfig};
use crate::fcn::{NetworkConfig, TrainingConfig};
use crate::gp::GpConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub pipelines: Vec<Pipeline>,
    pub k: Option<usize>,
    pub pooling: Pooling,
    pub include_external: bool,
    pub include_inter_observer: bool,
    pub parallel_folds: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let x = XvalConfig::default();
        EvaluationConfig {
            pipelines: x.pipelines,
            k: x.k,
            pooling: x.pooling,
            include_external: x.include_external,
            include_inter_observer: x.include_inter_observer,
            parallel_folds: x.parallel_folds,
        }
    }
}

/// Sections `[synth]`, `[network]`, `[training]`, `[gp]` and `[evaluation]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub gp: GpConfig,
    pub evaluation: EvaluationConfig,
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Applies the keys present in `text` on top of `self`; absent keys keep their current values.
    pub fn overlay(&self, text: &str, source: &Path) -> Result<Self> {
        let parse_err = |e: toml::de::Error| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1));
            Error::format(source, line, e.message().to_string())
        };
        let overlay: toml::Table = toml::from_str(text).map_err(parse_err)?;
        let mut base = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, toml::Value::Table(overlay));
        let merged: RunConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::format(source, None, e.message().to_string()))?;
        merged.validate()?;
        Ok(merged)
    }

    pub fn overlay_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::format(path, None, e.to_string()))?;
        self.overlay(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.network.validate()?;
        self.training.validate()?;
        self.gp.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn xval_config(&self) -> XvalConfig {
        let e = &self.evaluation;
        XvalConfig {
            network: self.network.clone(),
            training: self.training.clone(),
            gp: self.gp.clone(),
            pipelines: e.pipelines.clone(),
            k: e.k,
            pooling: e.pooling,
            include_external: e.include_external,
            include_inter_observer: e.include_inter_observer,
            parallel_folds: e.parallel_folds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub synth: u64,
    pub network: u64,
    pub training: u64,
}

/// What a run did, with enough configuration to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub threads: usize,
    pub seeds: Seeds,
    pub config: RunConfig,
    pub outputs: Vec<String>,
}

impl RunRecord {
    pub fn new(command: &str, args: Vec<String>, config: &RunConfig) -> Self {
        RunRecord {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args,
            threads: rayon::current_num_threads(),
            seeds: Seeds {
                synth: config.synth.seed,
                network: config.network.seed,
                training: config.training.seed,
            },
            config: config.clone(),
            outputs: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, Some(e.line()), e.to_string()))
    }
}
