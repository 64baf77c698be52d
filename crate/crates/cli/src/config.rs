//! TOML run configuration. Every section is optional; missing keys take the
//! library defaults.

use std::fs;
use std::path::Path;

use margot::bench::ExperimentConfig;
use margot::eval::{CoverageConfig, EvalConfig};
use margot::train::{ArchConfig, LossKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub arch: ArchConfig,
    pub eval: EvalConfig,
    /// Columns to condition on when fitting.
    pub condition: Vec<String>,
    pub bench: BenchOverrides,
}

/// Optional replacements for an experiment's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchOverrides {
    pub n: Option<usize>,
    pub n_synth: Option<usize>,
    pub losses: Option<Vec<LossKind>>,
    pub abc_eps: Option<f64>,
    pub abc_phi_star: Option<[f64; 5]>,
    pub mixture_delta: Option<f64>,
    pub mixture_dim: Option<usize>,
    pub mixture_weight: Option<f64>,
    pub coverage: Option<CoverageConfig>,
    /// Replaces the experiment's training preset; its seed is still taken
    /// from `--seed`.
    pub train: Option<TrainConfig>,
    pub arch: Option<ArchConfig>,
}

impl BenchOverrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if self.n_synth.is_some() {
            cfg.n_synth = self.n_synth;
        }
        if let Some(v) = &self.losses {
            cfg.losses = v.clone();
        }
        if let Some(v) = self.abc_eps {
            cfg.abc_eps = v;
        }
        if let Some(v) = self.abc_phi_star {
            cfg.abc_phi_star = v;
        }
        if let Some(v) = self.mixture_delta {
            cfg.mixture_delta = v;
        }
        if let Some(v) = self.mixture_dim {
            cfg.mixture_dim = v;
        }
        if let Some(v) = self.mixture_weight {
            cfg.mixture_weight = v;
        }
        if let Some(v) = self.coverage {
            cfg.coverage = v;
        }
        if let Some(v) = &self.train {
            cfg.train = v.clone();
        }
        if let Some(v) = &self.arch {
            cfg.arch = v.clone();
        }
    }
}

pub fn load(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Format(format!("{}: invalid config: {e}", path.display())))
}
