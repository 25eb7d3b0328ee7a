//! The single configuration schema shared by every subcommand.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//!
//! [experiment]
//! n_seeds = 5
//! beta1_grid = [0.0, 10.0]
//!
//! [experiment.graph]
//! kind = "sbm"
//! n = 300
//! blocks = 3
//! p_in = 0.08
//! p_out = 0.01
//!
//! [experiment.train]
//! steps = 2000
//!
//! [lln]
//! n_grid = [500, 1000]
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::LlnConfig;
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random draw descends from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub experiment: ExperimentConfig,
    pub lln: LlnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            experiment: ExperimentConfig::default(),
            lln: LlnConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Write the resolved configuration as `config.toml` inside `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}
