//! Run configuration: built-in defaults, then an optional TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use randcorr::sampling::{NoiseModel, Shots};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RANDCORR_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `trisep`, `bisep:<phi>`, `ghz`, `cluster`, `mixed:<n>` or `tensor:<path>`.
    pub state: String,
    pub settings: usize,
    /// Shots per setting, or `exact`.
    pub shots: String,
    /// `none`, `fresh` or `drift:<block>`, optionally with `@<stream>`.
    pub noise: String,
    /// At most `2^63 - 1`, the largest TOML integer.
    pub seed: u64,
    pub bins: usize,
    pub alpha: f64,
    pub z: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            state: "ghz".into(),
            settings: 10_000,
            shots: "475".into(),
            noise: "none".into(),
            seed: 0,
            bins: randcorr::distributions::DEFAULT_BINS,
            alpha: 0.01,
            z: 3.0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn shots(&self) -> Result<Shots, String> {
        self.shots.parse().map_err(|e: randcorr::Error| e.to_string())
    }

    pub fn noise(&self) -> Result<NoiseModel, String> {
        self.noise.parse().map_err(|e: randcorr::Error| e.to_string())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.shots()?;
        self.noise()?;
        if self.state.trim().is_empty() {
            return Err("state must not be empty".into());
        }
        if self.settings < 4 {
            return Err(format!("settings must be at least 4, got {}", self.settings));
        }
        if self.seed > i64::MAX as u64 {
            return Err(format!("seed must be at most {}, got {}", i64::MAX, self.seed));
        }
        if self.bins == 0 {
            return Err("bins must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.z.is_finite() && self.z > 0.0) {
            return Err(format!("z must be positive, got {}", self.z));
        }
        Ok(())
    }

    /// Flag, then config file, then the environment, then the working directory.
    pub fn output_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}
