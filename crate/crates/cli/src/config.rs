//! Tolerances, seeds and caps: defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "ANYONFORGE_CONFIG";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Tsv,
}

/// Values read from a TOML config file; every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub cap: Option<u64>,
    pub depth_cap: Option<usize>,
    pub tol_biunitary: Option<f64>,
    pub tol_flat: Option<f64>,
    pub tol_pf: Option<f64>,
    pub tol_rank: Option<f64>,
    pub tol_projector: Option<f64>,
    pub tol_tube: Option<f64>,
    pub spot_samples: Option<usize>,
}

/// Fully resolved settings, echoed in every report.
#[derive(Clone, Debug, Serialize)]
pub struct Settings {
    pub format: Format,
    pub seed: u64,
    pub cap: Option<u64>,
    pub depth_cap: usize,
    pub tol_biunitary: f64,
    pub tol_flat: f64,
    pub tol_pf: f64,
    pub tol_rank: f64,
    pub tol_projector: f64,
    pub tol_tube: f64,
    pub spot_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            format: Format::Tsv,
            seed: 0x5eed,
            cap: None,
            depth_cap: 16,
            tol_biunitary: 1e-10,
            tol_flat: 1e-9,
            tol_pf: 1e-10,
            tol_rank: 1e-4,
            tol_projector: 1e-8,
            tol_tube: 1e-9,
            spot_samples: 100,
            config: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
}

pub fn load_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

impl Settings {
    pub fn apply_file(&mut self, f: &FileConfig) {
        macro_rules! take {
            ($($k:ident),*) => { $( if let Some(v) = f.$k { self.$k = v; } )* };
        }
        take!(
            format,
            seed,
            depth_cap,
            tol_biunitary,
            tol_flat,
            tol_pf,
            tol_rank,
            tol_projector,
            tol_tube,
            spot_samples
        );
        if f.cap.is_some() {
            self.cap = f.cap;
        }
    }
}
