//! Run configuration file: one JSON object with a format version, unknown
//! keys rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use wsocc::evaluation::MatrixCell;
use wsocc::model::ArchConfig;
use wsocc::scenegen::RigConfig;
use wsocc::training::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    /// Root of every random stream; overrides `train.seed`.
    pub seed: u64,
    pub scenes: usize,
    pub objects: usize,
    pub eval_scenes: usize,
    pub rig: RigConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Write an intermediate checkpoint every this many epochs; 0 only at the end.
    pub checkpoint_every: usize,
    /// Matrix cells; `None` runs the six default cells.
    pub matrix: Option<Vec<MatrixCell>>,
    /// Dataset directory, used when `--data` is absent.
    pub data: Option<PathBuf>,
    /// Output path, used when `--out`/`--report` is absent.
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            scenes: 60,
            objects: 5,
            eval_scenes: 20,
            rig: RigConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            checkpoint_every: 0,
            matrix: None,
            data: None,
            out: None,
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
    #[error("invalid config {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let invalid = |reason: String| ConfigError::Invalid {
            path: path.to_path_buf(),
            reason,
        };
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        if raw.get("version").is_none() {
            return Err(invalid("missing \"version\"".into()));
        }
        let cfg: RunConfig = serde_json::from_value(raw).map_err(|e| invalid(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(invalid(format!(
                "version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        if cfg.train.seed != 0 && cfg.train.seed != cfg.seed {
            return Err(invalid("set the seed at top level, not under train".into()));
        }
        cfg.arch.validate().map_err(|e| invalid(e.to_string()))?;
        cfg.train.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
