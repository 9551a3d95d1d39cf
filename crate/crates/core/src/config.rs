//! Run configuration, read from a flat TOML key/value file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{DELIVERY_DIM, LANGUAGE_DIM};
use crate::labels::{Aspect, NUM_LEVELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    Fixed,
    DataDriven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub aspect: Aspect,
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub margin_mode: MarginMode,
    pub margin_scale: f64,
    pub margin_ema_decay: f64,
    /// Starting adjacent margins; the fixed-mode margins. The default keeps
    /// the widest cumulative distance (seven steps) under the cosine range of 2.
    pub initial_margins: [f64; NUM_LEVELS - 1],
    pub prompt_dim: usize,
    pub speech_dim: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    /// Rotary position phases in the attention blocks.
    pub rotary: bool,
    pub train_manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            aspect: Aspect::Holistic,
            lambda: 0.5,
            batch_size: 32,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            patience: 30,
            max_epochs: 200,
            seed: 0,
            margin_mode: MarginMode::DataDriven,
            margin_scale: 1.0,
            margin_ema_decay: 0.9,
            initial_margins: [0.25; NUM_LEVELS - 1],
            prompt_dim: 768,
            speech_dim: 768,
            hidden_dim: 64,
            ffn_dim: 128,
            rotary: true,
            train_manifest: None,
            valid_manifest: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative manifest paths are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut cfg = RunConfig::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.train_manifest, &mut cfg.valid_manifest]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return bad("patience and max_epochs must be positive".into());
        }
        if !(self.margin_scale > 0.0 && self.margin_scale.is_finite()) {
            return bad(format!(
                "margin_scale {} must be positive",
                self.margin_scale
            ));
        }
        if !(0.0..1.0).contains(&self.margin_ema_decay) {
            return bad(format!(
                "margin_ema_decay {} outside [0, 1)",
                self.margin_ema_decay
            ));
        }
        if self
            .initial_margins
            .iter()
            .any(|m| !(m.is_finite() && *m >= 0.0))
        {
            return bad("initial_margins must be finite and >= 0".into());
        }
        for (name, d) in [
            ("prompt_dim", self.prompt_dim),
            ("speech_dim", self.speech_dim),
            ("hidden_dim", self.hidden_dim),
            ("ffn_dim", self.ffn_dim),
        ] {
            if d == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        Ok(())
    }

    /// Widths of the three encoder inputs: content, delivery, language.
    pub fn input_dims(&self) -> [usize; 3] {
        [
            self.prompt_dim + self.speech_dim,
            DELIVERY_DIM,
            LANGUAGE_DIM,
        ]
    }

    /// Hash of every field that shapes the model or the optimization run.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.train_manifest = None;
        canon.valid_manifest = None;
        let json = serde_json::to_string(&canon).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}
