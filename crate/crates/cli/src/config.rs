//! Run configuration: a TOML file with `[model]`, `[training]`, `[data]`
//! and `[eval]` tables. Every field has a desk-scale default.

use std::path::{Path, PathBuf};

use ngsc_codec::rdo::{AdamConfig, TrainConfig};
use ngsc_codec::CodecConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

/// Per-phase learning rates of desk-scale runs. The first phase runs hotter
/// because it sees two orders of magnitude fewer steps than at full scale.
pub const DESK_PHASE_LR: [f64; 3] = [1e-3, 1e-4, 1e-4];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: CodecConfig,
    pub training: TrainingConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Divides the full-scale epoch counts 400/350/100.
    pub desk_scale: f64,
    /// Explicit epochs per phase; overrides `desk_scale`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<[usize; 3]>,
    pub batch_size: usize,
    pub alpha: f64,
    pub seed: u64,
    pub optimizer: AdamConfig,
    /// Overrides `optimizer.lr` per phase.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_lr: Option<[f64; 3]>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            desk_scale: 50.0,
            epochs: None,
            batch_size: 1,
            alpha: 0.5,
            seed: 0,
            optimizer: AdamConfig::default(),
            phase_lr: Some(DESK_PHASE_LR),
        }
    }
}

impl TrainingConfig {
    pub fn resolve(&self) -> TrainConfig {
        let epochs = self.epochs.unwrap_or_else(|| TrainConfig::desk_scale(self.desk_scale).epochs);
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            alpha: self.alpha,
            seed: self.seed,
            optimizer: self.optimizer.clone(),
            phase_lr: self.phase_lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_dir: Option<PathBuf>,
    pub crop: usize,
    pub min_dim: usize,
    /// Images held out for validation.
    pub val_count: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train_dir: None, crop: 64, min_dim: 64, val_count: 8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub q_list: Vec<f64>,
    /// Weight of the ROI MSE in the combined PSNR.
    pub w_roi: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { q_list: vec![0.1, 0.3, 0.5, 0.7, 0.9], w_roi: 0.5 }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.resolve().validate()?;
        if !(self.training.desk_scale >= 1.0) {
            return Err(CliError::Config(format!("desk_scale must be ≥ 1, got {}", self.training.desk_scale)));
        }
        let d = &self.data;
        if d.crop == 0 || d.crop % 64 != 0 {
            return Err(CliError::Config(format!("crop must be a positive multiple of 64, got {}", d.crop)));
        }
        if d.min_dim < d.crop {
            return Err(CliError::Config(format!("min_dim {} is below the crop size {}", d.min_dim, d.crop)));
        }
        check_q_list(&self.eval.q_list)?;
        if !(self.eval.w_roi > 0.0 && self.eval.w_roi < 1.0) {
            return Err(CliError::Config(format!("w_roi must lie in (0, 1), got {}", self.eval.w_roi)));
        }
        Ok(())
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    /// Seeds model initialization, training and the data split.
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub w_roi: Option<f64>,
    pub desk_scale: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) {
        if let Some(seed) = self.seed {
            cfg.model.seed = seed;
            cfg.training.seed = seed;
            cfg.data.seed = seed;
        }
        if let Some(a) = self.alpha {
            cfg.training.alpha = a;
        }
        if let Some(w) = self.w_roi {
            cfg.eval.w_roi = w;
        }
        if let Some(f) = self.desk_scale {
            cfg.training.desk_scale = f;
            cfg.training.epochs = None;
        }
    }
}

pub fn check_q_list(q_list: &[f64]) -> Result<()> {
    if q_list.is_empty() || q_list.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(CliError::Config(format!("QIndex values must lie in [0, 1], got {q_list:?}")));
    }
    Ok(())
}

/// Parses `"0.1,0.3,0.5"`.
pub fn parse_q_list(s: &str) -> Result<Vec<f64>> {
    let q = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| CliError::Argument(format!("q-list entry `{v}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    check_q_list(&q)?;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = Config::default();
        let back: Config = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.training.resolve().epochs, [8, 7, 2]);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg: Config = toml::from_str("[data]\ncrop = 128\nmin_dim = 128\n[training]\nepochs = [1, 1, 1]\n").unwrap();
        assert_eq!(cfg.data.crop, 128);
        assert_eq!(cfg.training.resolve().epochs, [1, 1, 1]);
        assert_eq!(cfg.model, CodecConfig::default());
        assert!(toml::from_str::<Config>("[data]\ncorp = 1\n").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = Config::default();
        cfg.data.crop = 100;
        assert!(cfg.validate().is_err());
        let mut cfg = Config::default();
        cfg.eval.w_roi = 1.0;
        assert!(cfg.validate().is_err());
        assert!(parse_q_list("0.1, 0.5,1").is_ok());
        assert!(parse_q_list("0.1,1.5").is_err());
        assert!(parse_q_list("a").is_err());
    }
}
