//! The flat run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::KMeansConfig;
use crate::dataset::{SplitSpec, DEFAULT_RATING_THRESHOLD};
use crate::diffusion::{DiffusionConfig, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, TIME_EMBED_DIM};
use crate::encoder::EncoderConfig;
use crate::error::{HdrmError, Result};
use crate::eval::MfConfig;
use crate::manifold::{Manifold, Model};
use crate::objective::LossConfig;
use crate::train::TrainConfig;

/// Every tunable of a run. Unknown keys are rejected when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // geometry and encoder
    pub model: Model,
    pub kappa: f64,
    pub dim: usize,
    pub layers: usize,
    pub init_std: f64,

    // clustering
    pub clusters: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,

    // diffusion
    pub steps: usize,
    pub inference_steps: usize,
    pub delta: f64,
    pub r: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub hidden: usize,
    pub time_dim: usize,

    // objective
    pub margin: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub fermi_q: f64,
    pub fermi_t: f64,

    // optimization
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub patience: usize,
    pub negatives: usize,
    pub fine_tune: bool,

    // MF-BPR comparator
    pub mf_dim: usize,
    pub mf_epochs: usize,
    pub mf_lr: f64,
    pub mf_weight_decay: f64,

    // data preparation
    pub rating_threshold: f64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub split_per_user: bool,
    /// Fraction of items labelled popular in exports.
    pub popular_fraction: f64,

    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mf = MfConfig::default();
        RunConfig {
            model: Model::Lorentz,
            kappa: -1.0,
            dim: 50,
            layers: 3,
            init_std: 0.1,
            clusters: 10,
            kmeans_restarts: 10,
            kmeans_max_iter: 100,
            steps: 30,
            inference_steps: 30,
            delta: 0.01,
            r: 1.0,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            hidden: 64,
            time_dim: TIME_EMBED_DIM,
            margin: 0.2,
            alpha: 0.3,
            gamma: 0.4,
            fermi_q: 2.0,
            fermi_t: 1.0,
            lr: 1e-3,
            weight_decay: 0.005,
            batch_size: 256,
            epochs_stage1: 100,
            epochs_stage2: 30,
            patience: 10,
            negatives: 1,
            fine_tune: true,
            mf_dim: 50,
            mf_epochs: 100,
            mf_lr: mf.lr,
            mf_weight_decay: mf.weight_decay,
            rating_threshold: DEFAULT_RATING_THRESHOLD,
            split_train: 0.7,
            split_val: 0.1,
            split_test: 0.2,
            split_per_user: true,
            popular_fraction: 0.5,
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HdrmError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HdrmError::Serde(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HdrmError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            HdrmError::Config(msg) => HdrmError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| HdrmError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.manifold()?;
        self.encoder().validate()?;
        self.kmeans().validate()?;
        self.diffusion().validate()?;
        self.loss().validate()?;
        self.train().validate()?;
        self.split().validate()?;
        if self.hidden == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(HdrmError::Config(format!(
                "hidden must be >= 1 and time_dim even, got hidden={} time_dim={}",
                self.hidden, self.time_dim
            )));
        }
        if !(0.0..=1.0).contains(&self.popular_fraction) {
            return Err(HdrmError::Config(format!(
                "popular_fraction must be in [0,1], got {}",
                self.popular_fraction
            )));
        }
        Ok(())
    }

    pub fn manifold(&self) -> Result<Manifold> {
        Manifold::new(self.model, self.kappa, self.dim)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            dim: self.dim,
        }
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            clusters: self.clusters,
            max_iter: self.kmeans_max_iter,
            restarts: self.kmeans_restarts,
            ..Default::default()
        }
    }

    pub fn diffusion(&self) -> DiffusionConfig {
        DiffusionConfig {
            delta: self.delta,
            r: self.r,
            steps: self.steps,
            inference_steps: self.inference_steps,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
            ..Default::default()
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            alpha: self.alpha,
            gamma: self.gamma,
            fermi_q: self.fermi_q,
            fermi_t: self.fermi_t,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs_stage1: self.epochs_stage1,
            epochs_stage2: self.epochs_stage2,
            batch_size: self.batch_size,
            negatives: self.negatives,
            lr: self.lr,
            weight_decay: self.weight_decay,
            patience: self.patience,
            seed: self.seed,
            fine_tune: self.fine_tune,
        }
    }

    pub fn mf(&self) -> MfConfig {
        MfConfig {
            dim: self.mf_dim,
            epochs: self.mf_epochs,
            batch_size: self.batch_size,
            lr: self.mf_lr,
            weight_decay: self.mf_weight_decay,
            patience: self.patience,
            init_std: self.init_std,
            seed: self.seed,
        }
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train: self.split_train,
            val: self.split_val,
            test: self.split_test,
            seed: self.seed,
            per_user: self.split_per_user,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("dim = 8\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, HdrmError::Config(_)));
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("dim = 8\nmodel = \"poincare\"\n").unwrap();
        assert_eq!(cfg.dim, 8);
        assert_eq!(cfg.model, Model::Poincare);
        assert_eq!(cfg.layers, RunConfig::default().layers);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(RunConfig::from_toml("kappa = 1.0\n").is_err());
        assert!(RunConfig::from_toml("alpha = 1.5\n").is_err());
        assert!(RunConfig::from_toml("split_train = 0.9\n").is_err());
    }
}
