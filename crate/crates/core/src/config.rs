//! Run configuration: a TOML file with flag overrides, resolved into the
//! trainer/evaluator settings plus dataset selection.

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::model::{Arch, PriorMode};
use crate::trainer::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DATA_ROOT_ENV: &str = "IOPVAE_DATA_ROOT";

fn default_hidden() -> usize { 500 }
fn default_latent() -> usize { 2 }
fn default_batch() -> usize { 100 }
fn default_lr() -> f64 { 3e-4 }
fn default_one() -> usize { 1 }
fn default_j2() -> usize { 10 }
fn default_warmup() -> usize { 100 }
fn default_max_epochs() -> usize { 1_000 }
fn default_patience() -> usize { 50 }
fn default_keep() -> f64 { 0.5 }
fn default_k_mix() -> usize { 500 }
fn default_is_samples() -> usize { 10 }
fn default_prior() -> String { "standard".into() }
fn default_out_dir() -> PathBuf { PathBuf::from("runs") }
fn default_train_size() -> usize { 50_000 }
fn default_valid_size() -> usize { 10_000 }

/// Everything a run needs, parseable from TOML. Unknown keys are
/// rejected so typos fail loudly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// "onehot" or "mnist".
    pub dataset: String,
    /// Directory with IDX files for image datasets; falls back to the
    /// IOPVAE_DATA_ROOT environment variable.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// "standard", "vamp", or "implicit".
    #[serde(default = "default_prior")]
    pub prior: String,
    #[serde(default = "default_k_mix")]
    pub k_mix: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_one")]
    pub l_samples: usize,
    #[serde(default = "default_one")]
    pub j1: usize,
    #[serde(default = "default_j2")]
    pub j2: usize,
    #[serde(default)]
    pub step_level: bool,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    /// Seed used for dataset synthesis/splits, independent of training.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub dynamic_binarization: bool,
    #[serde(default = "default_keep")]
    pub dropout_keep: f64,
    #[serde(default = "default_is_samples")]
    pub is_samples: usize,
    /// OneHot only: draw validation fresh instead of reusing train rows.
    #[serde(default)]
    pub onehot_fresh_valid: bool,
    /// MNIST train/valid sizes (reduce for constrained runs).
    #[serde(default = "default_train_size")]
    pub mnist_train_size: usize,
    #[serde(default = "default_valid_size")]
    pub mnist_valid_size: usize,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn prior_mode(&self) -> Result<PriorMode> {
        match self.prior.as_str() {
            "standard" => Ok(PriorMode::StandardGaussian),
            "vamp" => Ok(PriorMode::VampPrior { k_mix: self.k_mix }),
            "implicit" => Ok(PriorMode::ImplicitOptimal),
            other => Err(Error::Config(format!(
                "prior must be standard|vamp|implicit, got {other:?}"
            ))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            prior_mode: self.prior_mode()?,
            batch_size: self.batch_size,
            lr: self.lr,
            l_samples: self.l_samples,
            j1: self.j1,
            j2: self.j2,
            step_level: self.step_level,
            warmup_epochs: self.warmup_epochs,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            dynamic_binarization: self.dynamic_binarization,
            dropout_keep: self.dropout_keep,
            checkpoint_path: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolve the data-root directory, preferring the config field over
    /// the environment variable.
    pub fn resolved_data_root(&self) -> Option<PathBuf> {
        self.data_root
            .clone()
            .or_else(|| std::env::var(DATA_ROOT_ENV).ok().map(PathBuf::from))
    }

    /// Load or synthesize the configured dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.data_seed);
        match self.dataset.as_str() {
            "onehot" => Ok(data::generate_onehot(&mut rng, !self.onehot_fresh_valid)),
            "mnist" => {
                let root = self.resolved_data_root().ok_or_else(|| {
                    Error::Config(format!(
                        "dataset \"mnist\" needs data_root in the config or {DATA_ROOT_ENV} set"
                    ))
                })?;
                data::load_mnist_subsample(
                    &root,
                    &mut rng,
                    self.mnist_train_size,
                    self.mnist_valid_size,
                )
            }
            other => Err(Error::Config(format!(
                "dataset must be onehot|mnist, got {other:?}"
            ))),
        }
    }

    pub fn arch(&self, ds: &Dataset) -> Arch {
        Arch {
            input_dim: ds.dim,
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
            likelihood: ds.likelihood,
        }
    }
}
