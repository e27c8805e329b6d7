//! Run configuration: a TOML file with one section per pipeline stage.
//! Every artifact embeds the hash of the resolved configuration so stages
//! can detect mismatched inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use clusterhash::data::DatasetMode;
use clusterhash::hashing::Scheme;
use clusterhash::models::{Backbone, LossKind, ModelConfig};
use clusterhash::training::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataSection {
    pub path: PathBuf,
    pub mode: DatasetMode,
    #[serde(default)]
    pub normalize_ratings: bool,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

fn default_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemeSection {
    pub name: String,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    pub buckets_users: Option<usize>,
    pub buckets_items: Option<usize>,
    /// Hyperplane count for structural LSH; derived from buckets when absent.
    pub bits: Option<u32>,
    #[serde(default)]
    pub seed: u64,
}

fn default_resolution() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_backbone")]
    pub backbone: Backbone,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub n_layers: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_backbone() -> Backbone {
    Backbone::Mf
}
fn default_dim() -> usize {
    64
}
fn default_loss() -> LossKind {
    LossKind::Bpr
}
fn default_gamma() -> f64 {
    1.0
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            backbone: default_backbone(),
            dim: default_dim(),
            n_layers: 0,
            loss: default_loss(),
            gamma: default_gamma(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Defaults to full batch for MF and 1024 otherwise.
    pub batch_size: Option<usize>,
    /// Defaults to 50 for retrieval and 5 for CTR.
    pub patience: Option<usize>,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    1e-6
}
fn default_max_epochs() -> usize {
    500
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            batch_size: None,
            patience: None,
            max_epochs: default_max_epochs(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSection {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_bins")]
    pub bins: Vec<f64>,
    /// Compute cluster/2-hop smoothness when a partition file is available.
    #[serde(default = "default_true")]
    pub smoothness: bool,
}

fn default_k() -> usize {
    20
}
fn default_bins() -> Vec<f64> {
    vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0]
}
fn default_true() -> bool {
    true
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { k: default_k(), bins: default_bins(), smoothness: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchSection {
    #[serde(default = "default_resolutions")]
    pub resolutions: Vec<f64>,
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
}

fn default_resolutions() -> Vec<f64> {
    vec![50.0, 100.0, 200.0, 400.0]
}
fn default_gammas() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 5.0]
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { resolutions: default_resolutions(), gammas: default_gammas() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default)]
    pub dump_graph: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSection,
    pub scheme: SchemeSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub bench: BenchSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{e}")))?;
        if let Some(seed) = seed_override {
            cfg.data.seed = seed;
            cfg.scheme.seed = seed;
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scheme_kind(&self) -> Result<Scheme, CliError> {
        Scheme::parse(&self.scheme.name).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let scheme = self.scheme_kind()?;
        let ratios_sum: f64 = self.data.ratios.iter().sum();
        if (ratios_sum - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!(
                "split ratios must sum to 1, got {ratios_sum}"
            )));
        }
        let needs_buckets = matches!(
            scheme,
            Scheme::Random | Scheme::Frequency | Scheme::Double | Scheme::DoubleFrequency
        );
        if needs_buckets && (self.scheme.buckets_users.is_none() || self.scheme.buckets_items.is_none())
        {
            return Err(CliError::Config(format!(
                "scheme {scheme} needs buckets_users and buckets_items"
            )));
        }
        if scheme == Scheme::LshStructure
            && self.scheme.bits.is_none()
            && self.scheme.buckets_users.is_none()
        {
            return Err(CliError::Config(
                "lsh_structure needs bits (or buckets_users to derive them)".into(),
            ));
        }
        if matches!(scheme, Scheme::GraphHash | Scheme::DoubleGraphHash)
            && self.scheme.resolution <= 0.0
        {
            return Err(CliError::Config("resolution must be positive".into()));
        }
        let is_ctr = self.data.mode == DatasetMode::Ctr;
        if is_ctr != (self.model.backbone == Backbone::CtrLogistic) {
            return Err(CliError::Config(
                "ctr mode pairs with the ctr_logistic backbone (and only then)".into(),
            ));
        }
        self.model_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.model.backbone,
            dim: self.model.dim,
            n_layers: self.model.n_layers,
            loss: self.model.loss,
            gamma: self.model.gamma,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let is_ctr = self.data.mode == DatasetMode::Ctr;
        TrainConfig {
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size.unwrap_or(match self.model.backbone {
                Backbone::Mf => 0,
                _ => 1024,
            }),
            patience: self.train.patience.unwrap_or(if is_ctr { 5 } else { 50 }),
            max_epochs: self.train.max_epochs,
            seed: self.train.seed,
            gamma: self.model.gamma,
            val_k: self.eval.k,
        }
    }

    /// Stable fingerprint of the resolved configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        hex::encode(&digest[..8])
    }
}
