//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use ganomaly_core::model::HyperParams;
use ganomaly_core::objectives::{FeatureMatching, LossWeights};
use ganomaly_core::train::{AdamConfig, TrainConfig};

/// A problem with the configuration or command line. Exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Idx,
    Raw,
    Synthetic,
}

impl DatasetKind {
    fn as_str(self) -> &'static str {
        match self {
            Self::Idx => "idx",
            Self::Raw => "raw",
            Self::Synthetic => "synthetic",
        }
    }
}

pub const KEYS: &[&str] = &[
    "dataset.kind",
    "dataset.path",
    "dataset.labels_path",
    "dataset.subsample",
    "synthetic.n_per_class",
    "abnormal_class",
    "image_size",
    "latent_dim",
    "base_features",
    "w_adv",
    "w_con",
    "w_enc",
    "lr",
    "beta1",
    "beta2",
    "epochs",
    "batch_size",
    "seed",
    "out_dir",
    "checkpoint_every",
    "feature_matching",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_kind: DatasetKind,
    pub dataset_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    /// Stratified fraction of the dataset kept before splitting.
    pub subsample: f64,
    pub synthetic_n: usize,
    pub abnormal_class: u32,
    pub image_size: usize,
    pub latent_dim: usize,
    pub base_features: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub checkpoint_every: Option<usize>,
    pub feature_matching: FeatureMatching,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let hyper = HyperParams::default();
        Self {
            dataset_kind: DatasetKind::Raw,
            dataset_path: None,
            labels_path: None,
            subsample: 1.0,
            synthetic_n: 300,
            abnormal_class: 1,
            image_size: hyper.image_size,
            latent_dim: hyper.latent_dim,
            base_features: hyper.base_features,
            weights: train.weights,
            adam: train.adam,
            epochs: train.epochs,
            batch_size: train.batch_size,
            seed: train.seed,
            out_dir: PathBuf::from("runs"),
            checkpoint_every: None,
            feature_matching: train.feature_matching,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| bad(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "dataset.kind" => {
                self.dataset_kind = match value {
                    "idx" => DatasetKind::Idx,
                    "raw" => DatasetKind::Raw,
                    "synthetic" => DatasetKind::Synthetic,
                    other => {
                        return Err(bad(format!(
                            "dataset.kind must be idx, raw or synthetic, got {other:?}"
                        )))
                    }
                }
            }
            "dataset.path" => self.dataset_path = Some(PathBuf::from(value)),
            "dataset.labels_path" => self.labels_path = Some(PathBuf::from(value)),
            "dataset.subsample" => {
                let f: f64 = num(key, value)?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(bad(format!("dataset.subsample must be in (0, 1], got {f}")));
                }
                self.subsample = f;
            }
            "synthetic.n_per_class" => self.synthetic_n = num(key, value)?,
            "abnormal_class" => self.abnormal_class = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "base_features" => self.base_features = num(key, value)?,
            "w_adv" => self.weights.adv = num(key, value)?,
            "w_con" => self.weights.con = num(key, value)?,
            "w_enc" => self.weights.enc = num(key, value)?,
            "lr" => self.adam.lr = num(key, value)?,
            "beta1" => self.adam.beta1 = num(key, value)?,
            "beta2" => self.adam.beta2 = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "checkpoint_every" => {
                let n: usize = num(key, value)?;
                self.checkpoint_every = (n > 0).then_some(n);
            }
            "feature_matching" => {
                self.feature_matching = match value {
                    "paired" => FeatureMatching::Paired,
                    "batch_mean" => FeatureMatching::BatchMeanFake,
                    other => {
                        return Err(bad(format!(
                            "feature_matching must be paired or batch_mean, got {other:?}"
                        )))
                    }
                }
            }
            other => return Err(bad(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| bad(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())?;
        Ok(())
    }

    /// Applies a `KEY=VALUE` override from the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| bad(format!("override {pair:?} is not KEY=VALUE")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn hyper(&self, channels: usize) -> HyperParams {
        HyperParams {
            image_size: self.image_size,
            channels,
            latent_dim: self.latent_dim,
            base_features: self.base_features,
        }
    }

    pub fn train_config(&self, channels: usize) -> TrainConfig {
        TrainConfig {
            hyper: self.hyper(channels),
            weights: self.weights,
            adam: self.adam,
            feature_matching: self.feature_matching,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            checkpoint_dir: self
                .checkpoint_every
                .map(|_| self.out_dir.join("checkpoints")),
        }
    }

    /// Every set key with its effective value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let values = [
            Some(self.dataset_kind.as_str().to_string()),
            path(&self.dataset_path),
            path(&self.labels_path),
            Some(self.subsample.to_string()),
            Some(self.synthetic_n.to_string()),
            Some(self.abnormal_class.to_string()),
            Some(self.image_size.to_string()),
            Some(self.latent_dim.to_string()),
            Some(self.base_features.to_string()),
            Some(self.weights.adv.to_string()),
            Some(self.weights.con.to_string()),
            Some(self.weights.enc.to_string()),
            Some(self.adam.lr.to_string()),
            Some(self.adam.beta1.to_string()),
            Some(self.adam.beta2.to_string()),
            Some(self.epochs.to_string()),
            Some(self.batch_size.to_string()),
            Some(self.seed.to_string()),
            Some(self.out_dir.display().to_string()),
            Some(self.checkpoint_every.unwrap_or(0).to_string()),
            Some(
                match self.feature_matching {
                    FeatureMatching::Paired => "paired",
                    FeatureMatching::BatchMeanFake => "batch_mean",
                }
                .to_string(),
            ),
        ];
        KEYS.iter()
            .zip(values)
            .filter_map(|(k, v)| v.map(|v| format!("{k} = {v}\n")))
            .collect()
    }
}
