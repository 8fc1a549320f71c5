//! Run configuration: a TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use pnet::baselines::{BaselineConfig, BaselineKind, ForestConfig, MlpConfig};
use pnet::dataio::{FileFormat, Taxonomy};
use pnet::harness::{AugmentMode, Granularity, Scheme, TrainConfig, AUGMENTED_EPOCHS};
use pnet::signal::PreprocessConfig;

pub const DATA_ENV: &str = "PMAT_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    Kfold,
    SequenceKfold,
    Loso,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GranularityName {
    Fine,
    Coarse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentName {
    Off,
    Train,
    TrainTest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineName {
    Knn,
    BaggedTrees,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub cache: PathBuf,
    pub out: PathBuf,
    /// Optional taxonomy file (`posture category` per line).
    pub taxonomy: Option<PathBuf>,
    /// Keep every `stride`-th frame of each recording.
    pub stride: usize,
    pub scheme: SchemeName,
    pub folds: usize,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub granularity: GranularityName,
    pub augment: AugmentName,
    pub baseline: Option<BaselineName>,
    pub knn_k: usize,
    pub format: FileFormat,
    pub preprocess: PreprocessConfig,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
    pub conv_channels: Option<Vec<usize>>,
    pub dense_width: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            cache: PathBuf::from("pnet-cache"),
            out: PathBuf::from("runs/latest"),
            taxonomy: None,
            stride: 1,
            scheme: SchemeName::Kfold,
            folds: 10,
            lambda: None,
            epochs: None,
            batch_size: 64,
            seed: 0,
            granularity: GranularityName::Fine,
            augment: AugmentName::Off,
            baseline: None,
            knn_k: 10,
            format: FileFormat::default(),
            preprocess: PreprocessConfig::default(),
            forest: ForestConfig::default(),
            mlp: MlpConfig::default(),
            conv_channels: None,
            dense_width: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Dataset root from the config, else the environment.
    pub fn dataset_root(&self) -> Result<PathBuf> {
        if let Some(p) = &self.dataset {
            return Ok(p.clone());
        }
        match std::env::var_os(DATA_ENV) {
            Some(p) => Ok(PathBuf::from(p)),
            None => bail!("no dataset root: pass --data, set `dataset` in the config, or set {DATA_ENV}"),
        }
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        match &self.taxonomy {
            Some(p) => Ok(Taxonomy::load(p)?),
            None => Ok(Taxonomy::default()),
        }
    }

    pub fn scheme(&self) -> Scheme {
        match self.scheme {
            SchemeName::Kfold => Scheme::Kfold { k: self.folds },
            SchemeName::SequenceKfold => Scheme::SequenceKfold { k: self.folds },
            SchemeName::Loso => Scheme::Loso,
        }
    }

    fn granularity(&self) -> Granularity {
        match self.granularity {
            GranularityName::Fine => Granularity::Fine,
            GranularityName::Coarse => Granularity::Coarse,
        }
    }

    /// λ defaults to 0.5 for k-fold schemes and 0.2 for LOSO; epochs to 40,
    /// or 50 with augmentation.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let base = match self.scheme {
            SchemeName::Loso => TrainConfig::loso(),
            _ => TrainConfig::kfold(),
        };
        let augmentation = match self.augment {
            AugmentName::Off => AugmentMode::Off,
            AugmentName::Train => AugmentMode::Train,
            AugmentName::TrainTest => AugmentMode::TrainTest,
        };
        let default_epochs = if augmentation == AugmentMode::Off {
            base.epochs
        } else {
            AUGMENTED_EPOCHS
        };
        let cfg = TrainConfig {
            lambda: self.lambda.unwrap_or(base.lambda),
            epochs: self.epochs.unwrap_or(default_epochs),
            batch_size: self.batch_size,
            seed: self.seed,
            scheme: self.scheme(),
            granularity: self.granularity(),
            augmentation,
            conv_channels: self.conv_channels.clone().unwrap_or(base.conv_channels.clone()),
            dense_width: self.dense_width.unwrap_or(base.dense_width),
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn baseline_config(&self) -> Option<BaselineConfig> {
        let kind = match self.baseline? {
            BaselineName::Knn => BaselineKind::Knn,
            BaselineName::BaggedTrees => BaselineKind::BaggedTrees,
            BaselineName::Mlp => BaselineKind::Mlp,
        };
        Some(BaselineConfig {
            kind,
            scheme: self.scheme(),
            granularity: self.granularity(),
            seed: self.seed,
            k: self.knn_k,
            forest: self.forest,
            mlp: self.mlp.clone(),
        })
    }
}
