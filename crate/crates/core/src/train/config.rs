use serde::{Deserialize, Serialize};

use crate::augment::AugmentationConfig;
use crate::error::{Error, Result};
use crate::feature::{FeatureNetConfig, LossWeights, ObjectiveTerms};
use crate::nn::AdamConfig;
use crate::sequence::SequenceConfig;

/// Optimisation settings shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Source epochs per stage-1 batch (each contributes two views), and
    /// sequences per stage-2 batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; zero disables it.
    pub clip_norm: f64,
    pub feature_epochs: usize,
    pub classifier_epochs: usize,
    pub patience: usize,
    pub sequence_length: usize,
    pub sequence_stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            feature_epochs: 100,
            classifier_epochs: 100,
            patience: 10,
            sequence_length: 20,
            sequence_stride: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be at least 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return Err(Error::Config("train.clip_norm must be nonnegative".into()));
        }
        if self.sequence_length == 0 || self.sequence_stride == 0 {
            return Err(Error::Config(
                "train.sequence_length and train.sequence_stride must be positive".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.patience must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            ..AdamConfig::default()
        }
    }
}

/// Everything that determines a trained model, both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub feature: FeatureNetConfig,
    pub loss: LossWeights,
    pub terms: ObjectiveTerms,
    pub augmentation: AugmentationConfig,
    pub sequence: SequenceConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let feature = FeatureNetConfig::default();
        let mut sequence = SequenceConfig::default();
        sequence.input_dim = feature.sleep_latent_dim;
        PipelineConfig {
            feature,
            loss: LossWeights::default(),
            terms: ObjectiveTerms::default(),
            augmentation: AugmentationConfig::default(),
            sequence,
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.feature.validate()?;
        self.loss.validate()?;
        self.augmentation.validate()?;
        self.sequence.transformer.validate()?;
        self.train.validate()?;
        if self.sequence.input_dim != self.feature.sleep_latent_dim {
            return Err(Error::Config(format!(
                "sequence.input_dim ({}) must equal feature.sleep_latent_dim ({})",
                self.sequence.input_dim, self.feature.sleep_latent_dim
            )));
        }
        Ok(())
    }
}
