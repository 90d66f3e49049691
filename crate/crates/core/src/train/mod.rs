//! Two-stage optimisation, checkpoints, transfer and ablations.

mod ablation;
pub mod checkpoint;
mod classifier_stage;
mod config;
mod feature_stage;
mod fine_tune;
mod history;
mod pipeline;

pub use ablation::{ablation_variants, Ablation};
pub use checkpoint::{Checkpoint, CheckpointManifest, Progress, StageTag};
pub use classifier_stage::{ClassifierTrainer, SequenceSet, TrainedModel};
pub use config::{PipelineConfig, TrainConfig};
pub use feature_stage::{input_normalisation, load_feature_net, FeatureData, FeatureTrainer};
pub use fine_tune::{fine_tune, transfer_feature_net, TransferReport, FINE_TUNE_PREFIXES};
pub use history::{ClassifierEpochLog, EpochLog, FeatureEpochLog, JsonlSink, LogSink, NullSink};
pub use pipeline::{
    labeled, sequences, train_classifier_stage, train_feature_stage, train_pipeline, unlabeled,
    PipelineData, PipelineOutcome,
};
