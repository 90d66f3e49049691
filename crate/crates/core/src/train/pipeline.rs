use super::checkpoint::Checkpoint;
use super::classifier_stage::{ClassifierTrainer, SequenceSet, TrainedModel};
use super::config::PipelineConfig;
use super::feature_stage::{FeatureData, FeatureTrainer};
use super::history::LogSink;
use crate::error::{Error, Result};
use crate::feature::FeatureNet;
use crate::ingest::{build_sequences, Epoch, EpochSequence, LabeledEpoch, Recording};

/// Recordings for one training run.
#[derive(Debug, Clone, Default)]
pub struct PipelineData {
    pub train: Vec<Recording>,
    pub val: Vec<Recording>,
    pub unlabeled: Vec<Recording>,
}

pub struct PipelineOutcome {
    pub model: TrainedModel,
    pub feature_checkpoint: Checkpoint,
    pub classifier_checkpoint: Checkpoint,
}

pub fn labeled(recordings: &[Recording]) -> Vec<LabeledEpoch> {
    recordings
        .iter()
        .filter_map(Recording::labeled_epochs)
        .flatten()
        .collect()
}

/// Every epoch of every recording, labels ignored.
pub fn unlabeled(recordings: &[Recording]) -> Vec<Epoch> {
    recordings
        .iter()
        .flat_map(|r| r.epochs.iter().cloned())
        .collect()
}

/// Labelled windows of one length, built recording by recording.
pub fn sequences(
    recordings: &[Recording],
    len: usize,
    stride: usize,
) -> Result<Vec<EpochSequence>> {
    let mut out = Vec::new();
    for r in recordings {
        if let Some(epochs) = r.labeled_epochs() {
            out.extend(build_sequences(&epochs, len, stride)?);
        }
    }
    Ok(out)
}

/// Stage 1 on `data`, returning the trained representation model.
pub fn train_feature_stage(
    config: &PipelineConfig,
    data: &PipelineData,
    sink: &mut dyn LogSink,
) -> Result<(FeatureNet, Checkpoint)> {
    let train = labeled(&data.train);
    let val = labeled(&data.val);
    let unl = unlabeled(&data.unlabeled);
    let fd = FeatureData {
        train: &train,
        val: &val,
        unlabeled: &unl,
    };
    let mut trainer = FeatureTrainer::new(config, &fd)?;
    trainer.fit(&fd, sink)?;
    trainer.finish()
}

/// Stage 2 on top of a frozen representation model.
pub fn train_classifier_stage(
    config: &PipelineConfig,
    feature: FeatureNet,
    feature_checkpoint: &Checkpoint,
    data: &PipelineData,
    sink: &mut dyn LogSink,
) -> Result<(TrainedModel, Checkpoint)> {
    let trainer = ClassifierTrainer::new(config, feature, feature_checkpoint.id().to_string())?;
    fit_classifier(config, trainer, data, sink)
}

pub(crate) fn fit_classifier(
    config: &PipelineConfig,
    mut trainer: ClassifierTrainer,
    data: &PipelineData,
    sink: &mut dyn LogSink,
) -> Result<(TrainedModel, Checkpoint)> {
    let (len, stride) = (config.train.sequence_length, config.train.sequence_stride);
    let train = SequenceSet::encode(trainer.feature(), &sequences(&data.train, len, stride)?)?
        .ok_or_else(|| {
            Error::EmptyDataset(format!("no training recording has {len} labelled epochs"))
        })?;
    let val = SequenceSet::encode(trainer.feature(), &sequences(&data.val, len, stride)?)?;
    trainer.fit(&train, val.as_ref(), sink)?;
    trainer.finish()
}

/// Both stages in order.
pub fn train_pipeline(
    config: &PipelineConfig,
    data: &PipelineData,
    sink: &mut dyn LogSink,
) -> Result<PipelineOutcome> {
    let (feature, feature_checkpoint) = train_feature_stage(config, data, sink)?;
    let (model, classifier_checkpoint) =
        train_classifier_stage(config, feature, &feature_checkpoint, data, sink)?;
    Ok(PipelineOutcome {
        model,
        feature_checkpoint,
        classifier_checkpoint,
    })
}
