use candle_core::DType;

use super::checkpoint::{groups, Checkpoint, StageTag};
use super::classifier_stage::ClassifierTrainer;
use super::config::PipelineConfig;
use super::feature_stage::{input_normalisation, FeatureData, FeatureTrainer};
use super::history::LogSink;
use super::pipeline::{fit_classifier, labeled, PipelineData, PipelineOutcome};
use crate::error::{Error, Result};
use crate::feature::{names, FeatureNet, FeatureNetConfig, ObjectiveTerms};
use crate::nn::NamedTensor;
use crate::rng;
use crate::sequence::SequenceClassifier;

/// What happened to each source tensor during a transfer.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct TransferReport {
    pub transferred: Vec<String>,
    /// Rate-dependent tensors drawn afresh because their shape changed.
    pub reinitialized: Vec<String>,
}

/// Builds a representation model for `target` from source weights. Only
/// the input stems may change shape; any other mismatch is a transfer error.
pub fn transfer_feature_net(
    source_config: &FeatureNetConfig,
    source: &[NamedTensor],
    target: FeatureNetConfig,
    seed: u64,
) -> Result<(FeatureNet, TransferReport)> {
    let mut cfg = source_config.clone();
    cfg.sampling_rate_hz = target.sampling_rate_hz;
    cfg.input_mean = target.input_mean;
    cfg.input_std = target.input_std;
    let net = FeatureNet::new(cfg, DType::F32, rng::stream(seed, "init-transfer", 0))?;
    let stems = [net.sleep_stem_weight_name(), net.subject_stem_weight_name()];
    let mut report = TransferReport::default();
    for t in source {
        let var = net.store().get(&t.name).ok_or_else(|| {
            Error::Transfer(format!("source tensor {} has no counterpart", t.name))
        })?;
        if var.dims() == t.shape.as_slice() {
            net.store().import(std::slice::from_ref(t), true)?;
            report.transferred.push(t.name.clone());
        } else if stems.contains(&t.name) {
            report.reinitialized.push(t.name.clone());
        } else {
            return Err(Error::Transfer(format!(
                "tensor {} has shape {:?} in the source but {:?} in the target",
                t.name,
                t.shape,
                var.dims()
            )));
        }
    }
    Ok((net, report))
}

/// Parameters updated while fine-tuning the representation model.
pub const FINE_TUNE_PREFIXES: [&str; 3] = [
    names::ENCODER_SLEEP,
    names::CLASSIFIER_SLEEP,
    names::PROJECTION_SLEEP,
];

/// Adapts a trained pipeline to a target dataset: the sleep encoder and
/// sleep classifier are fine-tuned on the target's labels, then the
/// sequence classifier continues from the source weights.
pub fn fine_tune(
    source: &Checkpoint,
    source_feature: &Checkpoint,
    config: &PipelineConfig,
    data: &PipelineData,
    sink: &mut dyn LogSink,
) -> Result<(PipelineOutcome, TransferReport)> {
    source.expect_stage(StageTag::Classifier)?;
    source_feature.expect_stage(StageTag::Feature)?;
    if source.manifest.parent.as_deref() != Some(source_feature.id()) {
        return Err(Error::Transfer(
            "feature checkpoint is not the parent of the classifier checkpoint".into(),
        ));
    }
    let train = labeled(&data.train);
    let val = labeled(&data.val);
    if train.is_empty() {
        return Err(Error::EmptyDataset("no labeled target epochs".into()));
    }
    let rate = train[0].epoch.sampling_rate_hz;
    let (mean, std) = input_normalisation(&train);
    let target = FeatureNetConfig {
        sampling_rate_hz: rate,
        input_mean: mean,
        input_std: std,
        ..source.manifest.feature.clone()
    };
    let (net, report) = transfer_feature_net(
        &source_feature.manifest.feature,
        &source_feature.model_tensors(),
        target,
        config.train.seed,
    )?;

    let mut tune = config.clone();
    tune.feature = net.config().clone();
    tune.sequence = source
        .manifest
        .sequence
        .clone()
        .ok_or_else(|| Error::Checkpoint("missing sequence config".into()))?;
    tune.terms = ObjectiveTerms {
        vae: false,
        classifiers: true,
        supervised_contrastive: config.terms.supervised_contrastive,
        subject_branch: false,
    };
    let fd = FeatureData {
        train: &train,
        val: &val,
        unlabeled: &[],
    };
    let mut trainer = FeatureTrainer::with_net(
        &tune,
        net,
        source_feature.manifest.subjects.clone(),
        Some(&FINE_TUNE_PREFIXES),
    )?;
    trainer.fit(&fd, sink)?;
    let (feature, feature_checkpoint) = trainer.finish()?;

    let classifier =
        SequenceClassifier::new(tune.sequence.clone(), DType::F32, rng::stream(0, "load", 0))?;
    classifier.store().import(&source.model_tensors(), true)?;
    let ct = ClassifierTrainer::with_model(
        &tune,
        feature,
        feature_checkpoint.id().to_string(),
        classifier,
    )?;
    let (model, classifier_checkpoint) = fit_classifier(&tune, ct, data, sink)?;
    debug_assert!(source
        .group(groups::FEATURE)
        .iter()
        .all(|t| t.name.starts_with(names::ENCODER_SLEEP)));
    Ok((
        PipelineOutcome {
            model,
            feature_checkpoint,
            classifier_checkpoint,
        },
        report,
    ))
}
