use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;

use super::checkpoint::{groups, Checkpoint, Progress, StageTag};
use super::config::PipelineConfig;
use super::history::{ClassifierEpochLog, EpochLog, LogSink};
use crate::error::{Error, Result};
use crate::feature::{names as feature_names, FeatureNet};
use crate::ingest::{Epoch, EpochSequence};
use crate::nn::{Adam, NamedTensor};
use crate::rng;
use crate::sequence::{DecodedSequence, PredictionRecord, SequenceClassifier};

/// Frozen representations of equal-length labelled sequences.
#[derive(Debug, Clone)]
pub struct SequenceSet {
    /// `(S, T, L)`.
    pub z: Tensor,
    pub labels: Vec<Vec<usize>>,
}

impl SequenceSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Encodes labelled sequences with the frozen sleep encoder.
    pub fn encode(feature: &FeatureNet, sequences: &[EpochSequence]) -> Result<Option<Self>> {
        let Some(first) = sequences.first() else {
            return Ok(None);
        };
        let t = first.len();
        let mut epochs: Vec<&Epoch> = Vec::with_capacity(sequences.len() * t);
        let mut labels = Vec::with_capacity(sequences.len());
        for s in sequences {
            if s.len() != t {
                return Err(Error::Shape(
                    "training sequences must share one length".into(),
                ));
            }
            let stages = s
                .stages()
                .ok_or_else(|| Error::Label("training sequence without labels".into()))?;
            labels.push(stages.iter().map(|st| st.index()).collect());
            epochs.extend(s.epochs());
        }
        let z = feature.extract_sleep(&epochs)?;
        let l = z.dim(1)?;
        Ok(Some(SequenceSet {
            z: z.reshape((sequences.len(), t, l))?,
            labels,
        }))
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<Vec<usize>>)> {
        let ids: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
        let ids = Tensor::from_vec(ids, idx.len(), self.z.device())?;
        Ok((
            self.z.index_select(&ids, 0)?,
            idx.iter().map(|&i| self.labels[i].clone()).collect(),
        ))
    }
}

/// Both networks needed for inference.
pub struct TrainedModel {
    pub feature: FeatureNet,
    pub classifier: SequenceClassifier,
    pub sequence_length: usize,
}

impl TrainedModel {
    /// Rebuilds the pipeline from a classifier checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_stage(StageTag::Classifier)?;
        let seq = ckpt.manifest.sequence.clone().ok_or_else(|| {
            Error::Checkpoint("classifier checkpoint without a sequence configuration".into())
        })?;
        let feature = FeatureNet::new(
            ckpt.manifest.feature.clone(),
            DType::F32,
            rng::stream(0, "load", 0),
        )?;
        let frozen = ckpt.group(groups::FEATURE);
        if frozen.is_empty() {
            return Err(Error::Checkpoint(
                "classifier checkpoint carries no representation weights".into(),
            ));
        }
        feature.store().import(&frozen, true)?;
        let classifier = SequenceClassifier::new(seq, DType::F32, rng::stream(0, "load", 0))?;
        classifier.store().import(&ckpt.model_tensors(), true)?;
        let sequence_length = ckpt
            .manifest
            .run_config
            .pointer("/train/sequence_length")
            .and_then(|v| v.as_u64())
            .unwrap_or(20) as usize;
        Ok(TrainedModel {
            feature,
            classifier,
            sequence_length,
        })
    }

    /// Decodes a recording in consecutive windows of `sequence_length`
    /// (the last may be shorter).
    pub fn predict(&self, epochs: &[Epoch]) -> Result<Vec<PredictionRecord>> {
        if epochs.is_empty() {
            return Err(Error::EmptyDataset("recording has no epochs".into()));
        }
        let refs: Vec<&Epoch> = epochs.iter().collect();
        let z = self.feature.extract_sleep(&refs)?;
        let t = self.sequence_length.max(1);
        let mut out = Vec::new();
        let mut start = 0;
        while start < epochs.len() {
            let len = t.min(epochs.len() - start);
            let decoded: DecodedSequence = self.classifier.decode(&z.narrow(0, start, len)?)?;
            out.push(PredictionRecord::new(
                &epochs[start].subject_id,
                start,
                decoded,
            ));
            start += len;
        }
        Ok(out)
    }
}

/// Stage-2 optimisation state. The representation model is frozen.
pub struct ClassifierTrainer {
    config: PipelineConfig,
    feature: FeatureNet,
    feature_id: String,
    model: SequenceClassifier,
    adam: Adam,
    progress: Progress,
    best: Option<Vec<(String, Tensor)>>,
}

impl ClassifierTrainer {
    pub fn new(config: &PipelineConfig, feature: FeatureNet, feature_id: String) -> Result<Self> {
        config.validate()?;
        let model = SequenceClassifier::new(
            config.sequence.clone(),
            DType::F32,
            rng::stream(config.train.seed, "init-classifier", 0),
        )?;
        Self::with_model(config, feature, feature_id, model)
    }

    pub fn with_model(
        config: &PipelineConfig,
        feature: FeatureNet,
        feature_id: String,
        model: SequenceClassifier,
    ) -> Result<Self> {
        if model.config().input_dim != feature.config().sleep_latent_dim {
            return Err(Error::Checkpoint(format!(
                "classifier expects {}-dimensional representations, feature checkpoint produces {}",
                model.config().input_dim,
                feature.config().sleep_latent_dim
            )));
        }
        let params = model
            .store()
            .params()
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect();
        let adam = Adam::new(params, config.train.adam())?;
        Ok(ClassifierTrainer {
            config: config.clone(),
            feature,
            feature_id,
            model,
            adam,
            progress: Progress {
                optimizer: Some(config.train.adam()),
                ..Progress::default()
            },
            best: None,
        })
    }

    /// Continues from [`ClassifierTrainer::checkpoint`] output.
    pub fn resume(config: &PipelineConfig, ckpt: &Checkpoint) -> Result<Self> {
        let TrainedModel {
            feature,
            classifier,
            ..
        } = TrainedModel::from_checkpoint(ckpt)?;
        let parent = ckpt.manifest.parent.clone().unwrap_or_default();
        let mut t = Self::with_model(config, feature, parent, classifier)?;
        t.adam.import(
            &ckpt.group(groups::ADAM),
            &ckpt.manifest.progress.optimizer_steps,
        )?;
        let best = ckpt.group(groups::BEST);
        if !best.is_empty() {
            t.best = Some(
                best.iter()
                    .map(|nt| {
                        Ok((
                            nt.name.clone(),
                            nt.to_tensor(DType::F32, &candle_core::Device::Cpu)?,
                        ))
                    })
                    .collect::<Result<_>>()?,
            );
        }
        t.progress = ckpt.manifest.progress.clone();
        Ok(t)
    }

    pub fn feature(&self) -> &FeatureNet {
        &self.feature
    }

    pub fn model(&self) -> &SequenceClassifier {
        &self.model
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn should_stop(&self) -> bool {
        self.progress.epoch >= self.config.train.classifier_epochs
            || self.progress.bad_epochs >= self.config.train.patience
    }

    /// Mean loss (weighted by sequences) and epoch accuracy in evaluation mode.
    pub fn evaluate(&self, set: &SequenceSet) -> Result<(f64, f64)> {
        let b = self.config.train.batch_size;
        let (mut loss, mut correct, mut total) = (0.0, 0usize, 0usize);
        let idx: Vec<usize> = (0..set.len()).collect();
        let mut eval_rng = rng::stream(0, "eval", 0);
        for chunk in idx.chunks(b) {
            let (z, labels) = set.batch(chunk)?;
            let l = self.model.loss(&z, &labels, false, &mut eval_rng)?;
            loss += l.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
            for (decoded, truth) in self.model.decode_batch(&z)?.iter().zip(&labels) {
                correct += decoded
                    .stages
                    .iter()
                    .zip(truth)
                    .filter(|(s, &t)| s.index() == t)
                    .count();
                total += truth.len();
            }
        }
        Ok((
            loss / set.len().max(1) as f64,
            100.0 * correct as f64 / total.max(1) as f64,
        ))
    }

    pub fn run_epoch(
        &mut self,
        train: &SequenceSet,
        val: Option<&SequenceSet>,
    ) -> Result<ClassifierEpochLog> {
        let start = Instant::now();
        let e = self.progress.epoch as u64;
        let seed = self.config.train.seed;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(seed, "batch-sequences", e));
        let mut drop_rng = rng::stream(seed, "dropout", e);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(self.config.train.batch_size) {
            let (z, labels) = train.batch(chunk)?;
            let loss = self.model.loss(&z, &labels, true, &mut drop_rng)?;
            self.adam.step(&loss.backward()?)?;
            sum += loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            batches += 1;
        }
        let (_, train_accuracy) = self.evaluate(train)?;
        let (val_loss, val_accuracy) = match val {
            Some(v) if !v.is_empty() => {
                let (l, a) = self.evaluate(v)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        let train_loss = sum / batches.max(1) as f64;
        let metric = val_loss.unwrap_or(train_loss);
        let improved = self.record(metric)?;
        Ok(ClassifierEpochLog {
            epoch: self.progress.epoch,
            batches,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
            val_metric: metric,
            improved,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }

    fn record(&mut self, metric: f64) -> Result<bool> {
        let best = self
            .progress
            .best_epoch
            .map(|i| self.progress.history[i - 1]);
        let improved = best.is_none_or(|b| metric < b);
        self.progress.epoch += 1;
        self.progress.history.push(metric);
        if improved {
            self.progress.best_epoch = Some(self.progress.epoch);
            self.progress.bad_epochs = 0;
            self.best = Some(self.model.store().snapshot()?);
        } else {
            self.progress.bad_epochs += 1;
        }
        Ok(improved)
    }

    pub fn fit(
        &mut self,
        train: &SequenceSet,
        val: Option<&SequenceSet>,
        sink: &mut dyn LogSink,
    ) -> Result<()> {
        while !self.should_stop() {
            let entry = self.run_epoch(train, val)?;
            log::info!(
                "classifier epoch {} metric {:.6}",
                entry.epoch,
                entry.val_metric
            );
            sink.record(&EpochLog::Classifier(entry))?;
        }
        Ok(())
    }

    fn frozen_tensors(&self) -> Result<Vec<NamedTensor>> {
        Ok(self
            .feature
            .store()
            .export()?
            .into_iter()
            .filter(|t| t.name.starts_with(feature_names::ENCODER_SLEEP))
            .map(|t| NamedTensor {
                name: format!("{}{}", groups::FEATURE, t.name),
                ..t
            })
            .collect())
    }

    fn make_checkpoint(&self, tensors: Vec<NamedTensor>, progress: Progress) -> Checkpoint {
        Checkpoint::new(
            StageTag::Classifier,
            Some(self.feature_id.clone()),
            self.feature.config().clone(),
            Some(self.model.config().clone()),
            Vec::new(),
            progress,
            serde_json::to_value(&self.config).unwrap_or(serde_json::Value::Null),
            tensors,
        )
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = self.model.store().export()?;
        tensors.extend(self.frozen_tensors()?);
        if let Some(best) = &self.best {
            for (name, t) in best {
                tensors.push(NamedTensor::from_tensor(
                    &format!("{}{name}", groups::BEST),
                    t,
                )?);
            }
        }
        let (moments, steps) = self.adam.export()?;
        tensors.extend(moments.into_iter().map(|t| NamedTensor {
            name: format!("{}{}", groups::ADAM, t.name),
            ..t
        }));
        Ok(self.make_checkpoint(
            tensors,
            Progress {
                optimizer_steps: steps,
                ..self.progress.clone()
            },
        ))
    }

    /// Restores the best weights; returns the inference pipeline and its checkpoint.
    pub fn finish(self) -> Result<(TrainedModel, Checkpoint)> {
        if let Some(best) = &self.best {
            self.model.store().restore(best)?;
        }
        let mut tensors = self.model.store().export()?;
        tensors.extend(self.frozen_tensors()?);
        let progress = Progress {
            optimizer: None,
            optimizer_steps: Vec::new(),
            ..self.progress.clone()
        };
        let ckpt = self.make_checkpoint(tensors, progress);
        Ok((
            TrainedModel {
                feature: self.feature,
                classifier: self.model,
                sequence_length: self.config.train.sequence_length,
            },
            ckpt,
        ))
    }
}
