use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;

use super::checkpoint::{groups, Checkpoint, Progress, StageTag};
use super::config::PipelineConfig;
use super::history::{EpochLog, FeatureEpochLog, LogSink};
use crate::augment::{make_unlabeled_views, make_views};
use crate::error::{Error, Result};
use crate::feature::{labeled_loss, unlabeled_loss, FeatureNet, FeatureNetConfig, TermValues};
use crate::ingest::{Epoch, LabeledEpoch};
use crate::nn::{Adam, NamedTensor};
use crate::rng;

/// Epochs available to the representation stage.
#[derive(Debug, Clone, Copy)]
pub struct FeatureData<'a> {
    pub train: &'a [LabeledEpoch],
    pub val: &'a [LabeledEpoch],
    pub unlabeled: &'a [Epoch],
}

/// Mean and population standard deviation of all training samples.
pub fn input_normalisation(epochs: &[LabeledEpoch]) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0f64, 0f64, 0f64);
    for e in epochs {
        for &v in e.epoch.samples.iter() {
            n += 1.0;
            let d = v as f64 - mean;
            mean += d / n;
            m2 += d * (v as f64 - mean);
        }
    }
    let std = if n > 0.0 { (m2 / n).sqrt() } else { 0.0 };
    (
        mean,
        if std > 0.0 && std.is_finite() {
            std
        } else {
            1.0
        },
    )
}

/// Stage-1 optimisation state.
pub struct FeatureTrainer {
    config: PipelineConfig,
    net: FeatureNet,
    adam: Adam,
    subjects: Vec<String>,
    subject_index: BTreeMap<String, usize>,
    progress: Progress,
    best: Option<Vec<(String, Tensor)>>,
}

fn vocabulary(epochs: &[LabeledEpoch]) -> Vec<String> {
    let set: std::collections::BTreeSet<&str> =
        epochs.iter().map(|e| &*e.epoch.subject_id).collect();
    set.into_iter().map(str::to_string).collect()
}

impl FeatureTrainer {
    /// Fresh model sized for the training subjects, normalised on their samples.
    pub fn new(config: &PipelineConfig, data: &FeatureData) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() {
            return Err(Error::EmptyDataset("no labeled training epochs".into()));
        }
        let subjects = vocabulary(data.train);
        let (mean, std) = input_normalisation(data.train);
        let net_config = FeatureNetConfig {
            num_subjects: subjects.len(),
            input_mean: mean,
            input_std: std,
            ..config.feature.clone()
        };
        let net = FeatureNet::new(
            net_config,
            DType::F32,
            rng::stream(config.train.seed, "init-feature", 0),
        )?;
        Self::with_net(config, net, subjects, None)
    }

    /// Trains an existing model; `trainable` restricts updates to parameters
    /// under the given prefixes.
    pub fn with_net(
        config: &PipelineConfig,
        net: FeatureNet,
        subjects: Vec<String>,
        trainable: Option<&[&str]>,
    ) -> Result<Self> {
        let params = match trainable {
            Some(prefixes) => net.store().params_under(prefixes),
            None => net
                .store()
                .params()
                .map(|(n, v)| (n.clone(), v.clone()))
                .collect(),
        };
        let adam = Adam::new(params, config.train.adam())?;
        let subject_index = subjects
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(FeatureTrainer {
            config: config.clone(),
            net,
            adam,
            subjects,
            subject_index,
            progress: Progress {
                optimizer: Some(config.train.adam()),
                ..Progress::default()
            },
            best: None,
        })
    }

    /// Continues from a checkpoint written by [`FeatureTrainer::checkpoint`].
    pub fn resume(
        config: &PipelineConfig,
        ckpt: &Checkpoint,
        trainable: Option<&[&str]>,
    ) -> Result<Self> {
        ckpt.expect_stage(StageTag::Feature)?;
        let net = FeatureNet::new(
            ckpt.manifest.feature.clone(),
            DType::F32,
            rng::stream(0, "resume", 0),
        )?;
        net.store().import(&ckpt.model_tensors(), true)?;
        let mut t = Self::with_net(config, net, ckpt.manifest.subjects.clone(), trainable)?;
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
                            nt.to_tensor(DType::F32, t.net.store().device())?,
                        ))
                    })
                    .collect::<Result<_>>()?,
            );
        }
        t.progress = ckpt.manifest.progress.clone();
        Ok(t)
    }

    pub fn net(&self) -> &FeatureNet {
        &self.net
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn should_stop(&self) -> bool {
        self.progress.epoch >= self.config.train.feature_epochs
            || self.progress.bad_epochs >= self.config.train.patience
    }

    fn subject_indices(&self, epochs: &[&LabeledEpoch]) -> Option<Vec<usize>> {
        epochs
            .iter()
            .map(|e| self.subject_index.get(&*e.epoch.subject_id).copied())
            .collect()
    }

    /// Views of a batch, rows `2k` and `2k + 1` from source `k`.
    fn labeled_views(
        &self,
        batch: &[&LabeledEpoch],
        aug: &mut rng::Rng,
    ) -> Result<(Tensor, Vec<usize>)> {
        let mut signals = Vec::with_capacity(2 * batch.len());
        let mut stages = Vec::with_capacity(2 * batch.len());
        for e in batch {
            let (a, b) = make_views(e, &self.config.augmentation, aug)?;
            stages.extend([a.stage.index(), b.stage.index()]);
            signals.push(a.epoch.samples);
            signals.push(b.epoch.samples);
        }
        let refs: Vec<&[f32]> = signals.iter().map(|s| &s[..]).collect();
        Ok((self.net.input_tensor(&refs)?, stages))
    }

    fn evaluate(&self, epochs: &[LabeledEpoch]) -> Result<TermValues> {
        let seed = self.config.train.seed;
        let mut aug = rng::stream(seed, "validation-augment", 0);
        let mut latent = rng::stream(seed, "validation-latent", 0);
        let mut parts = Vec::new();
        for chunk in epochs.chunks(self.config.train.batch_size) {
            let refs: Vec<&LabeledEpoch> = chunk.iter().collect();
            let (views, stages) = self.labeled_views(&refs, &mut aug)?;
            let subjects = self
                .subject_indices(&refs)
                .map(|s| s.iter().flat_map(|&i| [i, i]).collect::<Vec<_>>());
            let terms = labeled_loss(
                &self.net,
                &views,
                &stages,
                subjects.as_deref(),
                &self.config.loss,
                self.config.terms,
                &mut latent,
                false,
            )?;
            parts.push(terms.values()?);
        }
        Ok(TermValues::mean(&parts))
    }

    /// One pass over the unlabeled then the labeled data, then validation.
    pub fn run_epoch(&mut self, data: &FeatureData) -> Result<FeatureEpochLog> {
        let start = Instant::now();
        let e = self.progress.epoch as u64;
        let seed = self.config.train.seed;
        let b = self.config.train.batch_size;

        let mut unlabeled_parts = Vec::new();
        if !data.unlabeled.is_empty() && self.config.terms.subject_branch {
            let mut order: Vec<usize> = (0..data.unlabeled.len()).collect();
            order.shuffle(&mut rng::stream(seed, "batch-unlabeled", e));
            let mut aug = rng::stream(seed, "augment-unlabeled", e);
            let mut latent = rng::stream(seed, "latent-unlabeled", e);
            for chunk in order.chunks(b) {
                let mut signals = Vec::with_capacity(2 * chunk.len());
                for &i in chunk {
                    let (x, y) = make_unlabeled_views(
                        &data.unlabeled[i],
                        &self.config.augmentation,
                        &mut aug,
                    )?;
                    signals.push(x.samples);
                    signals.push(y.samples);
                }
                let refs: Vec<&[f32]> = signals.iter().map(|s| &s[..]).collect();
                let views = self.net.input_tensor(&refs)?;
                let terms =
                    unlabeled_loss(&self.net, &views, &self.config.loss, &mut latent, true)?;
                self.adam.step(&terms.total.backward()?)?;
                unlabeled_parts.push(terms.values()?);
            }
        }

        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng::stream(seed, "batch-labeled", e));
        let mut aug = rng::stream(seed, "augment-labeled", e);
        let mut latent = rng::stream(seed, "latent-labeled", e);
        let mut parts = Vec::new();
        for chunk in order.chunks(b) {
            let refs: Vec<&LabeledEpoch> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (views, stages) = self.labeled_views(&refs, &mut aug)?;
            let subjects: Option<Vec<usize>> = match self.config.terms.subject_branch {
                true => Some(
                    self.subject_indices(&refs)
                        .ok_or_else(|| {
                            Error::Label(
                                "training epoch from a subject outside the vocabulary".into(),
                            )
                        })?
                        .iter()
                        .flat_map(|&i| [i, i])
                        .collect(),
                ),
                false => None,
            };
            let terms = labeled_loss(
                &self.net,
                &views,
                &stages,
                subjects.as_deref(),
                &self.config.loss,
                self.config.terms,
                &mut latent,
                true,
            )?;
            self.adam.step(&terms.total.backward()?)?;
            parts.push(terms.values()?);
        }
        let train = TermValues::mean(&parts);
        let val = if data.val.is_empty() {
            None
        } else {
            Some(self.evaluate(data.val)?)
        };
        let metric = val.as_ref().map_or(train.total, |v| v.total);
        let improved = self.record(metric)?;
        Ok(FeatureEpochLog {
            epoch: self.progress.epoch,
            unlabeled_batches: unlabeled_parts.len(),
            labeled_batches: parts.len(),
            unlabeled: (!unlabeled_parts.is_empty()).then(|| TermValues::mean(&unlabeled_parts)),
            train,
            val,
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
            self.best = Some(self.net.store().snapshot()?);
        } else {
            self.progress.bad_epochs += 1;
        }
        Ok(improved)
    }

    /// Runs epochs until the epoch budget or patience is exhausted.
    pub fn fit(&mut self, data: &FeatureData, sink: &mut dyn LogSink) -> Result<()> {
        while !self.should_stop() {
            let entry = self.run_epoch(data)?;
            log::info!(
                "feature epoch {} metric {:.6}",
                entry.epoch,
                entry.val_metric
            );
            sink.record(&EpochLog::Feature(entry))?;
        }
        Ok(())
    }

    fn make_checkpoint(&self, tensors: Vec<NamedTensor>, progress: Progress) -> Checkpoint {
        Checkpoint::new(
            StageTag::Feature,
            None,
            self.net.config().clone(),
            None,
            self.subjects.clone(),
            progress,
            serde_json::to_value(&self.config).unwrap_or(serde_json::Value::Null),
            tensors,
        )
    }

    /// Complete state for resuming: current weights, best weights, optimiser.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = self.net.store().export()?;
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
        let progress = Progress {
            optimizer_steps: steps,
            ..self.progress.clone()
        };
        Ok(self.make_checkpoint(tensors, progress))
    }

    /// Restores the best weights and returns the model with its checkpoint.
    pub fn finish(self) -> Result<(FeatureNet, Checkpoint)> {
        if let Some(best) = &self.best {
            self.net.store().restore(best)?;
        }
        let progress = Progress {
            optimizer: None,
            optimizer_steps: Vec::new(),
            ..self.progress.clone()
        };
        let ckpt = self.make_checkpoint(self.net.store().export()?, progress);
        Ok((self.net, ckpt))
    }
}

/// Rebuilds a representation model from a feature checkpoint.
pub fn load_feature_net(ckpt: &Checkpoint) -> Result<FeatureNet> {
    ckpt.expect_stage(StageTag::Feature)?;
    let net = FeatureNet::new(
        ckpt.manifest.feature.clone(),
        DType::F32,
        rng::stream(0, "load", 0),
    )?;
    net.store().import(&ckpt.model_tensors(), true)?;
    Ok(net)
}
