use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ingest::hypnogram::EPOCH_SECONDS;
use crate::stage::SleepStage;

pub type SubjectId = Arc<str>;

/// One 30-second single-channel window.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub samples: Arc<[f32]>,
    pub sampling_rate_hz: u32,
    pub subject_id: SubjectId,
}

impl Epoch {
    pub fn new(
        samples: impl Into<Arc<[f32]>>,
        sampling_rate_hz: u32,
        subject_id: SubjectId,
    ) -> Result<Self> {
        let samples = samples.into();
        let expected = epoch_len(sampling_rate_hz);
        if sampling_rate_hz == 0 || samples.len() != expected {
            return Err(Error::Shape(format!(
                "epoch has {} samples, expected {expected} at {sampling_rate_hz} Hz",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                term: "epoch samples".into(),
            });
        }
        Ok(Epoch {
            samples,
            sampling_rate_hz,
            subject_id,
        })
    }

    /// Same subject and rate, new samples. Length is the caller's responsibility.
    pub(crate) fn with_samples(&self, samples: Vec<f32>) -> Epoch {
        debug_assert_eq!(samples.len(), self.samples.len());
        Epoch {
            samples: samples.into(),
            sampling_rate_hz: self.sampling_rate_hz,
            subject_id: self.subject_id.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn epoch_len(sampling_rate_hz: u32) -> usize {
    (EPOCH_SECONDS * sampling_rate_hz) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEpoch {
    pub epoch: Epoch,
    pub stage: SleepStage,
}

/// `T` temporally ordered epochs from one subject, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSequence {
    epochs: Vec<Epoch>,
    stages: Option<Vec<SleepStage>>,
    /// Index of the first epoch within its recording.
    pub offset: usize,
}

impl EpochSequence {
    pub fn new(epochs: Vec<Epoch>, stages: Option<Vec<SleepStage>>, offset: usize) -> Result<Self> {
        let first = epochs
            .first()
            .ok_or_else(|| Error::Shape("sequence must contain at least one epoch".into()))?;
        if epochs.iter().any(|e| {
            e.subject_id != first.subject_id || e.sampling_rate_hz != first.sampling_rate_hz
        }) {
            return Err(Error::Shape(
                "sequence epochs must share subject and sampling rate".into(),
            ));
        }
        if let Some(s) = &stages {
            if s.len() != epochs.len() {
                return Err(Error::Shape(format!(
                    "{} stages for {} epochs",
                    s.len(),
                    epochs.len()
                )));
            }
        }
        Ok(EpochSequence {
            epochs,
            stages,
            offset,
        })
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn stages(&self) -> Option<&[SleepStage]> {
        self.stages.as_deref()
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn subject_id(&self) -> &SubjectId {
        &self.epochs[0].subject_id
    }
}
