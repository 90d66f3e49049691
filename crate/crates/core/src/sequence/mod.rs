//! Sequence labelling of epoch representations.

mod crf;
mod model;
mod transformer;

use serde::{Deserialize, Serialize};

pub use crf::{entropy, Crf, EmissionRow};
pub use model::{
    crf_nll, decode_rows, names, DecodedSequence, HeadKind, SequenceClassifier, SequenceConfig,
};
pub use transformer::{
    positional_encoding, EncoderLayer, SelfAttention, TransformerConfig, TransformerEncoder,
};

use crate::error::{Error, Result};
use crate::feature::FeatureNet;
use crate::ingest::Epoch;
use crate::stage::SleepStage;

/// Encodes, contextualises and decodes one run of consecutive epochs.
pub fn classify_sequence(
    feature: &FeatureNet,
    classifier: &SequenceClassifier,
    epochs: &[Epoch],
) -> Result<DecodedSequence> {
    if epochs.is_empty() {
        return Err(Error::EmptyDataset("empty sequence".into()));
    }
    let refs: Vec<&Epoch> = epochs.iter().collect();
    let z = feature.extract_sleep(&refs)?.to_dtype(classifier.dtype())?;
    classifier.decode(&z)
}

/// One decoded sequence, as written to prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub subject_id: String,
    /// Index of each epoch within its recording.
    pub epochs: Vec<usize>,
    pub stages: Vec<SleepStage>,
    pub uncertainties: Vec<f64>,
    pub log_probability: f64,
}

/// One epoch's prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPrediction {
    pub subject_id: String,
    pub epoch: usize,
    pub stage: SleepStage,
    pub uncertainty: f64,
    pub flagged: bool,
}

impl PredictionRecord {
    pub fn new(subject_id: &str, offset: usize, decoded: DecodedSequence) -> Self {
        PredictionRecord {
            subject_id: subject_id.to_string(),
            epochs: (offset..offset + decoded.stages.len()).collect(),
            stages: decoded.stages,
            uncertainties: decoded.uncertainties,
            log_probability: decoded.log_probability,
        }
    }

    /// Per-epoch rows; epochs whose uncertainty is at least `threshold` are flagged.
    pub fn epoch_predictions(&self, threshold: f64) -> Vec<EpochPrediction> {
        self.epochs
            .iter()
            .zip(&self.stages)
            .zip(&self.uncertainties)
            .map(|((&epoch, &stage), &uncertainty)| EpochPrediction {
                subject_id: self.subject_id.clone(),
                epoch,
                stage,
                uncertainty,
                flagged: uncertainty >= threshold,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flagging_thresholds() {
        let rec = PredictionRecord::new(
            "s",
            10,
            DecodedSequence {
                stages: vec![SleepStage::W, SleepStage::N1],
                log_probability: -0.3,
                uncertainties: vec![0.0, 1.2],
            },
        );
        assert_eq!(rec.epochs, vec![10, 11]);
        assert!(rec.epoch_predictions(0.0).iter().all(|p| p.flagged));
        assert!(rec
            .epoch_predictions(5f64.ln() + 1e-9)
            .iter()
            .all(|p| !p.flagged));
    }
}
