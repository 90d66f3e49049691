use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::TermValues;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum EpochLog {
    Feature(FeatureEpochLog),
    Classifier(ClassifierEpochLog),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEpochLog {
    /// 1-based.
    pub epoch: usize,
    pub unlabeled_batches: usize,
    pub labeled_batches: usize,
    pub unlabeled: Option<TermValues>,
    pub train: TermValues,
    pub val: Option<TermValues>,
    /// Value used for model selection.
    pub val_metric: f64,
    pub improved: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpochLog {
    pub epoch: usize,
    pub batches: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_metric: f64,
    pub improved: bool,
    pub wall_time_s: f64,
}

impl EpochLog {
    /// Same record without timing, for reproducibility comparisons.
    pub fn without_timing(&self) -> EpochLog {
        let mut c = self.clone();
        match &mut c {
            EpochLog::Feature(f) => f.wall_time_s = 0.0,
            EpochLog::Classifier(f) => f.wall_time_s = 0.0,
        }
        c
    }
}

/// Receives epoch records as training proceeds.
pub trait LogSink {
    fn record(&mut self, entry: &EpochLog) -> Result<()>;
}

impl LogSink for Vec<EpochLog> {
    fn record(&mut self, entry: &EpochLog) -> Result<()> {
        self.push(entry.clone());
        Ok(())
    }
}

/// Discards records.
pub struct NullSink;

impl LogSink for NullSink {
    fn record(&mut self, _: &EpochLog) -> Result<()> {
        Ok(())
    }
}

/// Appends one JSON object per line.
pub struct JsonlSink {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl JsonlSink {
    pub fn append(path: &Path) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(JsonlSink {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }
}

impl LogSink for JsonlSink {
    fn record(&mut self, entry: &EpochLog) -> Result<()> {
        serde_json::to_writer(&mut self.out, entry)?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
