use serde::{Deserialize, Serialize};

use super::types::LabeledEpoch;
use crate::error::{Error, Result};
use crate::stage::{SleepStage, NUM_STAGES};

/// Amplitude and class statistics of a labelled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub epochs: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub class_counts: [usize; NUM_STAGES],
}

pub fn dataset_stats(epochs: &[LabeledEpoch]) -> Result<DatasetStats> {
    if epochs.is_empty() {
        return Err(Error::EmptyDataset("no epochs to summarise".into()));
    }
    let mut count = 0u64;
    let mut sum = 0.0f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut class_counts = [0usize; NUM_STAGES];
    for e in epochs {
        class_counts[e.stage.index()] += 1;
        for &v in e.epoch.samples.iter() {
            let v = f64::from(v);
            count += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
    }
    let mean = sum / count as f64;
    let m2: f64 = epochs
        .iter()
        .flat_map(|e| e.epoch.samples.iter())
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum();
    Ok(DatasetStats {
        epochs: epochs.len(),
        mean,
        std: (m2 / count as f64).sqrt(),
        min,
        max,
        class_counts,
    })
}

impl DatasetStats {
    /// Combines statistics of disjoint datasets.
    pub fn merge(parts: &[DatasetStats]) -> Result<DatasetStats> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyDataset("no statistics to merge".into()))?;
        let mut acc = first.clone();
        let mut n_acc = acc.sample_weight();
        for p in &parts[1..] {
            let n_p = p.sample_weight();
            let n = n_acc + n_p;
            let delta = p.mean - acc.mean;
            let m2 =
                acc.std.powi(2) * n_acc + p.std.powi(2) * n_p + delta * delta * n_acc * n_p / n;
            acc.mean += delta * n_p / n;
            acc.std = (m2 / n).sqrt();
            acc.min = acc.min.min(p.min);
            acc.max = acc.max.max(p.max);
            acc.epochs += p.epochs;
            for (a, b) in acc.class_counts.iter_mut().zip(p.class_counts) {
                *a += b;
            }
            n_acc = n;
        }
        Ok(acc)
    }

    // Epochs within one dataset share a length, so epoch count is a valid weight.
    fn sample_weight(&self) -> f64 {
        self.epochs as f64
    }

    /// One row in the layout of a dataset statistics table.
    pub fn table_row(&self, name: &str, subjects: usize) -> String {
        let pct = |c: usize| 100.0 * c as f64 / self.epochs as f64;
        let classes: Vec<String> = SleepStage::ALL
            .iter()
            .map(|s| {
                let c = self.class_counts[s.index()];
                format!("{}={} ({:.0}%)", s.name(), c, pct(c))
            })
            .collect();
        format!(
            "{name} | subjects {subjects} | mean {:.1e} | std {:.3} | range ({:.3}, {:.3}) | {} | total {}",
            self.mean,
            self.std,
            self.min,
            self.max,
            classes.join(" "),
            self.epochs
        )
    }
}
