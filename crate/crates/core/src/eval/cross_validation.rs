use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::emd::{emd_subject_distance, subsample, worst_case_report, WorstCaseEntry};
use super::metrics::{compute_metrics, summarize, ConfusionMatrix, Metrics, Summary};
use crate::error::{Error, Result};
use crate::ingest::{DatasetManifest, FoldSplit, Recording};
use crate::rng;
use crate::sequence::PredictionRecord;
use crate::stage::SleepStage;
use crate::train::{train_pipeline, LogSink, PipelineConfig, PipelineData, PipelineOutcome};

/// Samples per subject kept for distribution distances.
pub const EMD_MAX_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub subject_id: String,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub per_subject: Vec<SubjectReport>,
    pub feature_checkpoint: String,
    pub classifier_checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub folds: Vec<FoldReport>,
    pub summary: Summary,
}

/// Predictions of a trained model on labelled recordings.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub per_subject: Vec<SubjectReport>,
    pub predictions: Vec<PredictionRecord>,
}

pub fn evaluate_recordings(
    outcome: &crate::train::TrainedModel,
    recordings: &[Recording],
) -> Result<Evaluation> {
    let mut by_subject: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    let mut predictions = Vec::new();
    for rec in recordings {
        let truth = rec.stages.as_ref().ok_or_else(|| {
            Error::Label(format!("recording of {} has no stages", rec.subject_id))
        })?;
        let records = outcome.predict(&rec.epochs)?;
        let predicted: Vec<SleepStage> = records
            .iter()
            .flat_map(|r| r.stages.iter().copied())
            .collect();
        let cm = ConfusionMatrix::from_pairs(truth, &predicted)?;
        by_subject
            .entry(rec.subject_id.to_string())
            .or_default()
            .merge(&cm);
        predictions.extend(records);
    }
    let mut confusion = ConfusionMatrix::new();
    let mut per_subject = Vec::new();
    for (subject_id, cm) in by_subject {
        confusion.merge(&cm);
        per_subject.push(SubjectReport {
            subject_id,
            metrics: compute_metrics(&cm)?,
            confusion: cm,
        });
    }
    Ok(Evaluation {
        confusion,
        per_subject,
        predictions,
    })
}

/// Hooks for per-fold logging and artefacts.
pub trait FoldObserver {
    fn log_sink(&mut self, fold: usize) -> Result<Box<dyn LogSink>>;
    fn fold_finished(
        &mut self,
        report: &FoldReport,
        outcome: &PipelineOutcome,
        evaluation: &Evaluation,
    ) -> Result<()>;
}

/// Discards everything.
pub struct SilentObserver;

impl FoldObserver for SilentObserver {
    fn log_sink(&mut self, _fold: usize) -> Result<Box<dyn LogSink>> {
        Ok(Box::new(crate::train::NullSink))
    }

    fn fold_finished(&mut self, _: &FoldReport, _: &PipelineOutcome, _: &Evaluation) -> Result<()> {
        Ok(())
    }
}

/// Trains and tests both stages on every split; the first failing fold
/// aborts the run.
pub fn cross_validate(
    manifest: &DatasetManifest,
    splits: &[FoldSplit],
    config: &PipelineConfig,
    unlabeled: &[Recording],
    observer: &mut dyn FoldObserver,
) -> Result<CrossValidationReport> {
    if splits.is_empty() {
        return Err(Error::Config("no folds to evaluate".into()));
    }
    let mut folds = Vec::with_capacity(splits.len());
    for split in splits {
        let report =
            run_fold(manifest, split, config, unlabeled, observer).map_err(|e| Error::Fold {
                fold: split.fold,
                source: Box::new(e),
            })?;
        folds.push(report);
    }
    let metrics: Vec<Metrics> = folds.iter().map(|f| f.metrics).collect();
    Ok(CrossValidationReport {
        summary: summarize(&metrics),
        folds,
    })
}

fn run_fold(
    manifest: &DatasetManifest,
    split: &FoldSplit,
    config: &PipelineConfig,
    unlabeled: &[Recording],
    observer: &mut dyn FoldObserver,
) -> Result<FoldReport> {
    let data = PipelineData {
        train: manifest.load_subjects(&split.train)?,
        val: manifest.load_subjects(&split.val)?,
        unlabeled: unlabeled.to_vec(),
    };
    let test = manifest.load_subjects(&split.test)?;
    let mut sink = observer.log_sink(split.fold)?;
    let outcome = train_pipeline(config, &data, sink.as_mut())?;
    let evaluation = evaluate_recordings(&outcome.model, &test)?;
    let report = FoldReport {
        fold: split.fold,
        train_subjects: split.train.iter().map(|s| s.to_string()).collect(),
        test_subjects: split.test.iter().map(|s| s.to_string()).collect(),
        metrics: compute_metrics(&evaluation.confusion)?,
        confusion: evaluation.confusion,
        per_subject: evaluation.per_subject.clone(),
        feature_checkpoint: outcome.feature_checkpoint.id().to_string(),
        classifier_checkpoint: outcome.classifier_checkpoint.id().to_string(),
    };
    observer.fold_finished(&report, &outcome, &evaluation)?;
    Ok(report)
}

/// Raw amplitudes of one subject, subsampled to at most [`EMD_MAX_SAMPLES`].
pub fn subject_amplitudes(recordings: &[Recording], seed: u64, subject_index: u64) -> Vec<f64> {
    let all: Vec<f64> = recordings
        .iter()
        .flat_map(|r| r.epochs.iter())
        .flat_map(|e| e.samples.iter().map(|&v| f64::from(v)))
        .collect();
    subsample(
        &all,
        EMD_MAX_SAMPLES,
        &mut rng::stream(seed, "emd", subject_index),
    )
}

/// Ranks every test subject by its mean amplitude distance to the training
/// subjects of its fold.
pub fn emd_worst_case(
    manifest: &DatasetManifest,
    folds: &[FoldReport],
    seed: u64,
) -> Result<Vec<WorstCaseEntry>> {
    let ids = manifest.subject_ids();
    let mut cache: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut samples = |id: &str| -> Result<Vec<f64>> {
        if let Some(v) = cache.get(id) {
            return Ok(v.clone());
        }
        let index = ids.iter().position(|s| &**s == id).unwrap_or(ids.len()) as u64;
        let v = subject_amplitudes(&manifest.load_subject(id)?, seed, index);
        cache.insert(id.to_string(), v.clone());
        Ok(v)
    };
    let mut entries = Vec::new();
    for fold in folds {
        let train: Vec<Vec<f64>> = fold
            .train_subjects
            .iter()
            .map(|s| samples(s))
            .collect::<Result<_>>()?;
        for subject in &fold.test_subjects {
            let emd = emd_subject_distance(&samples(subject)?, &train)?;
            let metrics = fold
                .per_subject
                .iter()
                .find(|r| &r.subject_id == subject)
                .map(|r| r.metrics);
            entries.push(WorstCaseEntry {
                subject_id: subject.clone(),
                emd,
                metrics,
            });
        }
    }
    Ok(worst_case_report(entries))
}

fn metric_cells(m: &Metrics) -> String {
    let f1: Vec<String> = m.per_class_f1.iter().map(|v| format!("{v:6.2}")).collect();
    format!(
        "{:6.2} | {:6.2} | {:6.3} | {}",
        m.accuracy,
        m.macro_f1,
        m.kappa,
        f1.join(" | ")
    )
}

/// Plain-text table with one row per fold and a mean ± std row.
pub fn format_table(report: &CrossValidationReport) -> String {
    let stages: Vec<&str> = SleepStage::ALL.iter().map(|s| s.name()).collect();
    let mut out = format!(
        "fold | acc    | mf1    | kappa  | {}\n",
        stages.join("     | ")
    );
    for f in &report.folds {
        out.push_str(&format!("{:4} | {}\n", f.fold, metric_cells(&f.metrics)));
    }
    let s = &report.summary;
    let f1: Vec<String> = s.per_class_f1.iter().map(|v| v.to_string()).collect();
    out.push_str(&format!(
        "mean | {} | {} | {:.3} ± {:.3} | {}\n",
        s.accuracy,
        s.macro_f1,
        s.kappa.mean,
        s.kappa.std,
        f1.join(" | ")
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::MeanStd;

    fn fold(i: usize, acc_hits: u64) -> FoldReport {
        let mut counts = [[0u64; 5]; 5];
        counts[0][0] = acc_hits;
        counts[0][1] = 10 - acc_hits;
        counts[2][2] = 10;
        let confusion = ConfusionMatrix::from_counts(counts);
        FoldReport {
            fold: i,
            train_subjects: vec![],
            test_subjects: vec![format!("s{i}")],
            metrics: compute_metrics(&confusion).unwrap(),
            confusion,
            per_subject: vec![],
            feature_checkpoint: String::new(),
            classifier_checkpoint: String::new(),
        }
    }

    #[test]
    fn table_has_row_per_fold_and_aggregate() {
        let folds = vec![fold(0, 8), fold(1, 6)];
        let metrics: Vec<_> = folds.iter().map(|f| f.metrics).collect();
        let report = CrossValidationReport {
            summary: summarize(&metrics),
            folds,
        };
        let t = format_table(&report);
        assert_eq!(t.lines().count(), 4);
        assert!(t.contains(&MeanStd::of(&[90.0, 80.0]).to_string()));
    }
}
