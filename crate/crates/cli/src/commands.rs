use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;

use somno_core::config::RunConfig;
use somno_core::eval::{
    cross_validate, emd_worst_case, format_table, paired_t_test, Evaluation, FoldObserver,
    FoldReport,
};
use somno_core::ingest::{
    dataset_stats, ingest_directory, kfold_split, load_recording, segment_unlabeled, DatasetKind,
    DatasetManifest, DatasetStats, IngestOptions, Recording,
};
use somno_core::sequence::EpochPrediction;
use somno_core::synthetic::{compact_config, write_dataset, SyntheticSpec};
use somno_core::train::{
    fine_tune, labeled, sequences, unlabeled, Ablation, Checkpoint, ClassifierTrainer, EpochLog,
    FeatureData, FeatureTrainer, JsonlSink, LogSink, PipelineConfig, PipelineData, PipelineOutcome,
    SequenceSet, TrainedModel,
};
use somno_core::{Error, SleepStage};

use crate::plot;

pub const FEATURE_DIR: &str = "feature";
pub const CLASSIFIER_DIR: &str = "classifier";
const FEATURE_PROGRESS_DIR: &str = "feature.progress";
const CLASSIFIER_PROGRESS_DIR: &str = "classifier.progress";
const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory searched recursively for recordings.
    #[arg(long)]
    pub raw_dir: PathBuf,
    /// Destination of canonical files and manifest.toml.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "Fpz-Cz")]
    pub channel: String,
    /// sleep-edf, shhs, generic or auto.
    #[arg(long, default_value = "auto")]
    pub kind: String,
    /// Ignore hypnograms.
    #[arg(long)]
    pub unlabeled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Features,
    Classifier,
    Both,
}

/// Options shared by commands that read a run configuration.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Additional unlabeled recordings for the representation stage.
    #[arg(long)]
    pub unlabeled_manifest: Option<PathBuf>,
    /// Remove a component: no_crf, no_vae, no_scl, no_aug, logistic, logistic_crf.
    #[arg(long = "ablation")]
    pub ablations: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub stage: Stage,
    /// Train on this cross-validation fold's training and validation
    /// subjects instead of the whole manifest.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Continue from per-epoch progress checkpoints in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Run directory of a trained source model to adapt to this dataset.
    #[arg(long)]
    pub fine_tune_from: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Evaluate only the first N folds.
    #[arg(long)]
    pub max_folds: Option<usize>,
    /// Uncertainty at or above which epochs are flagged in predictions.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Classifier checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Canonical `.rec` file or EDF recording.
    #[arg(long)]
    pub recording: PathBuf,
    /// Line-delimited JSON output, one line per epoch.
    #[arg(long)]
    pub out: PathBuf,
    /// Channel to read from an EDF recording.
    #[arg(long, default_value = "Fpz-Cz")]
    pub channel: String,
    #[arg(long, default_value_t = 1.0)]
    pub threshold: f64,
    /// Write an SVG with stage and uncertainty tracks.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(subcommand)]
    pub command: StatsCommand,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Amplitude and class statistics of a manifest.
    Dataset {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Paired t-test between two fold report files of the same folds.
    Ttest {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value = "accuracy")]
        metric: Metric,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Accuracy,
    MacroF1,
    Kappa,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Receives the recordings, `manifest.toml` and a matching `config.toml`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub subjects: usize,
    #[arg(long, default_value_t = 0)]
    pub first_subject: usize,
    #[arg(long, default_value_t = 1)]
    pub recordings: usize,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub rate: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub unlabeled: bool,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for r in rows {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let options = IngestOptions {
        channel: a.channel,
        kind: a.kind.parse::<DatasetKind>()?,
        unlabeled: a.unlabeled,
    };
    let report = ingest_directory(&a.raw_dir, &a.out_dir, &options)?;
    for f in &report.failures {
        eprintln!("failed: {}: {}", f.path.display(), f.error);
    }
    for (id, s) in &report.subject_stats {
        println!("{}", s.table_row(id, 1));
    }
    if let Some(all) = report.overall() {
        println!("{}", all.table_row("total", report.manifest.subjects.len()));
    }
    println!(
        "ingested {} epochs from {} subjects into {}",
        report.total_epochs,
        report.manifest.subjects.len(),
        report.manifest_path.display()
    );
    Ok(())
}

/// Loads the configuration and applies command-line overrides.
fn resolve_config(run: &RunArgs) -> Result<(RunConfig, DatasetManifest)> {
    let mut cfg = RunConfig::load(&run.config)?;
    if let Some(seed) = run.seed {
        cfg.pipeline.train.seed = seed;
    }
    if let Some(dir) = &run.out_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(u) = &run.unlabeled_manifest {
        cfg.data.unlabeled_manifest = Some(u.clone());
    }
    for name in &run.ablations {
        cfg.pipeline = name.parse::<Ablation>()?.apply(&cfg.pipeline);
    }
    let manifest = DatasetManifest::load(&cfg.data.manifest)?;
    if cfg.pipeline.feature.sampling_rate_hz != manifest.sampling_rate_hz {
        log::info!(
            "using the manifest's sampling rate {} Hz instead of {} Hz",
            manifest.sampling_rate_hz,
            cfg.pipeline.feature.sampling_rate_hz
        );
        cfg.pipeline.feature.sampling_rate_hz = manifest.sampling_rate_hz;
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml()?)?;
    Ok((cfg, manifest))
}

fn load_unlabeled(cfg: &RunConfig, rate: u32) -> Result<Vec<Recording>> {
    let Some(path) = &cfg.data.unlabeled_manifest else {
        return Ok(Vec::new());
    };
    let m = DatasetManifest::load(path)?;
    if m.sampling_rate_hz != rate {
        return Err(Error::Config(format!(
            "unlabeled data is sampled at {} Hz, labeled data at {rate} Hz",
            m.sampling_rate_hz
        ))
        .into());
    }
    Ok(m.load_subjects(&m.subject_ids())?)
}

fn fresh_sink(path: &Path) -> Result<JsonlSink> {
    if path.exists() {
        fs::remove_file(path)?;
    }
    Ok(JsonlSink::append(path)?)
}

fn train_features(
    cfg: &PipelineConfig,
    data: &PipelineData,
    dir: &Path,
    resume: bool,
    sink: &mut dyn LogSink,
) -> Result<Checkpoint> {
    let train = labeled(&data.train);
    let val = labeled(&data.val);
    let unl = unlabeled(&data.unlabeled);
    let fd = FeatureData {
        train: &train,
        val: &val,
        unlabeled: &unl,
    };
    let progress = dir.join(FEATURE_PROGRESS_DIR);
    let mut trainer = if resume && progress.exists() {
        FeatureTrainer::resume(cfg, &Checkpoint::load(&progress)?, None)?
    } else {
        FeatureTrainer::new(cfg, &fd)?
    };
    while !trainer.should_stop() {
        let entry = trainer.run_epoch(&fd)?;
        log::info!(
            "feature epoch {} metric {:.6}",
            entry.epoch,
            entry.val_metric
        );
        sink.record(&EpochLog::Feature(entry))?;
        trainer.checkpoint()?.save(&progress)?;
    }
    let (_, ckpt) = trainer.finish()?;
    ckpt.save(&dir.join(FEATURE_DIR))?;
    Ok(ckpt)
}

fn train_classifier(
    cfg: &PipelineConfig,
    data: &PipelineData,
    feature: &Checkpoint,
    dir: &Path,
    resume: bool,
    sink: &mut dyn LogSink,
) -> Result<Checkpoint> {
    let net = somno_core::train::load_feature_net(feature)?;
    let progress = dir.join(CLASSIFIER_PROGRESS_DIR);
    let mut trainer = match resume && progress.exists() {
        true => ClassifierTrainer::resume(cfg, &Checkpoint::load(&progress)?)?,
        false => ClassifierTrainer::new(cfg, net, feature.id().to_string())?,
    };
    let (len, stride) = (cfg.train.sequence_length, cfg.train.sequence_stride);
    let train = SequenceSet::encode(trainer.feature(), &sequences(&data.train, len, stride)?)?
        .ok_or_else(|| {
            Error::EmptyDataset(format!("no training recording has {len} labelled epochs"))
        })?;
    let val = SequenceSet::encode(trainer.feature(), &sequences(&data.val, len, stride)?)?;
    while !trainer.should_stop() {
        let entry = trainer.run_epoch(&train, val.as_ref())?;
        log::info!(
            "classifier epoch {} metric {:.6}",
            entry.epoch,
            entry.val_metric
        );
        sink.record(&EpochLog::Classifier(entry))?;
        trainer.checkpoint()?.save(&progress)?;
    }
    let (_, ckpt) = trainer.finish()?;
    ckpt.save(&dir.join(CLASSIFIER_DIR))?;
    Ok(ckpt)
}

/// Training and validation subjects: a fold's, or the whole manifest with the
/// trailing `val_fraction` of subjects held out for validation.
fn training_split(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    fold: Option<usize>,
) -> Result<PipelineData> {
    let (train, val) = match fold {
        Some(k) => {
            let splits = kfold_split(manifest, cfg.data.folds, cfg.data.val_fraction)?;
            let s = splits.get(k).ok_or_else(|| {
                Error::Config(format!("fold {k} out of range 0..{}", splits.len()))
            })?;
            (s.train.clone(), s.val.clone())
        }
        None => {
            let ids = manifest.subject_ids();
            if ids.is_empty() {
                return Err(Error::EmptyDataset("manifest lists no subjects".into()).into());
            }
            let n_val =
                ((cfg.data.val_fraction * ids.len() as f64).round() as usize).min(ids.len() - 1);
            let (t, v) = ids.split_at(ids.len() - n_val);
            (t.to_vec(), v.to_vec())
        }
    };
    Ok(PipelineData {
        train: manifest.load_subjects(&train)?,
        val: manifest.load_subjects(&val)?,
        unlabeled: load_unlabeled(cfg, manifest.sampling_rate_hz)?,
    })
}

pub fn train(a: TrainArgs) -> Result<()> {
    let (cfg, manifest) = resolve_config(&a.run)?;
    let dir = cfg.output_dir.clone();
    let data = training_split(&cfg, &manifest, a.fold)?;
    let log_path = dir.join(TRAIN_LOG);
    let continuing = a.resume || a.stage == Stage::Classifier;
    let mut sink = if continuing {
        JsonlSink::append(&log_path)?
    } else {
        fresh_sink(&log_path)?
    };

    if let Some(source) = &a.fine_tune_from {
        let source_classifier = Checkpoint::load(&source.join(CLASSIFIER_DIR))?;
        let source_feature = Checkpoint::load(&source.join(FEATURE_DIR))?;
        let (outcome, report) = fine_tune(
            &source_classifier,
            &source_feature,
            &cfg.pipeline,
            &data,
            &mut sink,
        )?;
        outcome.feature_checkpoint.save(&dir.join(FEATURE_DIR))?;
        outcome
            .classifier_checkpoint
            .save(&dir.join(CLASSIFIER_DIR))?;
        write_json(&dir.join("transfer.json"), &report)?;
        println!(
            "fine-tuned: {} tensors transferred, {} reinitialised; classifier {}",
            report.transferred.len(),
            report.reinitialized.len(),
            outcome.classifier_checkpoint.id()
        );
        return Ok(());
    }

    let feature = match a.stage {
        Stage::Features | Stage::Both => {
            let ckpt = train_features(&cfg.pipeline, &data, &dir, a.resume, &mut sink)?;
            println!(
                "feature checkpoint {} -> {}",
                ckpt.id(),
                dir.join(FEATURE_DIR).display()
            );
            ckpt
        }
        Stage::Classifier => {
            let path = dir.join(FEATURE_DIR);
            if !path
                .join(somno_core::train::checkpoint::MANIFEST_FILE)
                .exists()
            {
                return Err(Error::Checkpoint(format!(
                    "no feature checkpoint at {}; run with --stage features first",
                    path.display()
                ))
                .into());
            }
            Checkpoint::load(&path)?
        }
    };
    if a.stage != Stage::Features {
        let ckpt = train_classifier(&cfg.pipeline, &data, &feature, &dir, a.resume, &mut sink)?;
        println!(
            "classifier checkpoint {} -> {}",
            ckpt.id(),
            dir.join(CLASSIFIER_DIR).display()
        );
    }
    Ok(())
}

/// Writes each fold's logs, checkpoints and predictions under `fold-NN/`.
struct DirObserver {
    root: PathBuf,
    threshold: f64,
}

impl DirObserver {
    fn fold_dir(&self, fold: usize) -> PathBuf {
        self.root.join(format!("fold-{fold:02}"))
    }
}

impl FoldObserver for DirObserver {
    fn log_sink(&mut self, fold: usize) -> somno_core::Result<Box<dyn LogSink>> {
        let dir = self.fold_dir(fold);
        fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let path = dir.join(TRAIN_LOG);
        if path.exists() {
            fs::remove_file(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
        }
        Ok(Box::new(JsonlSink::append(&path)?))
    }

    fn fold_finished(
        &mut self,
        report: &FoldReport,
        outcome: &PipelineOutcome,
        evaluation: &Evaluation,
    ) -> somno_core::Result<()> {
        let dir = self.fold_dir(report.fold);
        outcome.feature_checkpoint.save(&dir.join(FEATURE_DIR))?;
        outcome
            .classifier_checkpoint
            .save(&dir.join(CLASSIFIER_DIR))?;
        let rows = evaluation
            .predictions
            .iter()
            .flat_map(|r| r.epoch_predictions(self.threshold));
        write_jsonl(&dir.join("predictions.jsonl"), rows)
            .map_err(|e| Error::Config(format!("{e:#}")))?;
        write_json(&dir.join("report.json"), report)
            .map_err(|e| Error::Config(format!("{e:#}")))?;
        log::info!(
            "fold {} accuracy {:.2}",
            report.fold,
            report.metrics.accuracy
        );
        Ok(())
    }
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (cfg, manifest) = resolve_config(&a.run)?;
    let mut splits = kfold_split(&manifest, cfg.data.folds, cfg.data.val_fraction)?;
    if let Some(n) = a.max_folds {
        splits.truncate(n.max(1));
    }
    let unlabeled = load_unlabeled(&cfg, manifest.sampling_rate_hz)?;
    let threshold = a.threshold.unwrap_or(cfg.predict.uncertainty_threshold);
    let mut observer = DirObserver {
        root: cfg.output_dir.clone(),
        threshold,
    };
    let report = cross_validate(&manifest, &splits, &cfg.pipeline, &unlabeled, &mut observer)?;
    let dir = &cfg.output_dir;
    write_jsonl(&dir.join("folds.jsonl"), &report.folds)?;
    write_json(&dir.join("summary.json"), &report.summary)?;
    let table = format_table(&report);
    fs::write(dir.join("table.txt"), &table)?;
    print!("{table}");
    let worst = emd_worst_case(&manifest, &report.folds, cfg.pipeline.train.seed)?;
    write_jsonl(&dir.join("worst_case.jsonl"), &worst)?;
    println!("subjects by amplitude distance to their training subjects:");
    for w in worst.iter().take(5) {
        let acc = w
            .metrics
            .map(|m| format!("{:.2}", m.accuracy))
            .unwrap_or_else(|| "-".into());
        println!("  {} emd {:.3e} accuracy {acc}", w.subject_id, w.emd);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PredictionLine {
    #[serde(flatten)]
    prediction: EpochPrediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<SleepStage>,
}

fn read_recording(path: &Path, channel: &str) -> Result<Recording> {
    let is_edf = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("edf"));
    if !is_edf {
        return Ok(Recording::read(path)?);
    }
    let (samples, rate, _) = load_recording(path, channel)?;
    let subject = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("recording");
    let epochs = segment_unlabeled(&samples, rate, subject.into())?;
    Ok(Recording {
        subject_id: subject.into(),
        sampling_rate_hz: rate,
        channel: channel.to_string(),
        epochs,
        stages: None,
    })
}

pub fn predict(a: PredictArgs) -> Result<()> {
    if !(a.threshold.is_finite() || a.threshold == f64::INFINITY) || a.threshold < 0.0 {
        return Err(Error::Config("threshold must be nonnegative".into()).into());
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = TrainedModel::from_checkpoint(&ckpt)?;
    let rec = read_recording(&a.recording, &a.channel)?;
    let records = model.predict(&rec.epochs)?;
    let rows: Vec<PredictionLine> = records
        .iter()
        .flat_map(|r| r.epoch_predictions(a.threshold))
        .map(|p| PredictionLine {
            truth: rec.stages.as_ref().map(|s| s[p.epoch]),
            prediction: p,
        })
        .collect();
    write_jsonl(&a.out, &rows)?;
    let flagged = rows.iter().filter(|r| r.prediction.flagged).count();
    let mut summary = format!(
        "{} epochs, {flagged} flagged at uncertainty >= {}",
        rows.len(),
        a.threshold
    );
    if rec.stages.is_some() {
        let hits = rows
            .iter()
            .filter(|r| r.truth == Some(r.prediction.stage))
            .count();
        summary.push_str(&format!(
            ", accuracy {:.2}",
            100.0 * hits as f64 / rows.len() as f64
        ));
    }
    println!("{summary}");
    if let Some(path) = &a.plot {
        let predicted: Vec<SleepStage> = rows.iter().map(|r| r.prediction.stage).collect();
        let uncertainty: Vec<f64> = rows.iter().map(|r| r.prediction.uncertainty).collect();
        let svg =
            plot::case_study_svg(rec.stages.as_deref(), &predicted, &uncertainty, a.threshold);
        fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn read_folds(path: &Path) -> Result<Vec<FoldReport>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())).into())
        })
        .collect()
}

pub fn stats(a: StatsArgs) -> Result<()> {
    match a.command {
        StatsCommand::Dataset { manifest } => {
            let m = DatasetManifest::load(&manifest)?;
            let mut parts: Vec<DatasetStats> = Vec::new();
            for id in m.subject_ids() {
                let epochs: Vec<_> = m
                    .load_subject(&id)?
                    .iter()
                    .filter_map(Recording::labeled_epochs)
                    .flatten()
                    .collect();
                if epochs.is_empty() {
                    continue;
                }
                let s = dataset_stats(&epochs)?;
                println!("{}", s.table_row(&id, 1));
                parts.push(s);
            }
            let all = DatasetStats::merge(&parts)?;
            println!("{}", all.table_row("total", m.subjects.len()));
        }
        StatsCommand::Ttest { a, b, metric } => {
            let (fa, fb) = (read_folds(&a)?, read_folds(&b)?);
            let pick = |f: &FoldReport| match metric {
                Metric::Accuracy => f.metrics.accuracy,
                Metric::MacroF1 => f.metrics.macro_f1,
                Metric::Kappa => f.metrics.kappa,
            };
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for f in &fa {
                let Some(g) = fb.iter().find(|g| g.fold == f.fold) else {
                    bail!("fold {} missing from {}", f.fold, b.display());
                };
                xs.push(pick(f));
                ys.push(pick(g));
            }
            let t = paired_t_test(&xs, &ys)?;
            println!("{}", serde_json::to_string(&t)?);
        }
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        subjects: a.subjects,
        first_subject: a.first_subject,
        recordings_per_subject: a.recordings,
        epochs_per_recording: a.epochs,
        sampling_rate_hz: a.rate,
        labeled: !a.unlabeled,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let m = write_dataset(&a.out_dir, &spec)?;
    let mut cfg = RunConfig::new(PathBuf::from("manifest.toml"));
    cfg.pipeline = compact_config(a.rate);
    cfg.data.folds = a.subjects.clamp(2, 20);
    fs::write(a.out_dir.join("config.toml"), cfg.to_toml()?)?;
    println!(
        "wrote {} subjects to {}",
        m.subjects.len(),
        a.out_dir.join("manifest.toml").display()
    );
    Ok(())
}
