//! Directory-level ingestion into canonical recordings plus a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::canonical::Recording;
use super::edf::load_recording;
use super::hypnogram;
use super::manifest::{DatasetManifest, SubjectEntry};
use super::segment::{segment_and_label, segment_unlabeled};
use super::stats::{dataset_stats, DatasetStats};
use super::types::SubjectId;
use crate::error::{Error, Result};

/// File naming convention of a raw dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// `SC4ssN?-PSG.edf` with `SC4ssN?-Hypnogram.edf`; subject `SC4ss`.
    SleepEdf,
    /// `<name>.edf` with `<name>-profusion.xml` anywhere below the root.
    Shhs,
    /// `<name>.edf` with `<name>.txt`, `<name>.xml` or `<name>-Hypnogram.edf`
    /// beside it; subject `<name>`.
    Generic,
    /// Picks one of the above from the files present.
    Auto,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sleep-edf" | "sleepedf" => Ok(DatasetKind::SleepEdf),
            "shhs" => Ok(DatasetKind::Shhs),
            "generic" => Ok(DatasetKind::Generic),
            "auto" => Ok(DatasetKind::Auto),
            other => Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub channel: String,
    pub kind: DatasetKind,
    /// Ignore hypnograms and store unlabeled recordings.
    pub unlabeled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestFailure {
    pub path: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    /// Per subject, over labelled epochs; empty for unlabeled ingestion.
    pub subject_stats: Vec<(String, DatasetStats)>,
    pub total_epochs: usize,
    pub failures: Vec<IngestFailure>,
}

impl IngestReport {
    /// Statistics over every subject.
    pub fn overall(&self) -> Option<DatasetStats> {
        let parts: Vec<DatasetStats> = self.subject_stats.iter().map(|(_, s)| s.clone()).collect();
        DatasetStats::merge(&parts).ok()
    }
}

/// A signal file with its hypnogram (if any) and subject.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub signal: PathBuf,
    pub hypnogram: Option<PathBuf>,
    pub subject: String,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string()
}

fn is_edf(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("edf"))
}

fn detect(files: &[PathBuf]) -> DatasetKind {
    if files.iter().any(|p| file_name(p).ends_with("-PSG.edf")) {
        DatasetKind::SleepEdf
    } else if files
        .iter()
        .any(|p| file_name(p).ends_with("-profusion.xml"))
    {
        DatasetKind::Shhs
    } else {
        DatasetKind::Generic
    }
}

/// Pairs signal files with hypnograms according to `kind`.
pub fn discover(root: &Path, kind: DatasetKind) -> Result<Vec<RawRecording>> {
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let kind = if kind == DatasetKind::Auto {
        detect(&files)
    } else {
        kind
    };
    let by_name: BTreeMap<String, &PathBuf> = files.iter().map(|p| (file_name(p), p)).collect();
    let mut out = Vec::new();
    for p in &files {
        let name = file_name(p);
        if !is_edf(p) || name.ends_with("-Hypnogram.edf") {
            continue;
        }
        let stem = name[..name.len() - 4].to_string();
        let rec = match kind {
            DatasetKind::SleepEdf => {
                let Some(base) = stem.strip_suffix("-PSG") else {
                    continue;
                };
                let key: String = base.chars().take(7).collect();
                let hyp = files.iter().find(|h| {
                    let n = file_name(h);
                    n.ends_with("-Hypnogram.edf") && n.starts_with(&key) && h.parent() == p.parent()
                });
                RawRecording {
                    signal: p.clone(),
                    hypnogram: hyp.cloned(),
                    subject: base.chars().take(5).collect(),
                }
            }
            DatasetKind::Shhs => RawRecording {
                signal: p.clone(),
                hypnogram: by_name
                    .get(&format!("{stem}-profusion.xml"))
                    .map(|h| (*h).clone()),
                subject: stem,
            },
            DatasetKind::Generic | DatasetKind::Auto => {
                let dir = p.parent().unwrap_or(Path::new(""));
                let hyp = [
                    format!("{stem}.txt"),
                    format!("{stem}.xml"),
                    format!("{stem}-Hypnogram.edf"),
                ]
                .into_iter()
                .map(|n| dir.join(n))
                .find(|c| c.is_file());
                RawRecording {
                    signal: p.clone(),
                    hypnogram: hyp,
                    subject: stem,
                }
            }
        };
        out.push(rec);
    }
    Ok(out)
}

fn ingest_one(raw: &RawRecording, options: &IngestOptions) -> Result<Recording> {
    let (samples, rate, _) = load_recording(&raw.signal, &options.channel)?;
    let subject: SubjectId = raw.subject.as_str().into();
    if options.unlabeled {
        let epochs = segment_unlabeled(&samples, rate, subject.clone())?;
        if epochs.is_empty() {
            return Err(Error::EmptyDataset(
                "recording shorter than one epoch".into(),
            ));
        }
        return Ok(Recording {
            subject_id: subject,
            sampling_rate_hz: rate,
            channel: options.channel.clone(),
            epochs,
            stages: None,
        });
    }
    let hyp = raw
        .hypnogram
        .as_ref()
        .ok_or_else(|| Error::Parse(format!("no hypnogram found for {}", raw.signal.display())))?;
    let annotations = hypnogram::load(hyp)?;
    let labeled = segment_and_label(&samples, rate, &annotations, subject)?;
    Recording::from_labeled(&options.channel, labeled)
}

/// Converts every recording under `raw_dir` and writes `manifest.toml` into
/// `out_dir`. Individual failures are reported; the call fails only when no
/// recording could be ingested.
pub fn ingest_directory(
    raw_dir: &Path,
    out_dir: &Path,
    options: &IngestOptions,
) -> Result<IngestReport> {
    let raws = discover(raw_dir, options.kind)?;
    if raws.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no recordings found in {}",
            raw_dir.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut failures = Vec::new();
    let mut subjects: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let mut stats: BTreeMap<String, Vec<DatasetStats>> = BTreeMap::new();
    let mut rate: Option<u32> = None;
    let mut total_epochs = 0;
    for raw in &raws {
        let result = ingest_one(raw, options).and_then(|rec| {
            if let Some(r) = rate.filter(|&r| r != rec.sampling_rate_hz) {
                return Err(Error::Config(format!(
                    "sampled at {} Hz, earlier files at {r} Hz",
                    rec.sampling_rate_hz
                )));
            }
            Ok(rec)
        });
        match result {
            Ok(rec) => {
                rate = Some(rec.sampling_rate_hz);
                let stem = file_name(&raw.signal);
                let file = PathBuf::from(format!("{}.rec", &stem[..stem.len() - 4]));
                rec.write(&out_dir.join(&file))?;
                total_epochs += rec.epochs.len();
                if let Some(labeled) = rec.labeled_epochs() {
                    stats
                        .entry(raw.subject.clone())
                        .or_default()
                        .push(dataset_stats(&labeled)?);
                }
                subjects.entry(raw.subject.clone()).or_default().push(file);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", raw.signal.display());
                failures.push(IngestFailure {
                    path: raw.signal.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let Some(rate) = rate else {
        let detail: Vec<String> = failures
            .iter()
            .map(|f| format!("{}: {}", f.path.display(), f.error))
            .collect();
        return Err(Error::EmptyDataset(format!(
            "every recording failed to ingest: {}",
            detail.join("; ")
        )));
    };
    let manifest = DatasetManifest {
        sampling_rate_hz: rate,
        channel: options.channel.clone(),
        subjects: subjects
            .into_iter()
            .map(|(id, recordings)| SubjectEntry {
                id,
                recordings,
                fold: None,
            })
            .collect(),
        base_dir: out_dir.to_path_buf(),
    };
    let manifest_path = out_dir.join("manifest.toml");
    manifest.save(&manifest_path)?;
    let subject_stats = stats
        .into_iter()
        .map(|(id, parts)| Ok((id, DatasetStats::merge(&parts)?)))
        .collect::<Result<_>>()?;
    Ok(IngestReport {
        manifest,
        manifest_path,
        subject_stats,
        total_epochs,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::edf::{write_edf, WriteSignal};

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "sleep-edf".parse::<DatasetKind>().unwrap(),
            DatasetKind::SleepEdf
        );
        assert!("nope".parse::<DatasetKind>().is_err());
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let opts = IngestOptions {
            channel: "EEG".into(),
            kind: DatasetKind::Auto,
            unlabeled: false,
        };
        let err = ingest_directory(dir.path(), out.path(), &opts).unwrap_err();
        assert!(err.to_string().contains("no recordings found"), "{err}");
    }

    #[test]
    fn sleep_edf_pairing() {
        let dir = tempfile::tempdir().unwrap();
        for n in [
            "SC4001E0-PSG.edf",
            "SC4001EC-Hypnogram.edf",
            "SC4012E0-PSG.edf",
            "SC4012EC-Hypnogram.edf",
        ] {
            fs::write(dir.path().join(n), b"").unwrap();
        }
        let found = discover(dir.path(), DatasetKind::Auto).unwrap();
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].subject, "SC400");
        assert_eq!(
            file_name(found[1].hypnogram.as_ref().unwrap()),
            "SC4012EC-Hypnogram.edf"
        );
    }

    #[test]
    fn generic_round_trip_and_partial_failure() {
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let samples: Vec<f64> = (0..90).map(|i| (i as f64 * 0.1).sin()).collect();
        let sig = WriteSignal::Samples {
            label: "EEG".into(),
            physical_dimension: "uV".into(),
            physical_min: -1.0,
            physical_max: 1.0,
            samples_per_record: 30,
            samples,
        };
        write_edf(&raw.path().join("a.edf"), "a", 30.0, &[sig.clone()]).unwrap();
        fs::write(raw.path().join("a.txt"), "W\nN4\nMovement time\n").unwrap();
        write_edf(&raw.path().join("b.edf"), "b", 30.0, &[sig]).unwrap();
        let opts = IngestOptions {
            channel: "EEG".into(),
            kind: DatasetKind::Generic,
            unlabeled: false,
        };
        let report = ingest_directory(raw.path(), out.path(), &opts).unwrap();
        assert_eq!(report.total_epochs, 2);
        assert_eq!(report.failures.len(), 1);
        let first = fs::read(out.path().join("a.rec")).unwrap();
        ingest_directory(raw.path(), out.path(), &opts).unwrap();
        assert_eq!(first, fs::read(out.path().join("a.rec")).unwrap());
        let m = DatasetManifest::load(&report.manifest_path).unwrap();
        assert_eq!(m.subjects.len(), 1);
    }
}
