use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::canonical::Recording;
use super::types::SubjectId;
use crate::error::{Error, Result};

/// Subjects and their canonical recording files.
///
/// Serialised as TOML; recording paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub sampling_rate_hz: u32,
    pub channel: String,
    #[serde(default, rename = "subject")]
    pub subjects: Vec<SubjectEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub recordings: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampling_rate_hz == 0 {
            return Err(Error::Config(
                "manifest sampling_rate_hz must be positive".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for s in &self.subjects {
            if !seen.insert(&s.id) {
                return Err(Error::Config(format!("subject {:?} listed twice", s.id)));
            }
        }
        let with_fold = self.subjects.iter().filter(|s| s.fold.is_some()).count();
        if with_fold != 0 && with_fold != self.subjects.len() {
            return Err(Error::Config(
                "fold assignments must be given for every subject or none".into(),
            ));
        }
        Ok(())
    }

    pub fn subject_ids(&self) -> Vec<SubjectId> {
        self.subjects
            .iter()
            .map(|s| SubjectId::from(s.id.as_str()))
            .collect()
    }

    pub fn entry(&self, id: &str) -> Option<&SubjectEntry> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads every recording of `subject`, checking rate and channel.
    pub fn load_subject(&self, subject: &str) -> Result<Vec<Recording>> {
        let entry = self
            .entry(subject)
            .ok_or_else(|| Error::Config(format!("subject {subject:?} not in manifest")))?;
        entry
            .recordings
            .iter()
            .map(|p| {
                let rec = Recording::read(&self.resolve(p))?;
                if rec.sampling_rate_hz != self.sampling_rate_hz {
                    return Err(Error::Config(format!(
                        "{} is sampled at {} Hz, manifest says {} Hz",
                        p.display(),
                        rec.sampling_rate_hz,
                        self.sampling_rate_hz
                    )));
                }
                if !rec.channel.eq_ignore_ascii_case(&self.channel) {
                    return Err(Error::ChannelNotFound {
                        channel: self.channel.clone(),
                        path: p.clone(),
                    });
                }
                Ok(rec)
            })
            .collect()
    }

    pub fn load_subjects(&self, subjects: &[SubjectId]) -> Result<Vec<Recording>> {
        let mut out = Vec::new();
        for s in subjects {
            out.extend(self.load_subject(s)?);
        }
        Ok(out)
    }
}

/// Train/validation/test subjects of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<SubjectId>,
    pub val: Vec<SubjectId>,
    pub test: Vec<SubjectId>,
}

/// Subject-wise k-fold partition.
///
/// Test folds are contiguous blocks of the manifest order (sizes differ by at
/// most one), or the manifest's explicit fold assignments when present. The
/// validation subjects are the `round(val_fraction * n)` subjects following
/// the test block cyclically; the rest train.
pub fn kfold_split(
    manifest: &DatasetManifest,
    k: usize,
    val_fraction: f64,
) -> Result<Vec<FoldSplit>> {
    let subjects = manifest.subject_ids();
    let n = subjects.len();
    if k < 2 || k > n {
        return Err(Error::Config(format!(
            "cannot make {k} folds from {n} subjects"
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} outside [0, 1)"
        )));
    }

    let fold_of: Vec<usize> = if manifest.subjects.iter().all(|s| s.fold.is_some()) && n > 0 {
        let folds: Vec<usize> = manifest
            .subjects
            .iter()
            .map(|s| s.fold.unwrap_or(0))
            .collect();
        let distinct: BTreeSet<usize> = folds.iter().copied().collect();
        if distinct.len() != k || distinct.iter().any(|&f| f >= k) {
            return Err(Error::Config(format!(
                "manifest assigns folds {distinct:?}, expected 0..{k}"
            )));
        }
        folds
    } else {
        let (base, extra) = (n / k, n % k);
        (0..k)
            .flat_map(|f| std::iter::repeat_n(f, base + usize::from(f < extra)))
            .collect()
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (fold_of[i], i));
    let val_wanted = (val_fraction * n as f64).round() as usize;

    Ok((0..k)
        .map(|fold| {
            let test_pos: Vec<usize> = (0..n).filter(|&p| fold_of[order[p]] == fold).collect();
            let last = *test_pos.last().expect("every fold is non-empty");
            let val_count = val_wanted.min(n - test_pos.len() - 1);
            let val_pos: BTreeSet<usize> = (1..n)
                .map(|d| (last + d) % n)
                .filter(|p| fold_of[order[*p]] != fold)
                .take(val_count)
                .collect();
            let pick = |keep: &dyn Fn(usize) -> bool| -> Vec<SubjectId> {
                (0..n)
                    .filter(|&p| keep(p))
                    .map(|p| subjects[order[p]].clone())
                    .collect()
            };
            FoldSplit {
                fold,
                test: pick(&|p| fold_of[order[p]] == fold),
                val: pick(&|p| val_pos.contains(&p)),
                train: pick(&|p| fold_of[order[p]] != fold && !val_pos.contains(&p)),
            }
        })
        .collect())
}
