//! On-disk checkpoints: `manifest.json` plus `weights.bin`, a concatenation
//! of little-endian f32 tensors located by offsets in the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature::FeatureNetConfig;
use crate::nn::{AdamConfig, NamedTensor};
use crate::sequence::SequenceConfig;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

/// Tensor-name prefixes inside a checkpoint.
pub mod groups {
    /// Frozen representation weights carried by classifier checkpoints.
    pub const FEATURE: &str = "feature/";
    /// Best-so-far weights kept for resuming early stopping.
    pub const BEST: &str = "best/";
    /// Optimiser moments.
    pub const ADAM: &str = "adam/";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Feature,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the weights file, in f32 elements.
    pub offset: usize,
}

/// Training progress needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Progress {
    /// Completed epochs.
    pub epoch: usize,
    /// Validation metric per completed epoch.
    pub history: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
    pub optimizer: Option<AdamConfig>,
    pub optimizer_steps: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// SHA-256 of the model tensors (excluding optimiser and best-so-far groups).
    pub id: String,
    pub stage: StageTag,
    /// Feature checkpoint a classifier checkpoint was trained on.
    pub parent: Option<String>,
    pub feature: FeatureNetConfig,
    pub sequence: Option<SequenceConfig>,
    /// Subject vocabulary of the subject classifier, in index order.
    pub subjects: Vec<String>,
    pub progress: Progress,
    /// Free-form snapshot of the run configuration.
    pub run_config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: Vec<NamedTensor>,
}

fn is_model_tensor(name: &str) -> bool {
    !name.starts_with(groups::BEST) && !name.starts_with(groups::ADAM)
}

/// Identifier of a set of tensors: hash of names, shapes and values.
pub fn tensor_digest<'a>(tensors: impl Iterator<Item = &'a NamedTensor>) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        h.update(t.name.as_bytes());
        h.update([0u8]);
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &t.data {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn new(
        stage: StageTag,
        parent: Option<String>,
        feature: FeatureNetConfig,
        sequence: Option<SequenceConfig>,
        subjects: Vec<String>,
        progress: Progress,
        run_config: serde_json::Value,
        tensors: Vec<NamedTensor>,
    ) -> Self {
        let id = tensor_digest(tensors.iter().filter(|t| is_model_tensor(&t.name)));
        let mut offset = 0;
        let entries = tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.data.len();
                e
            })
            .collect();
        Checkpoint {
            manifest: CheckpointManifest {
                format_version: FORMAT_VERSION,
                id,
                stage,
                parent,
                feature,
                sequence,
                subjects,
                progress,
                run_config,
                tensors: entries,
            },
            tensors,
        }
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    /// Tensors under `prefix`, with the prefix removed.
    pub fn group(&self, prefix: &str) -> Vec<NamedTensor> {
        self.tensors
            .iter()
            .filter_map(|t| {
                t.name.strip_prefix(prefix).map(|n| NamedTensor {
                    name: n.to_string(),
                    ..t.clone()
                })
            })
            .collect()
    }

    /// Model tensors of this stage (no group prefix).
    pub fn model_tensors(&self) -> Vec<NamedTensor> {
        self.tensors
            .iter()
            .filter(|t| !t.name.contains('/'))
            .cloned()
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let total: usize = self.tensors.iter().map(|t| t.data.len()).sum();
        let mut blob = Vec::with_capacity(total * 4);
        for t in &self.tensors {
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let wpath = dir.join(WEIGHTS_FILE);
        fs::write(&wpath, blob).map_err(|e| Error::io(&wpath, e))?;
        let mpath = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", mpath.display())))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("invalid manifest {}: {e}", mpath.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                manifest.format_version
            )));
        }
        let wpath = dir.join(WEIGHTS_FILE);
        let blob = fs::read(&wpath)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", wpath.display())))?;
        if blob.len() % 4 != 0 {
            return Err(Error::Checkpoint(
                "weights file length is not a multiple of 4".into(),
            ));
        }
        let floats: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let data = floats.get(e.offset..e.offset + n).ok_or_else(|| {
                Error::Checkpoint(format!("tensor {} lies outside the weights file", e.name))
            })?;
            tensors.push(NamedTensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data: data.to_vec(),
            });
        }
        let ckpt = Checkpoint { manifest, tensors };
        let id = tensor_digest(ckpt.tensors.iter().filter(|t| is_model_tensor(&t.name)));
        if id != ckpt.manifest.id {
            return Err(Error::Checkpoint(format!(
                "weights of {} do not match the manifest id",
                dir.display()
            )));
        }
        Ok(ckpt)
    }

    pub fn expect_stage(&self, stage: StageTag) -> Result<()> {
        if self.manifest.stage != stage {
            return Err(Error::Checkpoint(format!(
                "expected a {stage:?} checkpoint, found {:?}",
                self.manifest.stage
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::new(
            StageTag::Feature,
            None,
            FeatureNetConfig::default(),
            None,
            vec!["a".into()],
            Progress {
                epoch: 3,
                history: vec![1.0, 0.5, 0.7],
                best_epoch: Some(2),
                ..Progress::default()
            },
            serde_json::json!({"seed": 1}),
            vec![
                NamedTensor {
                    name: "w".into(),
                    shape: vec![2, 2],
                    data: vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE],
                },
                NamedTensor {
                    name: "adam/m.w".into(),
                    shape: vec![1],
                    data: vec![0.1],
                },
            ],
        )
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample();
        c.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.model_tensors().len(), 1);
        assert_eq!(back.group(groups::ADAM)[0].name, "m.w");
    }

    #[test]
    fn id_ignores_optimizer_state() {
        let mut c = sample();
        c.tensors[1].data[0] = 9.0;
        let again = Checkpoint::new(
            c.manifest.stage,
            None,
            c.manifest.feature.clone(),
            None,
            vec![],
            Progress::default(),
            serde_json::Value::Null,
            c.tensors.clone(),
        );
        assert_eq!(again.id(), sample().id());
    }

    #[test]
    fn tampered_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(dir.path()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn missing_directory_is_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Checkpoint::load(&dir.path().join("nope")),
            Err(Error::Checkpoint(_))
        ));
    }
}
