//! Per-recording binary format written by ingestion and read by training.
//!
//! Layout (all integers little-endian u32):
//! magic `SOMNOREC`, version, subject id (length + UTF-8), sampling rate,
//! channel name (length + UTF-8), epoch count, then `count * 30 * rate`
//! f32 samples, then one stage byte per epoch (`0..=4`, or `0xFF` when the
//! recording is unlabelled).

use std::fs;
use std::path::Path;

use super::types::{epoch_len, Epoch, LabeledEpoch, SubjectId};
use crate::error::{Error, Result};
use crate::stage::SleepStage;

const MAGIC: &[u8; 8] = b"SOMNOREC";
const VERSION: u32 = 1;
const UNLABELED: u8 = 0xFF;

/// A segmented single-channel recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: SubjectId,
    pub sampling_rate_hz: u32,
    pub channel: String,
    pub epochs: Vec<Epoch>,
    /// `None` for unlabelled recordings.
    pub stages: Option<Vec<SleepStage>>,
}

impl Recording {
    pub fn from_labeled(channel: &str, epochs: Vec<LabeledEpoch>) -> Result<Self> {
        let first = epochs
            .first()
            .ok_or_else(|| Error::EmptyDataset("recording has no usable epochs".into()))?;
        let subject_id = first.epoch.subject_id.clone();
        let sampling_rate_hz = first.epoch.sampling_rate_hz;
        let stages = epochs.iter().map(|e| e.stage).collect();
        Ok(Recording {
            subject_id,
            sampling_rate_hz,
            channel: channel.to_string(),
            epochs: epochs.into_iter().map(|e| e.epoch).collect(),
            stages: Some(stages),
        })
    }

    pub fn labeled_epochs(&self) -> Option<Vec<LabeledEpoch>> {
        let stages = self.stages.as_ref()?;
        Some(
            self.epochs
                .iter()
                .zip(stages)
                .map(|(e, &stage)| LabeledEpoch {
                    epoch: e.clone(),
                    stage,
                })
                .collect(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = epoch_len(self.sampling_rate_hz);
        let mut out = Vec::with_capacity(64 + self.epochs.len() * (n * 4 + 1));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.subject_id);
        out.extend_from_slice(&self.sampling_rate_hz.to_le_bytes());
        put_str(&mut out, &self.channel);
        out.extend_from_slice(&(self.epochs.len() as u32).to_le_bytes());
        for e in &self.epochs {
            for v in e.samples.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &self.stages {
            Some(s) => out.extend(s.iter().map(|s| s.index() as u8)),
            None => out.extend(std::iter::repeat_n(UNLABELED, self.epochs.len())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Parse("not a canonical recording file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Parse(format!(
                "unsupported recording version {version}"
            )));
        }
        let subject_id: SubjectId = r.string()?.into();
        let rate = r.u32()?;
        let channel = r.string()?;
        let count = r.u32()? as usize;
        let n = epoch_len(rate);
        let raw = r.take(count * n * 4)?;
        let samples: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let codes = r.take(count)?;
        if r.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes after recording".into()));
        }
        let epochs = samples
            .chunks_exact(n.max(1))
            .map(|c| Epoch::new(c, rate, subject_id.clone()))
            .collect::<Result<Vec<_>>>()?;
        let stages = if codes.iter().all(|&c| c == UNLABELED) && count > 0 {
            None
        } else {
            Some(
                codes
                    .iter()
                    .map(|&c| SleepStage::from_index(c as usize))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        Ok(Recording {
            subject_id,
            sampling_rate_hz: rate,
            channel,
            epochs,
            stages,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let out = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Parse("recording file truncated".into()))?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Parse("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(
            values in proptest::collection::vec(-1.0f32..1.0, 30..=90),
            labeled in any::<bool>(),
        ) {
            let sid: SubjectId = "SC4001".into();
            let n = values.len() / 30;
            let epochs: Vec<Epoch> = values.chunks_exact(30).take(n)
                .map(|c| Epoch::new(c, 1, sid.clone()).unwrap()).collect();
            let rec = Recording {
                subject_id: sid,
                sampling_rate_hz: 1,
                channel: "Fpz-Cz".into(),
                stages: labeled.then(|| (0..n).map(|i| SleepStage::ALL[i % 5]).collect()),
                epochs,
            };
            prop_assert_eq!(Recording::from_bytes(&rec.to_bytes()).unwrap(), rec);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Recording::from_bytes(b"nope").is_err());
    }
}
