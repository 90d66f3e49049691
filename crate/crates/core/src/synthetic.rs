//! Synthetic single-channel recordings with known stage and subject factors.
//!
//! Each epoch is a class tone (frequency set by the stage, random phase,
//! slight frequency jitter), plus a subject tone whose frequency and gain
//! depend only on the subject, plus white noise. Stages follow a sticky
//! Markov chain.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{epoch_len, DatasetManifest, Epoch, Recording, SubjectEntry, SubjectId};
use crate::nn::ResNetConfig;
use crate::rng;
use crate::sequence::TransformerConfig;
use crate::stage::{SleepStage, NUM_STAGES};
use crate::train::PipelineConfig;

pub const CHANNEL: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub subjects: usize,
    /// Index of the first subject, so that several sets can be disjoint.
    pub first_subject: usize,
    pub recordings_per_subject: usize,
    pub epochs_per_recording: usize,
    pub sampling_rate_hz: u32,
    /// Probability that a stage repeats.
    pub stickiness: f64,
    pub class_amplitude: f64,
    pub subject_amplitude: f64,
    pub noise: f64,
    pub labeled: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            subjects: 5,
            first_subject: 0,
            recordings_per_subject: 1,
            epochs_per_recording: 400,
            sampling_rate_hz: 4,
            stickiness: 0.7,
            class_amplitude: 1.0,
            subject_amplitude: 1.0,
            noise: 0.3,
            labeled: true,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.recordings_per_subject == 0 || self.epochs_per_recording == 0
        {
            return Err(Error::Config("synthetic dataset must be nonempty".into()));
        }
        if self.sampling_rate_hz == 0 {
            return Err(Error::Config(
                "synthetic sampling rate must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.stickiness) {
            return Err(Error::Config("stickiness must lie in [0, 1]".into()));
        }
        if !(self.noise >= 0.0 && self.class_amplitude >= 0.0 && self.subject_amplitude >= 0.0) {
            return Err(Error::Config(
                "synthetic amplitudes must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

pub fn subject_id(index: usize) -> SubjectId {
    SubjectId::from(format!("SYN{index:03}").as_str())
}

/// Class tone frequency as a fraction of the Nyquist frequency.
fn class_frequency(stage: usize) -> f64 {
    0.05 + 0.06 * stage as f64
}

/// Tone frequency (fraction of Nyquist) and gain of a subject.
fn subject_factors(subject: usize) -> (f64, f64) {
    let frequency = 0.45 + 0.1 * (subject % 5) as f64;
    let gain = 0.7 + 0.3 * ((subject / 5) % 3) as f64;
    (frequency, gain)
}

/// Sticky chain that starts uniformly and otherwise jumps uniformly.
pub fn stage_chain<R: Rng + ?Sized>(len: usize, stickiness: f64, rng: &mut R) -> Vec<SleepStage> {
    let mut out = Vec::with_capacity(len);
    let mut current = rng.gen_range(0..NUM_STAGES);
    for t in 0..len {
        if t > 0 && !rng.gen_bool(stickiness) {
            current = rng.gen_range(0..NUM_STAGES);
        }
        out.push(SleepStage::from_index(current).expect("index below NUM_STAGES"));
    }
    out
}

/// One epoch for `stage` and `subject`.
pub fn synth_epoch<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    stage: SleepStage,
    subject: usize,
    rng: &mut R,
) -> Vec<f32> {
    let n = epoch_len(spec.sampling_rate_hz);
    // Cycles per epoch at the Nyquist frequency.
    let nyquist = n as f64 / 2.0;
    let tau = std::f64::consts::TAU;
    let f_class = class_frequency(stage.index()) * nyquist * rng.gen_range(0.97..1.03);
    let phase_class = rng.gen_range(0.0..tau);
    let (f_subject, gain) = subject_factors(subject);
    let f_subject = f_subject * nyquist;
    let phase_subject = rng.gen_range(0.0..tau);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite std");
    (0..n)
        .map(|i| {
            let x = i as f64 / n as f64;
            let v = spec.class_amplitude * (tau * f_class * x + phase_class).sin()
                + spec.subject_amplitude * gain * (tau * f_subject * x + phase_subject).sin()
                + if spec.noise > 0.0 {
                    noise.sample(rng)
                } else {
                    0.0
                };
            v as f32
        })
        .collect()
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Recording>> {
    spec.validate()?;
    let mut out = Vec::new();
    for s in 0..spec.subjects {
        let subject = spec.first_subject + s;
        let id = subject_id(subject);
        for r in 0..spec.recordings_per_subject {
            let index = (subject * spec.recordings_per_subject + r) as u64;
            let mut stage_rng = rng::stream(spec.seed, "synthetic-stages", index);
            let mut signal_rng = rng::stream(spec.seed, "synthetic-signal", index);
            let stages = stage_chain(spec.epochs_per_recording, spec.stickiness, &mut stage_rng);
            let epochs = stages
                .iter()
                .map(|&st| {
                    Epoch::new(
                        synth_epoch(spec, st, subject, &mut signal_rng),
                        spec.sampling_rate_hz,
                        id.clone(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(Recording {
                subject_id: id.clone(),
                sampling_rate_hz: spec.sampling_rate_hz,
                channel: CHANNEL.to_string(),
                epochs,
                stages: spec.labeled.then_some(stages),
            });
        }
    }
    Ok(out)
}

/// Writes canonical recordings and `manifest.toml` into `dir`.
pub fn write_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let recordings = generate(spec)?;
    let mut subjects: Vec<SubjectEntry> = Vec::new();
    for (i, rec) in recordings.iter().enumerate() {
        let file = format!("{}_{}.rec", rec.subject_id, i % spec.recordings_per_subject);
        rec.write(&dir.join(&file))?;
        match subjects.last_mut() {
            Some(e) if e.id == *rec.subject_id => e.recordings.push(file.into()),
            _ => subjects.push(SubjectEntry {
                id: rec.subject_id.to_string(),
                recordings: vec![file.into()],
                fold: None,
            }),
        }
    }
    let manifest = DatasetManifest {
        sampling_rate_hz: spec.sampling_rate_hz,
        channel: CHANNEL.to_string(),
        subjects,
        base_dir: dir.to_path_buf(),
    };
    manifest.save(&dir.join("manifest.toml"))?;
    Ok(manifest)
}

/// A narrow pipeline sized for synthetic data at `sampling_rate_hz`.
///
/// Augmentation is kept mild: strong crop-and-resize rescales frequencies
/// and would erase the frequency-coded classes.
pub fn compact_config(sampling_rate_hz: u32) -> PipelineConfig {
    let latent = 16;
    let mut c = PipelineConfig::default();
    c.feature.sampling_rate_hz = sampling_rate_hz;
    c.feature.encoder = ResNetConfig {
        base_width: 4,
        blocks: vec![1, 1],
        expansion: 2,
    };
    c.feature.subject_latent_dim = latent;
    c.feature.sleep_latent_dim = latent;
    c.feature.decoder_hidden = 32;
    c.feature.decoder_channels = 8;
    c.feature.prior_hidden = 16;
    c.feature.projection_hidden = 16;
    c.feature.projection_dim = 16;
    c.augmentation.crop_ratio_min = 0.9;
    c.augmentation.crop_ratio_max = 1.0;
    c.augmentation.n_chunks_min = 2;
    c.augmentation.n_chunks_max = 4;
    c.sequence.input_dim = latent;
    c.sequence.transformer = TransformerConfig {
        layers: 1,
        heads: 2,
        model_dim: 16,
        feed_forward_dim: 32,
        dropout: 0.0,
        positional_encoding: true,
    };
    c.train.batch_size = 16;
    c.train.learning_rate = 3e-3;
    c.train.feature_epochs = 30;
    c.train.classifier_epochs = 20;
    c.train.patience = 100;
    c.train.sequence_length = 10;
    c.train.sequence_stride = 10;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let spec = SyntheticSpec {
            subjects: 2,
            epochs_per_recording: 30,
            ..Default::default()
        };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].epochs.len(), 30);
        assert_eq!(a[0].epochs[0].samples.len(), epoch_len(4));
        assert_ne!(a[0].subject_id, a[1].subject_id);
    }

    #[test]
    fn chain_visits_all_stages() {
        let s = stage_chain(2000, 0.7, &mut rng::stream(0, "t", 0));
        for stage in SleepStage::ALL {
            assert!(s.contains(&stage));
        }
        let repeats = s.windows(2).filter(|w| w[0] == w[1]).count() as f64 / 1999.0;
        // Staying, plus jumping back to the same stage: 0.7 + 0.3 / 5.
        assert!((repeats - 0.76).abs() < 0.05, "{repeats}");
    }

    #[test]
    fn frequencies_below_nyquist_and_distinct() {
        for c in 0..NUM_STAGES {
            assert!(class_frequency(c) * 1.03 < 1.0);
        }
        for s in 0..40 {
            let (f, g) = subject_factors(s);
            assert!(f < 1.0 && g > 0.0);
            assert!(f > class_frequency(NUM_STAGES - 1) * 1.03);
        }
    }

    #[test]
    fn written_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            subjects: 3,
            recordings_per_subject: 2,
            epochs_per_recording: 5,
            ..Default::default()
        };
        let m = write_dataset(dir.path(), &spec).unwrap();
        let loaded = DatasetManifest::load(&dir.path().join("manifest.toml")).unwrap();
        assert_eq!(loaded.subjects, m.subjects);
        assert_eq!(loaded.load_subject("SYN001").unwrap().len(), 2);
    }

    #[test]
    fn compact_config_is_valid() {
        let c = compact_config(4);
        c.validate().unwrap();
        assert_eq!(c.sequence.input_dim, c.feature.sleep_latent_dim);
    }
}
