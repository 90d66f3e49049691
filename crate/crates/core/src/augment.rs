//! Stochastic views of an epoch: chunk permutation and crop-and-resize.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Epoch, LabeledEpoch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// When false, both views are copies of the source epoch.
    pub enabled: bool,
    pub n_chunks_min: usize,
    pub n_chunks_max: usize,
    pub crop_ratio_min: f64,
    pub crop_ratio_max: f64,
    /// Apply permutation then crop to every view instead of picking one.
    pub compose: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: true,
            n_chunks_min: 4,
            n_chunks_max: 8,
            crop_ratio_min: 0.5,
            crop_ratio_max: 0.9,
            compose: false,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chunks_min < 1 || self.n_chunks_max < self.n_chunks_min {
            return Err(Error::Config(format!(
                "n_chunks range [{}, {}] invalid",
                self.n_chunks_min, self.n_chunks_max
            )));
        }
        let ok = |r: f64| r > 0.0 && r <= 1.0;
        if !ok(self.crop_ratio_min)
            || !ok(self.crop_ratio_max)
            || self.crop_ratio_max < self.crop_ratio_min
        {
            return Err(Error::Config(format!(
                "crop ratio range [{}, {}] must lie in (0, 1]",
                self.crop_ratio_min, self.crop_ratio_max
            )));
        }
        Ok(())
    }

    pub fn identity() -> Self {
        AugmentationConfig {
            n_chunks_min: 1,
            n_chunks_max: 1,
            crop_ratio_min: 1.0,
            crop_ratio_max: 1.0,
            ..Default::default()
        }
    }
}

/// Concatenates the chunks delimited by `cuts` (sorted interior boundaries)
/// in the order given by `order`.
pub fn permute_with(samples: &[f32], cuts: &[usize], order: &[usize]) -> Vec<f32> {
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(cuts);
    bounds.push(samples.len());
    let mut out = Vec::with_capacity(samples.len());
    for &c in order {
        out.extend_from_slice(&samples[bounds[c]..bounds[c + 1]]);
    }
    out
}

pub fn permute_chunks<R: Rng + ?Sized>(
    epoch: &Epoch,
    n_chunks: usize,
    rng: &mut R,
) -> Result<Epoch> {
    let len = epoch.len();
    if n_chunks < 1 || n_chunks > len {
        return Err(Error::Config(format!(
            "n_chunks {n_chunks} outside [1, {len}]"
        )));
    }
    let mut cuts: Vec<usize> = index::sample(rng, len - 1, n_chunks - 1)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    cuts.sort_unstable();
    let mut order: Vec<usize> = (0..n_chunks).collect();
    order.shuffle(rng);
    Ok(epoch.with_samples(permute_with(&epoch.samples, &cuts, &order)))
}

/// Linearly resamples `window` to `len` points, endpoints preserved.
pub fn resize_linear(window: &[f32], len: usize) -> Vec<f32> {
    let m = window.len();
    if len == 1 || m == 1 {
        return vec![window[0]; len];
    }
    let scale = (m - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|i| {
            let x = i as f64 * scale;
            let j = (x.floor() as usize).min(m - 2);
            let t = x - j as f64;
            let (a, b) = (f64::from(window[j]), f64::from(window[j + 1]));
            (a + (b - a) * t) as f32
        })
        .collect()
}

pub fn crop_length(len: usize, crop_ratio: f64) -> Result<usize> {
    if !(crop_ratio > 0.0 && crop_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "crop ratio {crop_ratio} outside (0, 1]"
        )));
    }
    let crop = ((crop_ratio * len as f64).round() as usize).min(len);
    if crop < 2 {
        return Err(Error::Config(format!(
            "crop ratio {crop_ratio} leaves {crop} samples of {len}"
        )));
    }
    Ok(crop)
}

pub fn crop_resize<R: Rng + ?Sized>(epoch: &Epoch, crop_ratio: f64, rng: &mut R) -> Result<Epoch> {
    let len = epoch.len();
    let crop = crop_length(len, crop_ratio)?;
    let start = rng.gen_range(0..=len - crop);
    Ok(epoch.with_samples(resize_linear(&epoch.samples[start..start + crop], len)))
}

fn one_view<R: Rng + ?Sized>(
    epoch: &Epoch,
    config: &AugmentationConfig,
    rng: &mut R,
) -> Result<Epoch> {
    if !config.enabled {
        return Ok(epoch.clone());
    }
    let n_chunks = rng.gen_range(config.n_chunks_min..=config.n_chunks_max);
    let ratio = if config.crop_ratio_max > config.crop_ratio_min {
        rng.gen_range(config.crop_ratio_min..=config.crop_ratio_max)
    } else {
        config.crop_ratio_min
    };
    if config.compose {
        let permuted = permute_chunks(epoch, n_chunks, rng)?;
        crop_resize(&permuted, ratio, rng)
    } else if rng.gen_bool(0.5) {
        permute_chunks(epoch, n_chunks, rng)
    } else {
        crop_resize(epoch, ratio, rng)
    }
}

/// Two independent views sharing the source label and subject.
pub fn make_views<R: Rng + ?Sized>(
    epoch: &LabeledEpoch,
    config: &AugmentationConfig,
    rng: &mut R,
) -> Result<(LabeledEpoch, LabeledEpoch)> {
    let a = one_view(&epoch.epoch, config, rng)?;
    let b = one_view(&epoch.epoch, config, rng)?;
    Ok((
        LabeledEpoch {
            epoch: a,
            stage: epoch.stage,
        },
        LabeledEpoch {
            epoch: b,
            stage: epoch.stage,
        },
    ))
}

/// Views of an unlabelled epoch.
pub fn make_unlabeled_views<R: Rng + ?Sized>(
    epoch: &Epoch,
    config: &AugmentationConfig,
    rng: &mut R,
) -> Result<(Epoch, Epoch)> {
    Ok((one_view(epoch, config, rng)?, one_view(epoch, config, rng)?))
}

/// Augmented dataset: views `2k` and `2k + 1` come from source epoch `k`.
pub fn augment_dataset<R: Rng + ?Sized>(
    epochs: &[LabeledEpoch],
    config: &AugmentationConfig,
    rng: &mut R,
) -> Result<Vec<LabeledEpoch>> {
    let mut out = Vec::with_capacity(2 * epochs.len());
    for e in epochs {
        let (a, b) = make_views(e, config, rng)?;
        out.push(a);
        out.push(b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stage::SleepStage;
    use proptest::prelude::*;
    use rand::Rng;

    fn epoch(samples: Vec<f32>) -> Epoch {
        // Rate chosen so that the 30-second length matches.
        assert_eq!(samples.len() % 30, 0);
        Epoch::new(samples.clone(), (samples.len() / 30) as u32, "s1".into()).unwrap()
    }

    fn random_epoch(len: usize, seed: u64) -> Epoch {
        let mut r = rng::stream(seed, "test", 0);
        epoch((0..len).map(|_| r.gen_range(-1.0f32..1.0)).collect())
    }

    #[test]
    fn single_chunk_is_identity() {
        let e = random_epoch(60, 1);
        let out = permute_chunks(&e, 1, &mut rng::stream(0, "t", 0)).unwrap();
        assert_eq!(out, e);
    }

    #[test]
    fn swap_two_chunks() {
        assert_eq!(
            permute_with(&[1.0, 2.0, 3.0, 4.0], &[2], &[1, 0]),
            vec![3.0, 4.0, 1.0, 2.0]
        );
    }

    #[test]
    fn chunk_count_range() {
        let e = random_epoch(30, 2);
        let mut r = rng::stream(0, "t", 0);
        assert!(matches!(
            permute_chunks(&e, 0, &mut r),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            permute_chunks(&e, 31, &mut r),
            Err(Error::Config(_))
        ));
        assert!(permute_chunks(&e, 30, &mut r).is_ok());
    }

    #[test]
    fn full_crop_is_identity() {
        let e = random_epoch(90, 3);
        assert_eq!(
            crop_resize(&e, 1.0, &mut rng::stream(0, "t", 0)).unwrap(),
            e
        );
    }

    #[test]
    fn constant_stays_constant() {
        let e = epoch(vec![2.5; 120]);
        let out = crop_resize(&e, 0.37, &mut rng::stream(0, "t", 0)).unwrap();
        assert!(out.samples.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn ramp_half_crop() {
        // Ramp 0..N-1; the first half (ratio 0.5) covers 0..N/2-1 and is
        // stretched back to N points: out[i] = i * (N/2 - 1) / (N - 1).
        let n = 300;
        let ramp: Vec<f32> = (0..n).map(|i| i as f32).collect();
        let out = resize_linear(&ramp[..n / 2], n);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[n - 1], (n / 2 - 1) as f32);
        for (i, v) in out.iter().enumerate() {
            let oracle = i as f64 * (n / 2 - 1) as f64 / (n - 1) as f64;
            assert!((f64::from(*v) - oracle).abs() < 1e-4);
        }
    }

    #[test]
    fn tiny_crop_rejected() {
        let e = random_epoch(30, 4);
        assert!(matches!(
            crop_resize(&e, 0.01, &mut rng::stream(0, "t", 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn views_keep_label_and_subject() {
        let src = LabeledEpoch {
            epoch: random_epoch(300, 5),
            stage: SleepStage::N2,
        };
        let (a, b) = make_views(
            &src,
            &AugmentationConfig::default(),
            &mut rng::stream(0, "t", 0),
        )
        .unwrap();
        for v in [&a, &b] {
            assert_eq!(v.stage, SleepStage::N2);
            assert_eq!(v.epoch.subject_id, src.epoch.subject_id);
        }
        let (a, b) = make_views(
            &src,
            &AugmentationConfig::identity(),
            &mut rng::stream(0, "t", 0),
        )
        .unwrap();
        assert_eq!(a, src);
        assert_eq!(b, src);
        let data = augment_dataset(
            &[src.clone(), src.clone(), src],
            &AugmentationConfig::default(),
            &mut rng::stream(0, "t", 0),
        )
        .unwrap();
        assert_eq!(data.len(), 6);
    }

    proptest! {
        #[test]
        fn length_and_multiset_preserved(len_epochs in 2usize..=133, seed in any::<u64>(), chunks in 1usize..16) {
            let e = random_epoch(len_epochs * 30, seed);
            let mut r = rng::stream(seed, "p", 0);
            let p = permute_chunks(&e, chunks, &mut r).unwrap();
            prop_assert_eq!(p.len(), e.len());
            let mut a: Vec<f32> = e.samples.to_vec();
            let mut b: Vec<f32> = p.samples.to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn crop_within_window_range(len_epochs in 2usize..=133, seed in any::<u64>(), ratio in 0.05f64..=1.0) {
            let e = random_epoch(len_epochs * 30, seed);
            let n = e.len();
            let crop = crop_length(n, ratio).unwrap();
            let start = rng::stream(seed, "s", 0).gen_range(0..=n - crop);
            let window = &e.samples[start..start + crop];
            let out = resize_linear(window, n);
            prop_assert_eq!(out.len(), n);
            let lo = window.iter().copied().fold(f32::INFINITY, f32::min) as f64;
            let hi = window.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            for v in out {
                prop_assert!(f64::from(v) >= lo - 1e-9 && f64::from(v) <= hi + 1e-9);
            }
        }

        #[test]
        fn views_deterministic_under_seed(seed in any::<u64>()) {
            let src = LabeledEpoch { epoch: random_epoch(120, seed), stage: SleepStage::W };
            let cfg = AugmentationConfig::default();
            let a = make_views(&src, &cfg, &mut rng::stream(seed, "v", 0)).unwrap();
            let b = make_views(&src, &cfg, &mut rng::stream(seed, "v", 0)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
