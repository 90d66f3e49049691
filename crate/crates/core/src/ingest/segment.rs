use super::hypnogram::{StageAnnotation, EPOCH_SECONDS};
use super::types::{epoch_len, Epoch, LabeledEpoch, SubjectId};
use crate::error::{Error, Result};
use crate::stage::RawStage;

const ALIGN_TOL_S: f64 = 1e-6;

/// Expands interval annotations into one raw label per 30-second window.
/// Gaps between annotations are filled with `Unknown`.
pub fn expand_annotations(annotations: &[StageAnnotation]) -> Result<Vec<RawStage>> {
    let w = EPOCH_SECONDS as f64;
    let mut labels = Vec::new();
    for a in annotations {
        let start = a.onset_s / w;
        let count = a.duration_s / w;
        if (start - start.round()).abs() > ALIGN_TOL_S
            || (count - count.round()).abs() > ALIGN_TOL_S
        {
            return Err(Error::Alignment(format!(
                "annotation at {}s lasting {}s is not on 30-second boundaries",
                a.onset_s, a.duration_s
            )));
        }
        let (start, count) = (start.round() as usize, count.round() as usize);
        if labels.len() < start + count {
            labels.resize(start + count, RawStage::Unknown);
        }
        labels[start..start + count].fill(a.stage);
    }
    Ok(labels)
}

/// Windows a full-night channel into labelled 30-second epochs.
///
/// N4 becomes N3, movement and unknown windows are dropped, and a trailing
/// partial window is discarded. The hypnogram and the signal may disagree by
/// at most one window; trailing unscored windows beyond the signal are ignored.
pub fn segment_and_label(
    samples: &[f32],
    sampling_rate_hz: u32,
    annotations: &[StageAnnotation],
    subject_id: SubjectId,
) -> Result<Vec<LabeledEpoch>> {
    let n = epoch_len(sampling_rate_hz);
    if n == 0 {
        return Err(Error::Config("sampling rate must be positive".into()));
    }
    let data_epochs = samples.len() / n;
    let mut labels = expand_annotations(annotations)?;
    while labels.len() > data_epochs && labels.last().is_some_and(|l| l.harmonize().is_none()) {
        labels.pop();
    }
    if labels.len().abs_diff(data_epochs) > 1 {
        return Err(Error::Alignment(format!(
            "hypnogram covers {} epochs but the signal holds {data_epochs}",
            labels.len()
        )));
    }
    let usable = labels.len().min(data_epochs);
    labels[..usable]
        .iter()
        .enumerate()
        .filter_map(|(i, raw)| raw.harmonize().map(|stage| (i, stage)))
        .map(|(i, stage)| {
            Ok(LabeledEpoch {
                epoch: Epoch::new(
                    &samples[i * n..(i + 1) * n],
                    sampling_rate_hz,
                    subject_id.clone(),
                )?,
                stage,
            })
        })
        .collect()
}

/// Windows a channel without labels (unlabelled recordings).
pub fn segment_unlabeled(
    samples: &[f32],
    sampling_rate_hz: u32,
    subject_id: SubjectId,
) -> Result<Vec<Epoch>> {
    let n = epoch_len(sampling_rate_hz);
    if n == 0 {
        return Err(Error::Config("sampling rate must be positive".into()));
    }
    samples
        .chunks_exact(n)
        .map(|c| Epoch::new(c, sampling_rate_hz, subject_id.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::SleepStage;
    use proptest::prelude::*;

    fn sid() -> SubjectId {
        "s1".into()
    }

    #[test]
    fn n4_merged_and_movement_dropped() {
        let samples = vec![0.0f32; 9000];
        let ann = StageAnnotation::sequence(&[RawStage::W, RawStage::N4, RawStage::Movement]);
        let out = segment_and_label(&samples, 100, &ann, sid()).unwrap();
        let stages: Vec<_> = out.iter().map(|e| e.stage).collect();
        assert_eq!(stages, vec![SleepStage::W, SleepStage::N3]);
    }

    #[test]
    fn trailing_partial_window_dropped() {
        let samples = vec![1.0f32; 10_000];
        let ann = StageAnnotation::sequence(&[RawStage::N2; 3]);
        let out = segment_and_label(&samples, 100, &ann, sid()).unwrap();
        // floor(100 s / 30 s)
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|e| e.epoch.len() == 3000));
    }

    #[test]
    fn interval_annotations_expand() {
        let ann = vec![
            StageAnnotation {
                onset_s: 0.0,
                duration_s: 90.0,
                stage: RawStage::W,
            },
            StageAnnotation {
                onset_s: 120.0,
                duration_s: 30.0,
                stage: RawStage::N1,
            },
        ];
        let labels = expand_annotations(&ann).unwrap();
        assert_eq!(
            labels,
            vec![
                RawStage::W,
                RawStage::W,
                RawStage::W,
                RawStage::Unknown,
                RawStage::N1
            ]
        );
        let bad = [StageAnnotation {
            onset_s: 10.0,
            duration_s: 30.0,
            stage: RawStage::W,
        }];
        assert!(matches!(expand_annotations(&bad), Err(Error::Alignment(_))));
    }

    #[test]
    fn length_mismatch_is_alignment_error() {
        let samples = vec![0.0f32; 300 * 5];
        let ann = StageAnnotation::sequence(&[RawStage::W; 2]);
        assert!(matches!(
            segment_and_label(&samples, 10, &ann, sid()),
            Err(Error::Alignment(_))
        ));
        // One extra label is tolerated.
        let ann = StageAnnotation::sequence(&[RawStage::W; 6]);
        assert_eq!(
            segment_and_label(&samples, 10, &ann, sid()).unwrap().len(),
            5
        );
        // Unscored tail beyond the signal is trimmed before the check.
        let mut tail = vec![RawStage::W; 5];
        tail.extend([RawStage::Unknown; 40]);
        let ann = StageAnnotation::sequence(&tail);
        assert_eq!(
            segment_and_label(&samples, 10, &ann, sid()).unwrap().len(),
            5
        );
    }

    fn raw_stage() -> impl Strategy<Value = RawStage> {
        prop_oneof![
            Just(RawStage::W),
            Just(RawStage::N1),
            Just(RawStage::N2),
            Just(RawStage::N3),
            Just(RawStage::N4),
            Just(RawStage::Rem),
            Just(RawStage::Movement),
            Just(RawStage::Unknown),
        ]
    }

    proptest! {
        #[test]
        fn post_ingestion_labels_are_harmonised(
            raw in proptest::collection::vec(raw_stage(), 1..60),
            rate in 1u32..5,
        ) {
            let samples = vec![0.5f32; raw.len() * epoch_len(rate)];
            let out = segment_and_label(&samples, rate, &StageAnnotation::sequence(&raw), sid()).unwrap();
            let expected = raw.iter().filter(|r| r.harmonize().is_some()).count();
            prop_assert_eq!(out.len(), expected);
            for e in &out {
                prop_assert!(e.stage.index() < 5);
                prop_assert_eq!(e.epoch.len(), 30 * rate as usize);
            }
        }
    }
}
