use super::types::{Epoch, EpochSequence, LabeledEpoch};
use crate::error::{Error, Result};
use crate::stage::SleepStage;

/// Number of windows `build_sequences` emits for one run of `n` epochs.
pub fn sequence_count(n: usize, len: usize, stride: usize) -> usize {
    if n < len {
        0
    } else {
        (n - len) / stride + 1
    }
}

fn check(len: usize, stride: usize) -> Result<()> {
    if len == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "sequence length ({len}) and stride ({stride}) must be at least 1"
        )));
    }
    Ok(())
}

/// Splits `items` into maximal runs sharing a subject.
fn subject_runs<T>(items: &[T], subject: impl Fn(&T) -> &str) -> Vec<(usize, &[T])> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=items.len() {
        if i == items.len() || subject(&items[i]) != subject(&items[start]) {
            if start < i {
                runs.push((start, &items[start..i]));
            }
            start = i;
        }
    }
    runs
}

/// Slides a window of `len` epochs with step `stride` over each subject's
/// epochs. Windows never straddle two subjects; subjects with fewer than
/// `len` epochs contribute nothing and are logged.
pub fn build_sequences(
    epochs: &[LabeledEpoch],
    len: usize,
    stride: usize,
) -> Result<Vec<EpochSequence>> {
    check(len, stride)?;
    let mut out = Vec::new();
    for (base, run) in subject_runs(epochs, |e| &e.epoch.subject_id) {
        if run.len() < len {
            log::warn!(
                "subject {} has {} epochs, fewer than sequence length {len}; skipped",
                run[0].epoch.subject_id,
                run.len()
            );
            continue;
        }
        for k in 0..sequence_count(run.len(), len, stride) {
            let window = &run[k * stride..k * stride + len];
            let stages: Vec<SleepStage> = window.iter().map(|e| e.stage).collect();
            let eps: Vec<Epoch> = window.iter().map(|e| e.epoch.clone()).collect();
            out.push(EpochSequence::new(eps, Some(stages), base + k * stride)?);
        }
    }
    Ok(out)
}

/// Covers every epoch of a recording with consecutive chunks of at most `len`
/// epochs; the final chunk may be shorter. Used at prediction time.
pub fn chunk_for_prediction(epochs: &[Epoch], len: usize) -> Result<Vec<EpochSequence>> {
    check(len, len)?;
    epochs
        .chunks(len)
        .enumerate()
        .map(|(i, c)| EpochSequence::new(c.to_vec(), None, i * len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::types::SubjectId;
    use proptest::prelude::*;

    fn epochs(n: usize, subject: &str) -> Vec<LabeledEpoch> {
        let sid: SubjectId = subject.into();
        (0..n)
            .map(|i| LabeledEpoch {
                epoch: Epoch::new(vec![i as f32; 30], 1, sid.clone()).unwrap(),
                stage: SleepStage::ALL[i % 5],
            })
            .collect()
    }

    #[test]
    fn forty_five_epochs_give_two_sequences() {
        let s = build_sequences(&epochs(45, "a"), 20, 20).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].offset, 20);
    }

    #[test]
    fn exact_length_is_identity() {
        let e = epochs(20, "a");
        let s = build_sequences(&e, 20, 20).unwrap();
        assert_eq!(s.len(), 1);
        let got: Vec<_> = s[0].epochs().iter().map(|x| x.samples[0]).collect();
        let want: Vec<_> = e.iter().map(|x| x.epoch.samples[0]).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn short_subject_yields_nothing() {
        assert!(build_sequences(&epochs(19, "a"), 20, 20)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn never_crosses_subjects() {
        let mut e = epochs(15, "a");
        e.extend(epochs(15, "b"));
        let s = build_sequences(&e, 10, 5).unwrap();
        assert_eq!(s.len(), 4);
        for seq in &s {
            assert!(seq
                .epochs()
                .iter()
                .all(|x| x.subject_id == *seq.subject_id()));
        }
    }

    #[test]
    fn prediction_chunks_cover_everything() {
        let e: Vec<Epoch> = epochs(23, "a").into_iter().map(|x| x.epoch).collect();
        let c = chunk_for_prediction(&e, 10).unwrap();
        assert_eq!(
            c.iter().map(EpochSequence::len).collect::<Vec<_>>(),
            vec![10, 10, 3]
        );
    }

    proptest! {
        #[test]
        fn count_matches_closed_form(n in 0usize..=200, len in 1usize..40, stride in 1usize..40) {
            let e = epochs(n, "a");
            let s = build_sequences(&e, len, stride).unwrap();
            let oracle = if n >= len { (n - len) / stride + 1 } else { 0 };
            prop_assert_eq!(s.len(), oracle);
        }
    }
}
