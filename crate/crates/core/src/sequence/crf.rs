//! Linear-chain CRF over the five stages, in plain f64 arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage::{SleepStage, NUM_STAGES};

pub type EmissionRow = [f64; NUM_STAGES];

/// Start scores and the `from × to` transition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crf {
    pub start: [f64; NUM_STAGES],
    pub transition: [[f64; NUM_STAGES]; NUM_STAGES],
}

impl Default for Crf {
    fn default() -> Self {
        Crf {
            start: [0.0; NUM_STAGES],
            transition: [[0.0; NUM_STAGES]; NUM_STAGES],
        }
    }
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Index of the first maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

impl Crf {
    /// Unnormalised log-score of a labelling.
    pub fn log_score(&self, stages: &[SleepStage], emissions: &[EmissionRow]) -> Result<f64> {
        if stages.len() != emissions.len() {
            return Err(Error::Shape(format!(
                "{} stages for {} emission rows",
                stages.len(),
                emissions.len()
            )));
        }
        let mut score = 0.0;
        for (i, (s, e)) in stages.iter().zip(emissions).enumerate() {
            let y = s.index();
            score += e[y]
                + if i == 0 {
                    self.start[y]
                } else {
                    self.transition[stages[i - 1].index()][y]
                };
        }
        Ok(score)
    }

    /// Log-score from raw indices; out-of-range indices are a label error.
    pub fn log_score_indices(&self, stages: &[usize], emissions: &[EmissionRow]) -> Result<f64> {
        let s = stages
            .iter()
            .map(|&i| SleepStage::from_index(i))
            .collect::<Result<Vec<_>>>()?;
        self.log_score(&s, emissions)
    }

    /// Log of the sum of exponentiated scores over all labellings.
    pub fn log_partition(&self, emissions: &[EmissionRow]) -> Result<f64> {
        let Some(first) = emissions.first() else {
            return Err(Error::Shape("empty emission sequence".into()));
        };
        let mut alpha: EmissionRow = std::array::from_fn(|c| self.start[c] + first[c]);
        for e in &emissions[1..] {
            alpha = std::array::from_fn(|c| {
                let terms: EmissionRow = std::array::from_fn(|p| alpha[p] + self.transition[p][c]);
                lse(&terms) + e[c]
            });
        }
        Ok(lse(&alpha))
    }

    /// Negative conditional log-likelihood of `stages`.
    pub fn nll(&self, stages: &[SleepStage], emissions: &[EmissionRow]) -> Result<f64> {
        let v = self.log_partition(emissions)? - self.log_score(stages, emissions)?;
        if !v.is_finite() {
            return Err(Error::numerical("crf negative log-likelihood"));
        }
        Ok(v.max(0.0))
    }

    /// Most probable labelling and its conditional log-probability. Ties
    /// resolve to the lowest stage index at every step.
    pub fn viterbi(&self, emissions: &[EmissionRow]) -> Result<(Vec<SleepStage>, f64)> {
        let Some(first) = emissions.first() else {
            return Err(Error::Shape("empty emission sequence".into()));
        };
        let t = emissions.len();
        let mut delta: EmissionRow = std::array::from_fn(|c| self.start[c] + first[c]);
        let mut back = vec![[0usize; NUM_STAGES]; t];
        for (i, e) in emissions.iter().enumerate().skip(1) {
            let mut next = [0.0; NUM_STAGES];
            for c in 0..NUM_STAGES {
                let cand: EmissionRow = std::array::from_fn(|p| delta[p] + self.transition[p][c]);
                let p = argmax(&cand);
                back[i][c] = p;
                next[c] = cand[p] + e[c];
            }
            delta = next;
        }
        let mut path = vec![0usize; t];
        path[t - 1] = argmax(&delta);
        for i in (1..t).rev() {
            path[i - 1] = back[i][path[i]];
        }
        let best = delta[path[t - 1]];
        let stages: Vec<SleepStage> = path.iter().map(|&i| SleepStage::ALL[i]).collect();
        Ok((stages, best - self.log_partition(emissions)?))
    }

    /// Locally normalised distribution over the current stage given the
    /// previous one (`None` at the first step).
    pub fn local_distribution(
        &self,
        previous: Option<SleepStage>,
        emission: &EmissionRow,
    ) -> EmissionRow {
        let logits: EmissionRow = std::array::from_fn(|c| {
            emission[c] + previous.map_or(self.start[c], |p| self.transition[p.index()][c])
        });
        let z = lse(&logits);
        std::array::from_fn(|c| (logits[c] - z).exp())
    }

    /// Entropy of the local distribution at every step of a decoded path.
    pub fn uncertainty(&self, path: &[SleepStage], emissions: &[EmissionRow]) -> Result<Vec<f64>> {
        if path.len() != emissions.len() {
            return Err(Error::Shape(format!(
                "{} stages for {} emission rows",
                path.len(),
                emissions.len()
            )));
        }
        Ok(emissions
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let prev = if i == 0 { None } else { Some(path[i - 1]) };
                entropy(&self.local_distribution(prev, e)).clamp(0.0, (NUM_STAGES as f64).ln())
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_crf(rng: &mut impl Rng, scale: f64) -> Crf {
        Crf {
            start: std::array::from_fn(|_| rng.gen_range(-scale..scale)),
            transition: std::array::from_fn(|_| {
                std::array::from_fn(|_| rng.gen_range(-scale..scale))
            }),
        }
    }

    fn random_emissions(rng: &mut impl Rng, t: usize, scale: f64) -> Vec<EmissionRow> {
        (0..t)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-scale..scale)))
            .collect()
    }

    fn all_paths(t: usize) -> impl Iterator<Item = Vec<usize>> {
        (0..NUM_STAGES.pow(t as u32)).map(move |mut code| {
            (0..t)
                .map(|_| {
                    let c = code % NUM_STAGES;
                    code /= NUM_STAGES;
                    c
                })
                .collect()
        })
    }

    #[test]
    fn hand_summed_two_step_score() {
        let mut crf = Crf::default();
        crf.start[1] = 0.5;
        crf.transition[1][3] = -1.25;
        let em = [[0.0, 2.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.75, 0.0]];
        let s = crf
            .log_score(&[SleepStage::N1, SleepStage::N3], &em)
            .unwrap();
        assert_eq!(s, 0.5 + 2.0 - 1.25 + 0.75);
        assert_eq!(crf.log_score(&[SleepStage::W], &[[0.0; 5]]).unwrap(), 0.0);
    }

    #[test]
    fn zero_parameters_are_uniform() {
        let crf = Crf::default();
        let em = vec![[0.0; 5]; 3];
        let nll = crf
            .nll(&[SleepStage::W, SleepStage::Rem, SleepStage::N2], &em)
            .unwrap();
        assert!((nll - 3.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn partition_and_viterbi_match_enumeration() {
        let mut rng = crate::rng::stream(11, "crf", 0);
        for t in 1..=5 {
            for _ in 0..10 {
                let crf = random_crf(&mut rng, 2.0);
                let em = random_emissions(&mut rng, t, 3.0);
                let scores: Vec<(f64, Vec<usize>)> = all_paths(t)
                    .map(|p| (crf.log_score_indices(&p, &em).unwrap(), p))
                    .collect();
                let z = lse(&scores.iter().map(|s| s.0).collect::<Vec<_>>());
                assert!((crf.log_partition(&em).unwrap() - z).abs() < 1e-9);
                let best = scores.iter().max_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
                let (path, lp) = crf.viterbi(&em).unwrap();
                let idx: Vec<usize> = path.iter().map(|s| s.index()).collect();
                assert_eq!(idx, best.1);
                assert!((lp - (best.0 - z)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn saturated_true_path() {
        let crf = Crf::default();
        let truth = [2usize, 2, 3, 0];
        let em: Vec<EmissionRow> = truth
            .iter()
            .map(|&y| std::array::from_fn(|c| if c == y { 50.0 } else { 0.0 }))
            .collect();
        assert!(
            crf.nll(&truth.map(SleepStage::from_index).map(Result::unwrap), &em)
                .unwrap()
                < 1e-10
        );
    }

    #[test]
    fn zero_transitions_decode_independently() {
        let mut rng = crate::rng::stream(2, "crf", 0);
        let crf = Crf::default();
        let em = random_emissions(&mut rng, 12, 1.0);
        let (path, _) = crf.viterbi(&em).unwrap();
        for (s, e) in path.iter().zip(&em) {
            assert_eq!(s.index(), argmax(e));
        }
    }

    #[test]
    fn forbidden_bigram_never_decoded() {
        let mut rng = crate::rng::stream(4, "crf", 0);
        let mut crf = Crf::default();
        crf.transition[SleepStage::W.index()][SleepStage::N3.index()] = -1e3;
        for _ in 0..200 {
            let em = random_emissions(&mut rng, 20, 5.0);
            let (path, _) = crf.viterbi(&em).unwrap();
            assert!(!path
                .windows(2)
                .any(|w| w[0] == SleepStage::W && w[1] == SleepStage::N3));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let (path, _) = Crf::default().viterbi(&[[1.0; 5], [1.0; 5]]).unwrap();
        assert_eq!(path, vec![SleepStage::W, SleepStage::W]);
    }

    #[test]
    fn uncertainty_limits() {
        let crf = Crf::default();
        let u = crf.uncertainty(&[SleepStage::W], &[[0.0; 5]]).unwrap();
        assert!((u[0] - 5f64.ln()).abs() < 1e-12);
        let u = crf
            .uncertainty(&[SleepStage::N2], &[[0.0, 0.0, 100.0, 0.0, 0.0]])
            .unwrap();
        assert!(u[0] < 1e-6);
    }

    #[test]
    fn emission_shift_keeps_decoding() {
        let mut rng = crate::rng::stream(5, "crf", 0);
        let crf = random_crf(&mut rng, 1.0);
        let em = random_emissions(&mut rng, 8, 2.0);
        let shifted: Vec<EmissionRow> = em
            .iter()
            .map(|r| {
                let mut r = *r;
                r[2] += 3.7;
                r
            })
            .collect();
        let constant: Vec<EmissionRow> = em
            .iter()
            .enumerate()
            .map(|(i, r)| r.map(|x| x + 1.3 * i as f64 - 2.0))
            .collect();
        let (a, la) = crf.viterbi(&em).unwrap();
        let (b, lb) = crf.viterbi(&constant).unwrap();
        assert_eq!(a, b);
        assert!((la - lb).abs() < 1e-9);
        let (c, lc) = crf.viterbi(&shifted).unwrap();
        let z = crf.log_partition(&shifted).unwrap();
        assert!((crf.log_score(&c, &shifted).unwrap() - z - lc).abs() < 1e-9);
    }
}
