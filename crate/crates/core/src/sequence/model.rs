use candle_core::{DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::crf::{entropy, Crf, EmissionRow};
use super::transformer::{TransformerConfig, TransformerEncoder};
use crate::error::{Error, Result};
use crate::nn::{log_softmax, log_sum_exp, one_hot, Init, Linear, ParamStore};
use crate::rng::Rng;
use crate::stage::{SleepStage, NUM_STAGES};

/// Sequence classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Transformer encoder, emission layer and CRF.
    TransformerCrf,
    /// Transformer encoder and per-epoch softmax.
    TransformerSoftmax,
    /// Emission layer on the representations, per-epoch softmax.
    Logistic,
    /// Emission layer on the representations and CRF.
    LogisticCrf,
}

impl HeadKind {
    pub fn uses_transformer(self) -> bool {
        matches!(
            self,
            HeadKind::TransformerCrf | HeadKind::TransformerSoftmax
        )
    }

    pub fn uses_crf(self) -> bool {
        matches!(self, HeadKind::TransformerCrf | HeadKind::LogisticCrf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub head: HeadKind,
    /// Width of the incoming representations.
    pub input_dim: usize,
    pub transformer: TransformerConfig,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            head: HeadKind::TransformerCrf,
            input_dim: 128,
            transformer: TransformerConfig::default(),
        }
    }
}

/// Decoder output for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedSequence {
    pub stages: Vec<SleepStage>,
    pub log_probability: f64,
    pub uncertainties: Vec<f64>,
}

/// Parameter prefixes.
pub mod names {
    pub const TRANSFORMER: &str = "transformer";
    pub const EMISSION: &str = "emission";
    pub const CRF_START: &str = "crf.start";
    pub const CRF_TRANSITION: &str = "crf.transition";
}

pub struct SequenceClassifier {
    config: SequenceConfig,
    store: ParamStore,
    transformer: Option<TransformerEncoder>,
    emission: Linear,
    crf: Option<(Var, Var)>,
}

impl SequenceClassifier {
    pub fn new(config: SequenceConfig, dtype: DType, init_rng: Rng) -> Result<Self> {
        if config.input_dim == 0 {
            return Err(Error::Config("sequence input_dim must be positive".into()));
        }
        let mut store = ParamStore::new(dtype, init_rng);
        let transformer = if config.head.uses_transformer() {
            Some(TransformerEncoder::new(
                &mut store,
                names::TRANSFORMER,
                config.input_dim,
                &config.transformer,
            )?)
        } else {
            None
        };
        let width = if transformer.is_some() {
            config.transformer.model_dim
        } else {
            config.input_dim
        };
        let emission = Linear::new(&mut store, names::EMISSION, width, NUM_STAGES)?;
        let crf = if config.head.uses_crf() {
            Some((
                store.param(names::CRF_START, &[NUM_STAGES], Init::Const(0.0))?,
                store.param(
                    names::CRF_TRANSITION,
                    &[NUM_STAGES, NUM_STAGES],
                    Init::Const(0.0),
                )?,
            ))
        } else {
            None
        };
        Ok(SequenceClassifier {
            config,
            store,
            transformer,
            emission,
            crf,
        })
    }

    pub fn config(&self) -> &SequenceConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Contextualised representations `(B, T, model_dim)`; only for
    /// transformer heads.
    pub fn contextualize(&self, z: &Tensor, train: bool, rng: &mut Rng) -> Result<Tensor> {
        match &self.transformer {
            Some(t) => t.forward(z, train, rng),
            None => Err(Error::Config("this head has no transformer".into())),
        }
    }

    /// Per-step stage scores `(B, T, 5)`.
    pub fn emissions(&self, z: &Tensor, train: bool, rng: &mut Rng) -> Result<Tensor> {
        let (_, _, d) = z.dims3()?;
        if d != self.config.input_dim {
            return Err(Error::Shape(format!(
                "representations have width {d}, classifier expects {}",
                self.config.input_dim
            )));
        }
        let h = match &self.transformer {
            Some(t) => t.forward(z, train, rng)?,
            None => z.clone(),
        };
        self.emission.forward(&h)
    }

    /// Mean per-sequence CRF negative log-likelihood, or mean per-epoch
    /// cross-entropy for softmax heads. `labels` is `B` rows of length `T`.
    pub fn loss(
        &self,
        z: &Tensor,
        labels: &[Vec<usize>],
        train: bool,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        let em = self.emissions(z, train, rng)?;
        let (b, t, _) = em.dims3()?;
        if labels.len() != b || labels.iter().any(|l| l.len() != t) {
            return Err(Error::Shape(format!(
                "labels do not match a batch of {b} sequences of length {t}"
            )));
        }
        let flat: Vec<usize> = labels.iter().flatten().copied().collect();
        if let Some(&bad) = flat.iter().find(|&&y| y >= NUM_STAGES) {
            return Err(Error::Label(format!("stage index {bad}")));
        }
        let loss = match &self.crf {
            Some((start, trans)) => crf_nll(&em, labels, start.as_tensor(), trans.as_tensor())?,
            None => {
                let mask = one_hot(&flat, NUM_STAGES, em.dtype())?.reshape((b, t, NUM_STAGES))?;
                ((log_softmax(&em, 2)? * mask)?.sum_all()?.neg()? / (b * t) as f64)?
            }
        };
        let v = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !v.is_finite() {
            return Err(Error::numerical("sequence loss"));
        }
        Ok(loss)
    }

    /// CRF parameters as plain numbers.
    pub fn crf(&self) -> Result<Option<Crf>> {
        let Some((start, trans)) = &self.crf else {
            return Ok(None);
        };
        let s: Vec<f64> = start.as_tensor().to_dtype(DType::F64)?.to_vec1()?;
        let t: Vec<Vec<f64>> = trans.as_tensor().to_dtype(DType::F64)?.to_vec2()?;
        Ok(Some(Crf {
            start: std::array::from_fn(|i| s[i]),
            transition: std::array::from_fn(|i| std::array::from_fn(|j| t[i][j])),
        }))
    }

    /// Evaluation-mode decoding of one sequence `(T, input_dim)`.
    pub fn decode(&self, z: &Tensor) -> Result<DecodedSequence> {
        let em = self.emissions(
            &z.unsqueeze(0)?,
            false,
            &mut crate::rng::stream(0, "eval", 0),
        )?;
        let rows: Vec<Vec<f64>> = em.squeeze(0)?.to_dtype(DType::F64)?.to_vec2()?;
        let rows: Vec<EmissionRow> = rows.iter().map(|r| std::array::from_fn(|c| r[c])).collect();
        decode_rows(self.crf()?.as_ref(), &rows)
    }

    /// Decodes a batch `(B, T, input_dim)` of equal-length sequences.
    pub fn decode_batch(&self, z: &Tensor) -> Result<Vec<DecodedSequence>> {
        let em = self.emissions(z, false, &mut crate::rng::stream(0, "eval", 0))?;
        let crf = self.crf()?;
        let all: Vec<Vec<Vec<f64>>> = em.to_dtype(DType::F64)?.to_vec3()?;
        all.iter()
            .map(|seq| {
                let rows: Vec<EmissionRow> =
                    seq.iter().map(|r| std::array::from_fn(|c| r[c])).collect();
                decode_rows(crf.as_ref(), &rows)
            })
            .collect()
    }
}

/// Viterbi with local entropies for CRF heads; independent argmax with
/// softmax entropies otherwise.
pub fn decode_rows(crf: Option<&Crf>, rows: &[EmissionRow]) -> Result<DecodedSequence> {
    if let Some(crf) = crf {
        let (stages, log_probability) = crf.viterbi(rows)?;
        let uncertainties = crf.uncertainty(&stages, rows)?;
        return Ok(DecodedSequence {
            stages,
            log_probability,
            uncertainties,
        });
    }
    if rows.is_empty() {
        return Err(Error::Shape("empty emission sequence".into()));
    }
    let softmax_free = Crf::default();
    let mut stages = Vec::with_capacity(rows.len());
    let mut log_probability = 0.0;
    let mut uncertainties = Vec::with_capacity(rows.len());
    for r in rows {
        let p = softmax_free.local_distribution(None, r);
        let mut best = 0;
        for c in 1..NUM_STAGES {
            if r[c] > r[best] {
                best = c;
            }
        }
        stages.push(SleepStage::ALL[best]);
        log_probability += p[best].ln();
        uncertainties.push(entropy(&p).clamp(0.0, (NUM_STAGES as f64).ln()));
    }
    Ok(DecodedSequence {
        stages,
        log_probability,
        uncertainties,
    })
}

/// Batched CRF negative log-likelihood, averaged over sequences.
pub fn crf_nll(
    emissions: &Tensor,
    labels: &[Vec<usize>],
    start: &Tensor,
    transition: &Tensor,
) -> Result<Tensor> {
    let (b, t, c) = emissions.dims3()?;
    let dtype = emissions.dtype();
    let flat: Vec<usize> = labels.iter().flatten().copied().collect();
    let emit_mask = one_hot(&flat, c, dtype)?.reshape((b, t, c))?;
    let emit_score = (emissions * emit_mask)?.sum((1, 2))?;
    let first: Vec<usize> = labels.iter().map(|l| l[0]).collect();
    let start_score = one_hot(&first, c, dtype)?
        .matmul(&start.unsqueeze(1)?)?
        .squeeze(1)?;
    let mut counts = vec![0f64; b * c * c];
    for (i, l) in labels.iter().enumerate() {
        for w in l.windows(2) {
            counts[i * c * c + w[0] * c + w[1]] += 1.0;
        }
    }
    let counts = Tensor::from_vec(counts, (b, c * c), emissions.device())?.to_dtype(dtype)?;
    let trans_score = counts
        .matmul(&transition.reshape((c * c, 1))?)?
        .squeeze(1)?;
    let gold = ((emit_score + start_score)? + trans_score)?;

    let mut alpha = emissions
        .narrow(1, 0, 1)?
        .squeeze(1)?
        .broadcast_add(start)?;
    let trans = transition.unsqueeze(0)?;
    for i in 1..t {
        let scores = alpha.unsqueeze(2)?.broadcast_add(&trans)?;
        alpha = (log_sum_exp(&scores, 1)?.squeeze(1)? + emissions.narrow(1, i, 1)?.squeeze(1)?)?;
    }
    let log_z = log_sum_exp(&alpha, 1)?.squeeze(1)?;
    Ok((log_z - gold)?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use candle_core::Device;
    use rand::Rng as _;

    #[test]
    fn batched_nll_matches_scalar_crf() {
        let mut r = rng::stream(7, "t", 0);
        let (b, t) = (3usize, 6usize);
        let em: Vec<f64> = (0..b * t * 5).map(|_| r.gen_range(-2.0..2.0)).collect();
        let start: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
        let trans: Vec<f64> = (0..25).map(|_| r.gen_range(-1.0..1.0)).collect();
        let labels: Vec<Vec<usize>> = (0..b)
            .map(|_| (0..t).map(|_| r.gen_range(0..5)).collect())
            .collect();
        let emt = Tensor::from_vec(em.clone(), (b, t, 5), &Device::Cpu).unwrap();
        let st = Tensor::from_vec(start.clone(), 5, &Device::Cpu).unwrap();
        let tr = Tensor::from_vec(trans.clone(), (5, 5), &Device::Cpu).unwrap();
        let batched = crf_nll(&emt, &labels, &st, &tr)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        let crf = Crf {
            start: std::array::from_fn(|i| start[i]),
            transition: std::array::from_fn(|i| std::array::from_fn(|j| trans[i * 5 + j])),
        };
        let mut total = 0.0;
        for (s, l) in labels.iter().enumerate() {
            let rows: Vec<EmissionRow> = (0..t)
                .map(|i| std::array::from_fn(|c| em[(s * t + i) * 5 + c]))
                .collect();
            let stages: Vec<SleepStage> = l.iter().map(|&y| SleepStage::ALL[y]).collect();
            total += crf.nll(&stages, &rows).unwrap();
        }
        assert!((batched - total / b as f64).abs() < 1e-10);
    }

    #[test]
    fn softmax_head_has_no_transitions() {
        let cfg = SequenceConfig {
            head: HeadKind::TransformerSoftmax,
            input_dim: 4,
            transformer: TransformerConfig {
                layers: 1,
                heads: 2,
                model_dim: 4,
                feed_forward_dim: 8,
                dropout: 0.0,
                positional_encoding: true,
            },
        };
        let m = SequenceClassifier::new(cfg, DType::F32, rng::stream(0, "init", 0)).unwrap();
        assert!(m.crf().unwrap().is_none());
        assert!(m.store().params().all(|(n, _)| !n.starts_with("crf")));
        let z = Tensor::zeros((5, 4), DType::F32, &Device::Cpu).unwrap();
        let d = m.decode(&z).unwrap();
        assert_eq!(d.stages.len(), 5);
        assert!(d
            .uncertainties
            .iter()
            .all(|&u| (0.0..=5f64.ln()).contains(&u)));
    }

    #[test]
    fn logistic_heads_shapes() {
        for head in [HeadKind::Logistic, HeadKind::LogisticCrf] {
            let cfg = SequenceConfig {
                head,
                input_dim: 3,
                transformer: TransformerConfig::default(),
            };
            let m = SequenceClassifier::new(cfg, DType::F64, rng::stream(0, "init", 0)).unwrap();
            let z = Tensor::ones((2, 4, 3), DType::F64, &Device::Cpu).unwrap();
            let loss = m
                .loss(
                    &z,
                    &[vec![0, 1, 2, 3], vec![4, 4, 4, 4]],
                    true,
                    &mut rng::stream(0, "d", 0),
                )
                .unwrap();
            assert!(loss.to_scalar::<f64>().unwrap() > 0.0);
            assert_eq!(m.decode_batch(&z).unwrap().len(), 2);
        }
    }
}
