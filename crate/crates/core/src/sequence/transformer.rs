use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dropout, softmax, LayerNorm, Linear, ParamStore};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub feed_forward_dim: usize,
    pub dropout: f64,
    pub positional_encoding: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            layers: 4,
            heads: 8,
            model_dim: 128,
            feed_forward_dim: 512,
            dropout: 0.1,
            positional_encoding: true,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "transformer.model_dim ({}) must be a positive multiple of transformer.heads ({})",
                self.model_dim, self.heads
            )));
        }
        if self.feed_forward_dim == 0 {
            return Err(Error::Config(
                "transformer.feed_forward_dim must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(
                "transformer.dropout must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(SelfAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim)?,
            heads,
        })
    }

    /// Returns the projected output `(B, T, D)` and the attention weights
    /// `(B, heads, T, T)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, t, d) = x.dims3()?;
        let dk = d / self.heads;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, self.heads, dk))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let q = split(self.query.forward(x)?)?;
        let k = split(self.key.forward(x)?)?;
        let v = split(self.value.forward(x)?)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (dk as f64).sqrt())?;
        let weights = softmax(&scores, 3)?;
        let heads = weights
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, t, d))?;
        Ok((self.output.forward(&heads)?, weights))
    }
}

/// Post-norm encoder block.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    attention: SelfAttention,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
    dropout: f64,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, config: &TransformerConfig) -> Result<Self> {
        let d = config.model_dim;
        Ok(EncoderLayer {
            attention: SelfAttention::new(store, &format!("{name}.attention"), d, config.heads)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), d, config.feed_forward_dim)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), config.feed_forward_dim, d)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            dropout: config.dropout,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool, rng: &mut Rng) -> Result<Tensor> {
        let (a, _) = self.attention.forward(x)?;
        let x = self
            .norm1
            .forward(&(x + dropout(&a, self.dropout, train, rng)?)?)?;
        let h = self.ff2.forward(&dropout(
            &self.ff1.forward(&x)?.relu()?,
            self.dropout,
            train,
            rng,
        )?)?;
        self.norm2
            .forward(&(&x + dropout(&h, self.dropout, train, rng)?)?)
    }
}

/// Sinusoidal position table `(T, D)`.
pub fn positional_encoding(len: usize, dim: usize, like: &Tensor) -> Result<Tensor> {
    let mut table = vec![0f64; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            table[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Ok(Tensor::from_vec(table, (len, dim), like.device())?.to_dtype(like.dtype())?)
}

/// Input projection, optional positional encoding, and a stack of blocks.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    input: Linear,
    layers: Vec<EncoderLayer>,
    config: TransformerConfig,
}

impl TransformerEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        config: &TransformerConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(TransformerEncoder {
            input: Linear::new(store, &format!("{name}.input"), input_dim, config.model_dim)?,
            layers: (0..config.layers)
                .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), config))
                .collect::<Result<_>>()?,
            config: config.clone(),
        })
    }

    /// `z`: `(B, T, input_dim)` to `(B, T, model_dim)`.
    pub fn forward(&self, z: &Tensor, train: bool, rng: &mut Rng) -> Result<Tensor> {
        let mut h = self.input.forward(z)?;
        if self.config.positional_encoding {
            let t = h.dim(1)?;
            h = h.broadcast_add(&positional_encoding(t, self.config.model_dim, &h)?)?;
        }
        for layer in &self.layers {
            h = layer.forward(&h, train, rng)?;
        }
        if h.dim(D::Minus1)? != self.config.model_dim {
            return Err(Error::Shape("transformer output width mismatch".into()));
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use candle_core::{DType, Device};
    use rand::Rng as _;

    fn random(shape: (usize, usize, usize), seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "x", 0);
        let n = shape.0 * shape.1 * shape.2;
        Tensor::from_vec(
            (0..n).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
            shape,
            &Device::Cpu,
        )
        .unwrap()
    }

    fn store() -> ParamStore {
        ParamStore::new(DType::F64, rng::stream(0, "init", 0))
    }

    #[test]
    fn singleton_attends_to_itself() {
        let mut s = store();
        let att = SelfAttention::new(&mut s, "a", 8, 2).unwrap();
        let x = random((1, 1, 8), 1);
        let (_, w) = att.forward(&x).unwrap();
        let w: Vec<f64> = w.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(w, vec![1.0, 1.0]);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut s = store();
        let att = SelfAttention::new(&mut s, "a", 8, 4).unwrap();
        let (_, w) = att.forward(&random((2, 7, 8), 2)).unwrap();
        let sums: Vec<f64> = w.sum(3).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-6));
    }

    #[test]
    fn equal_rows_stay_equal_without_positions() {
        let mut s = store();
        let cfg = TransformerConfig {
            layers: 2,
            heads: 2,
            model_dim: 8,
            feed_forward_dim: 16,
            dropout: 0.0,
            positional_encoding: false,
        };
        let enc = TransformerEncoder::new(&mut s, "t", 3, &cfg).unwrap();
        let row = random((1, 1, 3), 3);
        let x = Tensor::cat(&[&row, &row, &row], 1).unwrap();
        let y: Vec<Vec<f64>> = enc
            .forward(&x, false, &mut rng::stream(0, "d", 0))
            .unwrap()
            .squeeze(0)
            .unwrap()
            .to_vec2()
            .unwrap();
        assert_eq!(y[0], y[1]);
        assert_eq!(y[1], y[2]);
    }

    #[test]
    fn shapes_and_determinism() {
        let mut s = store();
        let cfg = TransformerConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            feed_forward_dim: 16,
            dropout: 0.1,
            positional_encoding: true,
        };
        let enc = TransformerEncoder::new(&mut s, "t", 3, &cfg).unwrap();
        for t in [1usize, 20, 100] {
            let x = random((1, t, 3), t as u64);
            let a = enc.forward(&x, false, &mut rng::stream(0, "d", 0)).unwrap();
            assert_eq!(a.dims(), &[1, t, 8]);
            let b = enc.forward(&x, false, &mut rng::stream(9, "d", 0)).unwrap();
            assert_eq!(
                a.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
                b.flatten_all().unwrap().to_vec1::<f64>().unwrap()
            );
        }
    }

    #[test]
    fn positions_break_permutation_symmetry() {
        let mut s = store();
        let cfg = TransformerConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            feed_forward_dim: 16,
            dropout: 0.0,
            positional_encoding: true,
        };
        let enc = TransformerEncoder::new(&mut s, "t", 3, &cfg).unwrap();
        let x = random((1, 4, 3), 4);
        let idx = Tensor::new(&[1u32, 0, 2, 3], &Device::Cpu).unwrap();
        let y: Vec<Vec<f64>> = enc
            .forward(&x, false, &mut rng::stream(0, "d", 0))
            .unwrap()
            .squeeze(0)
            .unwrap()
            .to_vec2()
            .unwrap();
        let yp: Vec<Vec<f64>> = enc
            .forward(
                &x.index_select(&idx, 1).unwrap(),
                false,
                &mut rng::stream(0, "d", 0),
            )
            .unwrap()
            .squeeze(0)
            .unwrap()
            .to_vec2()
            .unwrap();
        assert_ne!(y[0], yp[1]);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = TransformerConfig {
            model_dim: 10,
            heads: 4,
            ..TransformerConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
