use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm1d, Conv1d, Linear};
use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

/// Shape of a 1-D bottleneck residual encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResNetConfig {
    /// Channels of the first stage before expansion.
    pub base_width: usize,
    /// Bottleneck blocks per stage.
    pub blocks: Vec<usize>,
    pub expansion: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        ResNetConfig {
            base_width: 64,
            blocks: vec![3, 4, 6, 3],
            expansion: 4,
        }
    }
}

impl ResNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0
            || self.expansion == 0
            || self.blocks.is_empty()
            || self.blocks.contains(&0)
        {
            return Err(Error::Config(format!("invalid encoder shape {self:?}")));
        }
        Ok(())
    }

    pub fn output_channels(&self) -> usize {
        self.base_width * (1 << (self.blocks.len() - 1)) * self.expansion
    }
}

/// Stem kernel for a sampling rate: half a second of signal, at least 3 taps.
pub fn stem_kernel(sampling_rate_hz: u32) -> usize {
    ((sampling_rate_hz / 2) as usize).max(3)
}

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv1d,
    bn1: BatchNorm1d,
    conv2: Conv1d,
    bn2: BatchNorm1d,
    conv3: Conv1d,
    bn3: BatchNorm1d,
    shortcut: Option<(Conv1d, BatchNorm1d)>,
}

impl Bottleneck {
    fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        width: usize,
        out: usize,
        stride: usize,
    ) -> Result<Self> {
        let shortcut = if input != out || stride != 1 {
            Some((
                Conv1d::new(
                    store,
                    &format!("{name}.down.conv"),
                    input,
                    out,
                    1,
                    stride,
                    0,
                    false,
                )?,
                BatchNorm1d::new(store, &format!("{name}.down.bn"), out)?,
            ))
        } else {
            None
        };
        Ok(Bottleneck {
            conv1: Conv1d::new(
                store,
                &format!("{name}.conv1"),
                input,
                width,
                1,
                1,
                0,
                false,
            )?,
            bn1: BatchNorm1d::new(store, &format!("{name}.bn1"), width)?,
            conv2: Conv1d::new(
                store,
                &format!("{name}.conv2"),
                width,
                width,
                3,
                stride,
                1,
                false,
            )?,
            bn2: BatchNorm1d::new(store, &format!("{name}.bn2"), width)?,
            conv3: Conv1d::new(store, &format!("{name}.conv3"), width, out, 1, 1, 0, false)?,
            bn3: BatchNorm1d::new(store, &format!("{name}.bn3"), out)?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?, train)?.relu()?;
        let h = self.bn3.forward(&self.conv3.forward(&h)?, train)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

/// Residual encoder mapping `(batch, 1, samples)` to a Gaussian posterior
/// `(mean, log_variance)`, each `(batch, latent)`.
#[derive(Debug, Clone)]
pub struct GaussianEncoder {
    stem: Conv1d,
    stem_bn: BatchNorm1d,
    blocks: Vec<Bottleneck>,
    mean: Linear,
    log_var: Linear,
    stem_name: String,
}

impl GaussianEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: &ResNetConfig,
        sampling_rate_hz: u32,
        latent: usize,
    ) -> Result<Self> {
        config.validate()?;
        let k = stem_kernel(sampling_rate_hz);
        let stem_name = format!("{name}.stem.conv");
        let stem = Conv1d::new(store, &stem_name, 1, config.base_width, k, 2, k / 2, false)?;
        let stem_bn = BatchNorm1d::new(store, &format!("{name}.stem.bn"), config.base_width)?;
        let mut blocks = Vec::new();
        let mut input = config.base_width;
        for (stage, &count) in config.blocks.iter().enumerate() {
            let width = config.base_width << stage;
            let out = width * config.expansion;
            for b in 0..count {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(
                    store,
                    &format!("{name}.layer{stage}.{b}"),
                    input,
                    width,
                    out,
                    stride,
                )?);
                input = out;
            }
        }
        Ok(GaussianEncoder {
            stem,
            stem_bn,
            blocks,
            mean: Linear::new(store, &format!("{name}.mean"), input, latent)?,
            log_var: Linear::new(store, &format!("{name}.log_var"), input, latent)?,
            stem_name,
        })
    }

    /// Name of the rate-dependent input kernel.
    pub fn stem_weight_name(&self) -> String {
        format!("{}.weight", self.stem_name)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let h = self
            .stem_bn
            .forward(&self.stem.forward(x)?, train)?
            .relu()?;
        let (b, c, l) = h.dims3()?;
        let mut h = if l >= 2 {
            h.unsqueeze(2)?
                .avg_pool2d_with_stride((1, 2), (1, 2))?
                .squeeze(2)?
        } else {
            h
        };
        debug_assert_eq!(h.dims()[..2], [b, c]);
        for block in &self.blocks {
            h = block.forward(&h, train)?;
        }
        let pooled = h.mean(2)?;
        Ok((self.mean.forward(&pooled)?, self.log_var.forward(&pooled)?))
    }
}

/// Re-draws the stem kernel under `prefix` after a sampling-rate change.
pub fn reinit_stem(store: &mut ParamStore, weight_name: &str) -> Result<()> {
    let dims = store
        .get(weight_name)
        .ok_or_else(|| Error::Transfer(format!("no stem parameter {weight_name}")))?
        .dims()
        .to_vec();
    store.reinit(weight_name, Init::FanIn(dims[1] * dims[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use candle_core::{DType, Device};

    #[test]
    fn output_shapes() {
        let mut s = ParamStore::new(DType::F32, rng::stream(1, "init", 0));
        let cfg = ResNetConfig {
            base_width: 4,
            blocks: vec![1, 1],
            expansion: 2,
        };
        let enc = GaussianEncoder::new(&mut s, "e", &cfg, 10, 6).unwrap();
        let x = Tensor::zeros((3, 1, 300), DType::F32, &Device::Cpu).unwrap();
        let (m, v) = enc.forward(&x, true).unwrap();
        assert_eq!(m.dims(), &[3, 6]);
        assert_eq!(v.dims(), &[3, 6]);
        assert_eq!(cfg.output_channels(), 16);
    }

    #[test]
    fn only_stem_depends_on_rate() {
        let cfg = ResNetConfig {
            base_width: 4,
            blocks: vec![1, 1],
            expansion: 2,
        };
        let mut a = ParamStore::new(DType::F32, rng::stream(1, "init", 0));
        let mut b = ParamStore::new(DType::F32, rng::stream(1, "init", 0));
        GaussianEncoder::new(&mut a, "e", &cfg, 100, 6).unwrap();
        GaussianEncoder::new(&mut b, "e", &cfg, 125, 6).unwrap();
        let differ: Vec<_> = a
            .params()
            .zip(b.params())
            .filter(|((_, x), (_, y))| x.dims() != y.dims())
            .map(|((n, _), _)| n.clone())
            .collect();
        assert_eq!(differ, vec!["e.stem.conv.weight".to_string()]);
    }
}
