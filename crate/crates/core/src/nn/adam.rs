use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use super::params::NamedTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
    steps: u64,
}

/// Adam over a fixed, ordered set of parameters. Parameters without a
/// gradient in a given step are left untouched, state included.
pub struct Adam {
    config: AdamConfig,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, config: AdamConfig) -> Result<Self> {
        let slots = params
            .into_iter()
            .map(|(name, var)| {
                let z = var.as_tensor().zeros_like()?;
                Ok(Slot {
                    name,
                    m: z.clone(),
                    v: z,
                    var,
                    steps: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Adam { config, slots })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update; returns the global gradient norm before clipping.
    pub fn step(&mut self, grads: &GradStore) -> Result<f64> {
        let present: Vec<(usize, Tensor)> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| grads.get(s.var.as_tensor()).map(|g| (i, g.detach())))
            .collect();
        let mut sq = 0.0;
        for (_, g) in &present {
            sq += g
                .sqr()?
                .sum_all()?
                .to_dtype(candle_core::DType::F64)?
                .to_scalar::<f64>()?;
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::numerical("gradient norm"));
        }
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / (norm + 1e-6),
            _ => 1.0,
        };
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        for (i, g) in present {
            let slot = &mut self.slots[i];
            let g = if scale != 1.0 { (g * scale)? } else { g };
            slot.steps += 1;
            slot.m = ((&slot.m * beta1)? + (&g * (1.0 - beta1))?)?;
            slot.v = ((&slot.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let t = slot.steps as i32;
            let m_hat = (&slot.m / (1.0 - beta1.powi(t)))?;
            let v_hat = (&slot.v / (1.0 - beta2.powi(t)))?;
            let update = (m_hat / (v_hat.sqrt()? + eps)?)?;
            slot.var
                .set(&(slot.var.as_tensor() - (update * learning_rate)?)?)?;
        }
        Ok(norm)
    }

    /// Moment estimates and step counts, for checkpointing.
    pub fn export(&self) -> Result<(Vec<NamedTensor>, Vec<(String, u64)>)> {
        let mut tensors = Vec::with_capacity(self.slots.len() * 2);
        let mut steps = Vec::with_capacity(self.slots.len());
        for s in &self.slots {
            tensors.push(NamedTensor::from_tensor(&format!("m.{}", s.name), &s.m)?);
            tensors.push(NamedTensor::from_tensor(&format!("v.{}", s.name), &s.v)?);
            steps.push((s.name.clone(), s.steps));
        }
        Ok((tensors, steps))
    }

    pub fn import(&mut self, tensors: &[NamedTensor], steps: &[(String, u64)]) -> Result<()> {
        for s in &mut self.slots {
            let find = |prefix: &str| {
                tensors
                    .iter()
                    .find(|t| t.name == format!("{prefix}.{}", s.name))
                    .ok_or_else(|| {
                        Error::Checkpoint(format!("optimizer state missing for {}", s.name))
                    })
            };
            let m = find("m")?;
            let v = find("v")?;
            if m.shape != s.var.dims() || v.shape != s.var.dims() {
                return Err(Error::Checkpoint(format!(
                    "optimizer state shape mismatch for {}",
                    s.name
                )));
            }
            let dtype = s.var.dtype();
            let device = s.var.device().clone();
            s.m = m.to_tensor(dtype, &device)?;
            s.v = v.to_tensor(dtype, &device)?;
            s.steps = steps
                .iter()
                .find(|(n, _)| n == &s.name)
                .map(|(_, k)| *k)
                .unwrap_or(0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn first_step_moves_by_learning_rate() {
        let var = Var::from_tensor(&Tensor::new(&[1.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let mut adam = Adam::new(
            vec![("x".into(), var.clone())],
            AdamConfig {
                clip_norm: None,
                ..AdamConfig::default()
            },
        )
        .unwrap();
        let loss = var.as_tensor().sqr().unwrap().sum_all().unwrap();
        adam.step(&loss.backward().unwrap()).unwrap();
        let x: Vec<f64> = var.as_tensor().to_vec1().unwrap();
        // m_hat/sqrt(v_hat) = sign(g) on the first step.
        assert!((x[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((x[1] - (-2.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn reports_unclipped_norm() {
        let var = Var::from_tensor(&Tensor::new(&[3.0f64, 4.0], &Device::Cpu).unwrap()).unwrap();
        let mut adam = Adam::new(vec![("x".into(), var.clone())], AdamConfig::default()).unwrap();
        let loss = (var.as_tensor().sqr().unwrap().sum_all().unwrap() * 0.5).unwrap();
        let norm = adam.step(&loss.backward().unwrap()).unwrap();
        assert!((norm - 5.0).abs() < 1e-12);
        assert_eq!(var.dtype(), DType::F64);
    }

    #[test]
    fn state_round_trips() {
        let var = Var::from_tensor(&Tensor::new(&[1.0f64, 2.0], &Device::Cpu).unwrap()).unwrap();
        let mut adam = Adam::new(vec![("x".into(), var.clone())], AdamConfig::default()).unwrap();
        let loss = var.as_tensor().sqr().unwrap().sum_all().unwrap();
        adam.step(&loss.backward().unwrap()).unwrap();
        let (t, s) = adam.export().unwrap();
        let mut other = Adam::new(vec![("x".into(), var.clone())], AdamConfig::default()).unwrap();
        other.import(&t, &s).unwrap();
        assert_eq!(other.export().unwrap(), (t, s));
    }
}
