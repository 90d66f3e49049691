use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Initialisation scheme for a new parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Const(f64),
    Normal(f64),
}

/// Named trainable parameters and non-trainable buffers of a model.
///
/// Names are dotted paths (`encoder_sleep.stem.conv.weight`); iteration is in
/// name order so optimiser state and checkpoints are reproducible.
#[derive(Debug)]
pub struct ParamStore {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, rng: Rng) -> Self {
        ParamStore {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn sample(&mut self, n: usize, init: Init) -> Vec<f64> {
        match init {
            Init::FanIn(fan_in) => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-b..b)).collect()
            }
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => (0..n)
                .map(|_| {
                    std * <StandardNormal as Distribution<f64>>::sample(
                        &StandardNormal,
                        &mut self.rng,
                    )
                })
                .collect(),
        }
    }

    fn make(&mut self, shape: &[usize], init: Init) -> Result<Var> {
        let n = shape.iter().product();
        let t =
            Tensor::from_vec(self.sample(n, init), shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} defined twice")));
        }
        let v = self.make(shape, init)?;
        self.params.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let v = self.make(shape, Init::Const(value))?;
        self.buffers.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.buffers.iter()
    }

    /// Parameters whose name starts with one of `prefixes`.
    pub fn params_under(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.params
            .iter()
            .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    /// Every parameter and buffer, flattened to f32, in name order.
    pub fn export(&self) -> Result<Vec<NamedTensor>> {
        self.params
            .iter()
            .chain(self.buffers.iter())
            .map(|(name, v)| NamedTensor::from_tensor(name, v.as_tensor()))
            .collect()
    }

    /// Overwrites stored values. Unknown names are ignored unless `strict`;
    /// shape mismatches are always an error.
    pub fn import(&self, tensors: &[NamedTensor], strict: bool) -> Result<usize> {
        let mut loaded = 0;
        for t in tensors {
            let Some(var) = self.get(&t.name) else {
                if strict {
                    return Err(Error::Checkpoint(format!("unexpected tensor {}", t.name)));
                }
                continue;
            };
            if var.dims() != t.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    t.name,
                    t.shape,
                    var.dims()
                )));
            }
            var.set(&t.to_tensor(self.dtype, &self.device)?)?;
            loaded += 1;
        }
        Ok(loaded)
    }

    /// Deep copy of the current values (for best-so-far snapshots).
    pub fn snapshot(&self) -> Result<Vec<(String, Tensor)>> {
        self.params
            .iter()
            .chain(self.buffers.iter())
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in snapshot {
            if let Some(v) = self.get(name) {
                v.set(t)?;
            }
        }
        Ok(())
    }

    /// Replaces parameters under `prefix` with freshly initialised values
    /// drawn from this store's generator.
    pub fn reinit(&mut self, name: &str, init: Init) -> Result<()> {
        let Some(var) = self.params.get(name).cloned() else {
            return Err(Error::Config(format!("no parameter {name}")));
        };
        let fresh = self.make(var.dims(), init)?;
        var.set(fresh.as_tensor())?;
        Ok(())
    }
}

/// A tensor by name, stored as f32 for checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_tensor(name: &str, t: &Tensor) -> Result<Self> {
        Ok(NamedTensor {
            name: name.to_string(),
            shape: t.dims().to_vec(),
            data: t.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?,
        })
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.data.clone(), self.shape.as_slice(), device)?.to_dtype(dtype)?)
    }
}
