use candle_core::{DType, Tensor};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Per-parameter comparison of autodiff and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `|g_a - g_n| / max(|g_a| + |g_n|, 1e-12)` over the whole tensor.
    pub relative_error: f64,
}

impl GradCheckEntry {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.relative_error <= tolerance
            || (self.analytic_norm < 1e-10 && self.numeric_norm < 1e-10)
    }
}

/// Compares the gradient of `loss` against finite differences for every
/// parameter in `store` whose name starts with one of `prefixes` (all if
/// empty). `loss` must be deterministic across calls. The store must be f64.
pub fn gradient_check<F>(
    store: &ParamStore,
    prefixes: &[&str],
    step: f64,
    loss: F,
) -> Result<Vec<GradCheckEntry>>
where
    F: Fn() -> Result<Tensor>,
{
    if store.dtype() != DType::F64 {
        return Err(Error::Config("gradient check needs an f64 model".into()));
    }
    let grads = loss()?.backward()?;
    let scalar = |t: Tensor| -> Result<f64> { Ok(t.to_scalar::<f64>()?) };
    let selected: Vec<_> = if prefixes.is_empty() {
        store
            .params()
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    } else {
        store.params_under(prefixes)
    };
    let mut out = Vec::with_capacity(selected.len());
    for (name, var) in selected {
        let original = var.as_tensor().copy()?;
        let shape = original.shape().clone();
        let base: Vec<f64> = original.flatten_all()?.to_vec1()?;
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1()?,
            None => vec![0.0; base.len()],
        };
        let mut numeric = vec![0.0; base.len()];
        let mut probe = base.clone();
        for i in 0..base.len() {
            probe[i] = base[i] + step;
            var.set(&Tensor::from_vec(probe.clone(), &shape, original.device())?)?;
            let up = scalar(loss()?)?;
            probe[i] = base[i] - step;
            var.set(&Tensor::from_vec(probe.clone(), &shape, original.device())?)?;
            let down = scalar(loss()?)?;
            probe[i] = base[i];
            numeric[i] = (up - down) / (2.0 * step);
        }
        var.set(&original)?;
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let (na, nn) = (norm(&analytic), norm(&numeric));
        out.push(GradCheckEntry {
            name,
            analytic_norm: na,
            numeric_norm: nn,
            relative_error: norm(&diff) / (na + nn).max(1e-12),
        });
    }
    Ok(out)
}
