use candle_core::{DType, Tensor, Var, D};
use rand::Rng as _;

use super::params::{Init, ParamStore};
use crate::error::Result;
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Linear {
            weight: store.param(
                &format!("{name}.weight"),
                &[output, input],
                Init::FanIn(input),
            )?,
            bias: store.param(&format!("{name}.bias"), &[output], Init::FanIn(input))?,
        })
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Linear {
            weight: store.param(
                &format!("{name}.weight"),
                &[output, input],
                Init::Const(0.0),
            )?,
            bias: store.param(&format!("{name}.bias"), &[output], Init::Const(0.0))?,
        })
    }

    /// `x`: `(..., input)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.as_tensor().t()?;
        Ok(x.broadcast_matmul(&w)?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = input * kernel;
        let bias = if bias {
            Some(store.param(&format!("{name}.bias"), &[output], Init::FanIn(fan_in))?)
        } else {
            None
        };
        Ok(Conv1d {
            weight: store.param(
                &format!("{name}.weight"),
                &[output, input, kernel],
                Init::FanIn(fan_in),
            )?,
            bias,
            stride,
            padding,
        })
    }

    /// `x`: `(batch, channels, length)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_padded(x, self.padding)
    }

    fn forward_padded(&self, x: &Tensor, padding: usize) -> Result<Tensor> {
        let y = conv1d(x, self.weight.as_tensor(), self.stride, padding)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.as_tensor().reshape((1, (), 1))?)?,
            None => y,
        })
    }
}

/// Convolution as gathered columns times the flattened kernel. candle's own
/// conv1d backward gives wrong gradients for multi-channel batches.
fn conv1d(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (b, c, _) = x.dims3()?;
    let (o, _, k) = w.dims3()?;
    let x = if padding > 0 {
        x.pad_with_zeros(2, padding, padding)?
    } else {
        x.clone()
    };
    let len = x.dim(2)?;
    if len < k {
        return Err(crate::error::Error::Shape(format!(
            "input length {len} is shorter than the kernel {k}"
        )));
    }
    let out = (len - k) / stride + 1;
    let idx: Vec<u32> = (0..k)
        .flat_map(|kk| (0..out).map(move |t| (t * stride + kk) as u32))
        .collect();
    let idx = Tensor::from_vec(idx, k * out, x.device())?;
    let cols = x
        .contiguous()?
        .index_select(&idx, 2)?
        .reshape((b, c * k, out))?;
    Ok(w.reshape((o, c * k))?.broadcast_matmul(&cols)?)
}

/// Transposed 1-D convolution, computed as zero-insertion upsampling followed
/// by an ordinary convolution. Output length `(L - 1) * stride - 2 * padding + kernel`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    conv: Conv1d,
    stride: usize,
    pad: usize,
}

impl ConvTranspose1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        assert!(padding < kernel, "padding must be smaller than the kernel");
        Ok(ConvTranspose1d {
            conv: Conv1d::new(store, name, input, output, kernel, 1, 0, true)?,
            stride,
            pad: kernel - 1 - padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = x.dims3()?;
        let up = if self.stride > 1 {
            let zeros = Tensor::zeros((b, c, l, self.stride - 1), x.dtype(), x.device())?;
            Tensor::cat(&[&x.unsqueeze(3)?, &zeros], 3)?
                .reshape((b, c, l * self.stride))?
                .narrow(2, 0, (l - 1) * self.stride + 1)?
        } else {
            x.clone()
        };
        self.conv.forward_padded(&up, self.pad)
    }
}

/// Batch normalisation over `(batch, length)` for each channel.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm1d {
            gamma: store.param(&format!("{name}.weight"), &[channels], Init::Const(1.0))?,
            beta: store.param(&format!("{name}.bias"), &[channels], Init::Const(0.0))?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
        })
    }

    /// In training mode normalises with batch statistics and updates the
    /// running estimates; otherwise uses the running estimates.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, _, l) = x.dims3()?;
        let (mean, var) = if train {
            let mean = x.mean_keepdim(2)?.mean_keepdim(0)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(2)?.mean_keepdim(0)?;
            let n = (b * l) as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = mean.flatten_all()?.detach();
            let v = var.flatten_all()?.detach();
            self.running_mean.set(
                &((self.running_mean.as_tensor() * (1.0 - BN_MOMENTUM))? + (m * BN_MOMENTUM)?)?,
            )?;
            self.running_var.set(
                &((self.running_var.as_tensor() * (1.0 - BN_MOMENTUM))?
                    + (v * (BN_MOMENTUM * unbiased))?)?,
            )?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, (), 1))?,
                self.running_var.as_tensor().reshape((1, (), 1))?,
            )
        };
        let norm = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        Ok(norm
            .broadcast_mul(&self.gamma.as_tensor().reshape((1, (), 1))?)?
            .broadcast_add(&self.beta.as_tensor().reshape((1, (), 1))?)?)
    }
}

/// Layer normalisation over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Var,
    beta: Var,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.param(&format!("{name}.weight"), &[dim], Init::Const(1.0))?,
            beta: store.param(&format!("{name}.bias"), &[dim], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let norm = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(norm
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

/// Inverted dropout with an explicit generator.
pub fn dropout(x: &Tensor, p: f64, train: bool, rng: &mut Rng) -> Result<Tensor> {
    if !train || p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| {
            if rng.gen_bool(keep) {
                (1.0 / keep) as f32
            } else {
                0.0
            }
        })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// Numerically stable `log(sum(exp(x)))` along `dim`, keeping the dimension.
pub fn log_sum_exp(x: &Tensor, dim: usize) -> Result<Tensor> {
    let m = x.max_keepdim(dim)?.detach();
    Ok((x.broadcast_sub(&m)?.exp()?.sum_keepdim(dim)?.log()? + m)?)
}

pub fn log_softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    Ok(x.broadcast_sub(&log_sum_exp(x, dim)?)?)
}

pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    Ok(log_softmax(x, dim)?.exp()?)
}

/// Rows scaled to unit Euclidean norm.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// One-hot encoding, `(n, classes)`.
pub fn one_hot(indices: &[usize], classes: usize, dtype: DType) -> Result<Tensor> {
    let mut v = vec![0f32; indices.len() * classes];
    for (row, &i) in indices.iter().enumerate() {
        v[row * classes + i] = 1.0;
    }
    Ok(
        Tensor::from_vec(v, (indices.len(), classes), &candle_core::Device::Cpu)?
            .to_dtype(dtype)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn store() -> ParamStore {
        ParamStore::new(DType::F64, rng::stream(0, "init", 0))
    }

    #[test]
    fn transposed_conv_doubles_length() {
        let mut s = store();
        let t = ConvTranspose1d::new(&mut s, "t", 3, 2, 4, 2, 1).unwrap();
        let x = Tensor::ones((2, 3, 7), DType::F64, &candle_core::Device::Cpu).unwrap();
        assert_eq!(t.forward(&x).unwrap().dims(), &[2, 2, 14]);
    }

    #[test]
    fn transposed_conv_matches_scatter_definition() {
        // Direct definition: y[o, i*s + k - p] += w'[o, c, k] * x[c, i], where the
        // equivalent convolution kernel is flipped: w'[k] = w[K-1-k].
        let mut s = store();
        let t = ConvTranspose1d::new(&mut s, "t", 2, 1, 3, 2, 1).unwrap();
        let w: Vec<f64> = s
            .get("t.weight")
            .unwrap()
            .as_tensor()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let b: f64 = s
            .get("t.bias")
            .unwrap()
            .as_tensor()
            .to_vec1::<f64>()
            .unwrap()[0];
        let x = vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
        let xt = Tensor::from_vec(x.clone(), (1, 2, 3), &candle_core::Device::Cpu).unwrap();
        let y: Vec<f64> = t
            .forward(&xt)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let (l, k, stride, pad) = (3usize, 3usize, 2usize, 1usize);
        let out_len = (l - 1) * stride + k - 2 * pad;
        assert_eq!(y.len(), out_len);
        let mut oracle = vec![b; out_len];
        for c in 0..2 {
            for i in 0..l {
                for kk in 0..k {
                    let pos = (i * stride + kk) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < out_len {
                        oracle[pos as usize] += w[c * k + (k - 1 - kk)] * x[c * l + i];
                    }
                }
            }
        }
        for (a, o) in y.iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-12, "{y:?} vs {oracle:?}");
        }
    }

    #[test]
    fn transposed_conv_input_gradient_matches_finite_differences() {
        let mut s = store();
        let lin = Linear::new(&mut s, "in", 3, 2 * 5).unwrap();
        let t = ConvTranspose1d::new(&mut s, "t", 2, 3, 4, 2, 1).unwrap();
        let x = Tensor::from_vec(
            (0..6).map(|i| i as f64 * 0.3 - 0.7).collect::<Vec<_>>(),
            (2, 3),
            &candle_core::Device::Cpu,
        )
        .unwrap();
        let loss = || {
            let h = lin.forward(&x)?.reshape((2, 2, 5))?;
            let y = t.forward(&h)?;
            Ok(y.sqr()?.sum_all()?)
        };
        for e in crate::nn::gradient_check(&s, &["in."], 1e-5, loss).unwrap() {
            assert!(e.passes(1e-6), "{e:?}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for (cin, cout, k, stride, pad, l) in [
            (2, 3, 4, 1, 0, 5),
            (2, 2, 3, 1, 1, 6),
            (3, 2, 5, 2, 2, 9),
            (2, 3, 1, 2, 0, 6),
        ] {
            let mut s = store();
            let lin = Linear::new(&mut s, "in", 3, cin * l).unwrap();
            let conv = Conv1d::new(&mut s, "c", cin, cout, k, stride, pad, true).unwrap();
            let x = Tensor::from_vec(
                (0..6).map(|i| i as f64 * 0.3 - 0.7).collect::<Vec<_>>(),
                (2, 3),
                &candle_core::Device::Cpu,
            )
            .unwrap();
            let loss = || {
                Ok(conv
                    .forward(&lin.forward(&x)?.reshape((2, cin, l))?)?
                    .sqr()?
                    .sum_all()?)
            };
            assert_eq!(
                conv.forward(
                    &Tensor::zeros((1, cin, l), DType::F64, &candle_core::Device::Cpu).unwrap()
                )
                .unwrap()
                .dim(2)
                .unwrap(),
                (l + 2 * pad - k) / stride + 1
            );
            for e in crate::nn::gradient_check(&s, &[], 1e-5, loss).unwrap() {
                assert!(e.passes(1e-6), "{cin} {cout} k{k} s{stride}: {e:?}");
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(
            vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0],
            (2, 3),
            &candle_core::Device::Cpu,
        )
        .unwrap();
        let s: Vec<Vec<f64>> = softmax(&x, 1).unwrap().to_vec2().unwrap();
        for row in s {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mut s = store();
        let bn = BatchNorm1d::new(&mut s, "bn", 1).unwrap();
        let x = Tensor::from_vec(vec![1.0, 3.0], (1, 1, 2), &candle_core::Device::Cpu).unwrap();
        let y: Vec<f64> = bn
            .forward(&x, true)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert!((y[0] + y[1]).abs() < 1e-12);
        let rm: Vec<f64> = s
            .get("bn.running_mean")
            .unwrap()
            .as_tensor()
            .to_vec1()
            .unwrap();
        assert!((rm[0] - 0.2).abs() < 1e-12);
        // Eval mode is a fixed affine map.
        let y1 = bn.forward(&x, false).unwrap();
        let y2 = bn.forward(&x, false).unwrap();
        assert_eq!(
            y1.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            y2.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
    }
}
