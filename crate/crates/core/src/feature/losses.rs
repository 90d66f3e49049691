//! Loss terms of the representation learner.

use candle_core::{Tensor, D};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{log_softmax, log_sum_exp, one_hot};
use crate::rng::Rng;

/// Closed-form `KL(N(mu_q, exp(lv_q)) || N(mu_p, exp(lv_p)))` for diagonal
/// Gaussians, summed over the latent dimension. Shape `(batch,)`.
pub fn gaussian_kl(
    mu_q: &Tensor,
    log_var_q: &Tensor,
    mu_p: &Tensor,
    log_var_p: &Tensor,
) -> Result<Tensor> {
    let var_ratio = (log_var_q - log_var_p)?.exp()?;
    let mean_term = ((mu_q - mu_p)?.sqr()? / log_var_p.exp()?)?;
    let inner = ((((var_ratio + mean_term)? - 1.0)? - log_var_q)? + log_var_p)?;
    Ok((inner.sum(D::Minus1)? * 0.5)?)
}

/// `mu + exp(lv / 2) * eps` with `eps ~ N(0, I)` drawn from `rng`.
pub fn reparameterize(mu: &Tensor, log_var: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let eps: Vec<f64> = (0..mu.elem_count())
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let eps = Tensor::from_vec(eps, mu.shape(), mu.device())?.to_dtype(mu.dtype())?;
    Ok((mu + ((log_var * 0.5)?.exp()? * eps)?)?)
}

/// Mean cross-entropy of `logits` `(batch, classes)` against class indices.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    if b != targets.len() {
        return Err(Error::Shape(format!(
            "{b} logits for {} targets",
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Label(format!("target {bad} outside {c} classes")));
    }
    let mask = one_hot(targets, c, logits.dtype())?;
    Ok(((log_softmax(logits, 1)? * mask)?.sum_all()?.neg()? / b as f64)?)
}

/// Cosine-similarity logits with the diagonal masked out.
fn similarity_logits(z: &Tensor, temperature: f64) -> Result<Tensor> {
    let n = z.dim(0)?;
    let sim = (z.matmul(&z.t()?)? / temperature)?;
    let eye = Tensor::eye(n, z.dtype(), z.device())?;
    Ok((sim - (eye * 1e9)?)?)
}

/// Pairwise contrastive loss over `2B` L2-normalised projections where rows
/// `2k` and `2k + 1` are two views of the same source. Mean over anchors.
pub fn nt_xent(z: &Tensor, temperature: f64) -> Result<Tensor> {
    let n = z.dim(0)?;
    if n < 2 || n % 2 != 0 {
        return Err(Error::Batch(format!(
            "pairwise contrastive loss needs an even batch of views, got {n}"
        )));
    }
    let logits = similarity_logits(z, temperature)?;
    let partners: Vec<usize> = (0..n).map(|i| i ^ 1).collect();
    let pos_mask = one_hot(&partners, n, z.dtype())?;
    let positive = (&logits * pos_mask)?.sum(1)?;
    let lse = log_sum_exp(&logits, 1)?.squeeze(1)?;
    Ok((lse - positive)?.mean_all()?)
}

/// Supervised contrastive loss: positives of an anchor are all other rows
/// with the same label. Anchors without positives are skipped.
pub fn sup_con(z: &Tensor, labels: &[usize], temperature: f64) -> Result<Tensor> {
    let n = z.dim(0)?;
    if n != labels.len() {
        return Err(Error::Shape(format!(
            "{n} projections for {} labels",
            labels.len()
        )));
    }
    let mut mask = vec![0f64; n * n];
    let mut weight = vec![0f64; n];
    let mut anchors = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        weight[i] = 1.0;
        for j in &positives {
            mask[i * n + j] = 1.0 / positives.len() as f64;
        }
    }
    if anchors == 0 {
        return Err(Error::DegenerateBatch);
    }
    let dtype = z.dtype();
    let mask = Tensor::from_vec(mask, (n, n), z.device())?.to_dtype(dtype)?;
    let weight = Tensor::from_vec(weight, n, z.device())?.to_dtype(dtype)?;
    let logits = similarity_logits(z, temperature)?;
    let positive = (&logits * mask)?.sum(1)?;
    let lse = log_sum_exp(&logits, 1)?.squeeze(1)?;
    let per_anchor = ((lse - positive)? * weight)?;
    Ok((per_anchor.sum_all()? / anchors as f64)?)
}

/// Mean squared error per sample, `(batch,)`.
pub fn mse_per_sample(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    Ok((x - y)?.sqr()?.flatten_from(1)?.mean(1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: Vec<f64>, shape: (usize, usize)) -> Tensor {
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn scalar(x: Tensor) -> f64 {
        x.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn kl_standard_vs_shifted() {
        let zero = t(vec![0.0], (1, 1));
        let one = t(vec![1.0], (1, 1));
        let kl = gaussian_kl(&zero, &zero, &one, &zero).unwrap();
        assert!((kl.to_vec1::<f64>().unwrap()[0] - 0.5).abs() < 1e-12);
        let self_kl = gaussian_kl(&one, &zero, &one, &zero).unwrap();
        assert_eq!(self_kl.to_vec1::<f64>().unwrap()[0], 0.0);
    }

    #[test]
    fn kl_matches_univariate_formula() {
        let (mq, lq, mp, lp) = (0.3f64, -0.7f64, -1.2f64, 0.4f64);
        let oracle = 0.5 * (lp - lq + (lq.exp() + (mq - mp).powi(2)) / lp.exp() - 1.0);
        let kl = gaussian_kl(
            &t(vec![mq], (1, 1)),
            &t(vec![lq], (1, 1)),
            &t(vec![mp], (1, 1)),
            &t(vec![lp], (1, 1)),
        )
        .unwrap();
        assert!((kl.to_vec1::<f64>().unwrap()[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn identical_embeddings_give_log_three() {
        let z = t(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0], (4, 2));
        let l = scalar(nt_xent(&z, 0.5).unwrap());
        assert!((l - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_negatives() {
        // Rows 0,1 share e1; rows 2,3 share e2.
        let z = t(vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0], (4, 2));
        let l = scalar(nt_xent(&z, 1.0).unwrap());
        let e = 1f64.exp();
        assert!((l + (e / (e + 2.0)).ln()).abs() < 1e-9);
    }

    #[test]
    fn supcon_identical_same_label() {
        let z = t(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0], (3, 2));
        let l = scalar(sup_con(&z, &[2, 2, 2], 0.5).unwrap());
        assert!((l - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn supcon_all_distinct_is_degenerate() {
        let z = t(vec![0.0, 1.0, 1.0, 0.0, 0.6, 0.8], (3, 2));
        assert!(matches!(
            sup_con(&z, &[0, 1, 2], 0.5),
            Err(Error::DegenerateBatch)
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = t(vec![0.0; 10], (2, 5));
        let l = scalar(cross_entropy(&logits, &[0, 4]).unwrap());
        assert!((l - 5f64.ln()).abs() < 1e-12);
        assert!(matches!(
            cross_entropy(&logits, &[0, 5]),
            Err(Error::Label(_))
        ));
    }
}
