use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::losses::{cross_entropy, gaussian_kl, mse_per_sample, nt_xent, sup_con};
use super::model::FeatureNet;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Weights of the representation objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha_subject: f64,
    pub alpha_sleep: f64,
    pub beta: f64,
    pub gamma_subject: f64,
    pub gamma_sleep: f64,
    /// Contrastive temperature.
    pub temperature: f64,
}

impl Default for LossWeights {
    /// Values used for Sleep-EDF.
    fn default() -> Self {
        LossWeights {
            alpha_subject: 10500.0,
            alpha_sleep: 3500.0,
            beta: 1.0,
            gamma_subject: 20000.0,
            gamma_sleep: 20000.0,
            temperature: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.alpha_subject,
            self.alpha_sleep,
            self.beta,
            self.gamma_subject,
            self.gamma_sleep,
        ];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config("loss.temperature must be positive".into()));
        }
        Ok(())
    }

    /// Same weights with every weighted term multiplied by `k` (β untouched).
    pub fn scaled(&self, k: f64) -> Self {
        LossWeights {
            alpha_subject: self.alpha_subject * k,
            alpha_sleep: self.alpha_sleep * k,
            gamma_subject: self.gamma_subject * k,
            gamma_sleep: self.gamma_sleep * k,
            ..*self
        }
    }
}

/// Which parts of the labeled objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveTerms {
    /// Reconstruction and both KL terms.
    pub vae: bool,
    /// Cross-entropy of both auxiliary classifiers.
    pub classifiers: bool,
    pub supervised_contrastive: bool,
    /// Subject-side terms (subject KL, subject classifier, pairwise contrast).
    pub subject_branch: bool,
}

impl Default for ObjectiveTerms {
    fn default() -> Self {
        ObjectiveTerms {
            vae: true,
            classifiers: true,
            supervised_contrastive: true,
            subject_branch: true,
        }
    }
}

/// Individual terms of one evaluation. Absent terms were not computed.
#[derive(Debug, Clone)]
pub struct FeatureTerms {
    /// Log-likelihood of the reconstruction (negative mean squared error).
    pub reconstruction: Option<Tensor>,
    pub kl_subject: Option<Tensor>,
    pub kl_sleep: Option<Tensor>,
    /// `reconstruction - beta * (kl_subject + kl_sleep)`; maximised.
    pub elbo: Option<Tensor>,
    pub ce_subject: Option<Tensor>,
    pub ce_sleep: Option<Tensor>,
    pub cl_subject: Option<Tensor>,
    pub scl_sleep: Option<Tensor>,
    /// Minimised objective.
    pub total: Tensor,
}

/// Scalar view of [`FeatureTerms`], for logs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub reconstruction: Option<f64>,
    pub kl_subject: Option<f64>,
    pub kl_sleep: Option<f64>,
    pub elbo: Option<f64>,
    pub ce_subject: Option<f64>,
    pub ce_sleep: Option<f64>,
    pub cl_subject: Option<f64>,
    pub scl_sleep: Option<f64>,
    pub total: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

impl FeatureTerms {
    pub fn values(&self) -> Result<TermValues> {
        let v = |t: &Option<Tensor>| t.as_ref().map(scalar).transpose();
        Ok(TermValues {
            reconstruction: v(&self.reconstruction)?,
            kl_subject: v(&self.kl_subject)?,
            kl_sleep: v(&self.kl_sleep)?,
            elbo: v(&self.elbo)?,
            ce_subject: v(&self.ce_subject)?,
            ce_sleep: v(&self.ce_sleep)?,
            cl_subject: v(&self.cl_subject)?,
            scl_sleep: v(&self.scl_sleep)?,
            total: scalar(&self.total)?,
        })
    }

    fn check_finite(&self) -> Result<()> {
        let named = [
            ("reconstruction", &self.reconstruction),
            ("kl_subject", &self.kl_subject),
            ("kl_sleep", &self.kl_sleep),
            ("ce_subject", &self.ce_subject),
            ("ce_sleep", &self.ce_sleep),
            ("cl_subject", &self.cl_subject),
            ("scl_sleep", &self.scl_sleep),
        ];
        for (name, t) in named {
            if let Some(t) = t {
                if !scalar(t)?.is_finite() {
                    return Err(Error::numerical(name));
                }
            }
        }
        if !scalar(&self.total)?.is_finite() {
            return Err(Error::numerical("total"));
        }
        Ok(())
    }
}

impl TermValues {
    /// Element-wise mean of several evaluations; a term is present if it is
    /// present in every entry.
    pub fn mean(values: &[TermValues]) -> TermValues {
        let n = values.len().max(1) as f64;
        let avg = |f: fn(&TermValues) -> Option<f64>| -> Option<f64> {
            values.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
        };
        TermValues {
            reconstruction: avg(|v| v.reconstruction),
            kl_subject: avg(|v| v.kl_subject),
            kl_sleep: avg(|v| v.kl_sleep),
            elbo: avg(|v| v.elbo),
            ce_subject: avg(|v| v.ce_subject),
            ce_sleep: avg(|v| v.ce_sleep),
            cl_subject: avg(|v| v.cl_subject),
            scl_sleep: avg(|v| v.scl_sleep),
            total: values.iter().map(|v| v.total).sum::<f64>() / n,
        }
    }
}

/// Labeled objective on a batch of `2B` views (rows `2k`, `2k + 1` paired).
///
/// `subjects` indexes the subject vocabulary; pass `None` for subjects
/// outside it, which drops the subject KL and classifier terms.
pub fn labeled_loss(
    net: &FeatureNet,
    views: &Tensor,
    stages: &[usize],
    subjects: Option<&[usize]>,
    weights: &LossWeights,
    terms: ObjectiveTerms,
    rng: &mut Rng,
    train: bool,
) -> Result<FeatureTerms> {
    let n = views.dim(0)?;
    if stages.len() != n || subjects.is_some_and(|s| s.len() != n) {
        return Err(Error::Shape(format!(
            "{n} views but {} stage labels",
            stages.len()
        )));
    }
    let post_y = net.encode_sleep(views, train)?;
    let z_y = post_y.sample(rng)?;
    let (post_d, z_d) = if terms.subject_branch || terms.vae {
        let p = net.encode_subject(views, train)?;
        let z = p.sample(rng)?;
        (Some(p), Some(z))
    } else {
        (None, None)
    };
    let subjects = subjects.filter(|_| terms.subject_branch);

    let mut out = FeatureTerms {
        reconstruction: None,
        kl_subject: None,
        kl_sleep: None,
        elbo: None,
        ce_subject: None,
        ce_sleep: None,
        cl_subject: None,
        scl_sleep: None,
        total: Tensor::zeros((), net.dtype(), views.device())?,
    };

    if terms.vae {
        let z_d = z_d
            .as_ref()
            .expect("subject latent is sampled when the VAE terms are on");
        let post_d = post_d.as_ref().expect("subject posterior present");
        let recon = mse_per_sample(&net.decode(z_d, &z_y)?, views)?
            .mean_all()?
            .neg()?;
        let prior_y = net.prior_sleep(stages)?;
        let kl_y = gaussian_kl(
            &post_y.mean,
            &post_y.log_var,
            &prior_y.mean,
            &prior_y.log_var,
        )?
        .mean_all()?;
        let mut elbo = (&recon - (&kl_y * weights.beta)?)?;
        if let Some(subjects) = subjects {
            let prior_d = net.prior_subject(subjects)?;
            let kl_d = gaussian_kl(
                &post_d.mean,
                &post_d.log_var,
                &prior_d.mean,
                &prior_d.log_var,
            )?
            .mean_all()?;
            elbo = (elbo - (&kl_d * weights.beta)?)?;
            out.kl_subject = Some(kl_d);
        }
        out.total = (&out.total - &elbo)?;
        out.reconstruction = Some(recon);
        out.kl_sleep = Some(kl_y);
        out.elbo = Some(elbo);
    }
    if terms.classifiers {
        if let (Some(subjects), Some(z_d)) = (subjects, z_d.as_ref()) {
            let ce_d = cross_entropy(&net.classify_subject(z_d)?, subjects)?;
            out.total = (&out.total + (&ce_d * weights.alpha_subject)?)?;
            out.ce_subject = Some(ce_d);
        }
        let ce_y = cross_entropy(&net.classify_sleep(&z_y)?, stages)?;
        out.total = (&out.total + (&ce_y * weights.alpha_sleep)?)?;
        out.ce_sleep = Some(ce_y);
    }
    if terms.subject_branch {
        let z_d = z_d.as_ref().expect("subject latent present");
        let cl = nt_xent(&net.project_subject(z_d)?, weights.temperature)?;
        out.total = (&out.total + (&cl * weights.gamma_subject)?)?;
        out.cl_subject = Some(cl);
    }
    if terms.supervised_contrastive {
        let scl = sup_con(&net.project_sleep(&z_y)?, stages, weights.temperature)?;
        out.total = (&out.total + (&scl * weights.gamma_sleep)?)?;
        out.scl_sleep = Some(scl);
    }
    out.check_finite()?;
    Ok(out)
}

/// Unlabeled objective: weighted pairwise contrast on the subject branch.
pub fn unlabeled_loss(
    net: &FeatureNet,
    views: &Tensor,
    weights: &LossWeights,
    rng: &mut Rng,
    train: bool,
) -> Result<FeatureTerms> {
    let post_d = net.encode_subject(views, train)?;
    let z_d = post_d.sample(rng)?;
    let cl = nt_xent(&net.project_subject(&z_d)?, weights.temperature)?;
    let out = FeatureTerms {
        reconstruction: None,
        kl_subject: None,
        kl_sleep: None,
        elbo: None,
        ce_subject: None,
        ce_sleep: None,
        total: (&cl * weights.gamma_subject)?,
        cl_subject: Some(cl),
        scl_sleep: None,
    };
    out.check_finite()?;
    Ok(out)
}
