use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{epoch_len, Epoch};
use crate::nn::{
    l2_normalize, one_hot, ConvTranspose1d, GaussianEncoder, Linear, ParamStore, ResNetConfig,
};
use crate::rng::Rng;
use crate::stage::NUM_STAGES;

/// Architecture of the representation learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureNetConfig {
    pub sampling_rate_hz: u32,
    pub encoder: ResNetConfig,
    pub subject_latent_dim: usize,
    pub sleep_latent_dim: usize,
    pub decoder_hidden: usize,
    /// Channels entering the first transposed convolution (at least 4).
    pub decoder_channels: usize,
    pub prior_hidden: usize,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    /// Size of the subject vocabulary (training subjects).
    pub num_subjects: usize,
    /// Affine input normalisation, in volts.
    pub input_mean: f64,
    pub input_std: f64,
}

impl Default for FeatureNetConfig {
    fn default() -> Self {
        FeatureNetConfig {
            sampling_rate_hz: 100,
            encoder: ResNetConfig::default(),
            subject_latent_dim: 128,
            sleep_latent_dim: 128,
            decoder_hidden: 256,
            decoder_channels: 64,
            prior_hidden: 128,
            projection_hidden: 128,
            projection_dim: 128,
            num_subjects: 1,
            input_mean: 0.0,
            input_std: 1.0,
        }
    }
}

impl FeatureNetConfig {
    pub fn epoch_len(&self) -> usize {
        epoch_len(self.sampling_rate_hz)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let positive = [
            ("subject_latent_dim", self.subject_latent_dim),
            ("sleep_latent_dim", self.sleep_latent_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("prior_hidden", self.prior_hidden),
            ("projection_hidden", self.projection_hidden),
            ("projection_dim", self.projection_dim),
            ("num_subjects", self.num_subjects),
            ("sampling_rate_hz", self.sampling_rate_hz as usize),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("feature.{key} must be positive")));
            }
        }
        if self.decoder_channels < 4 {
            return Err(Error::Config(
                "feature.decoder_channels must be at least 4".into(),
            ));
        }
        if !(self.input_std.is_finite() && self.input_std > 0.0 && self.input_mean.is_finite()) {
            return Err(Error::Config(
                "feature input normalisation must be finite with positive std".into(),
            ));
        }
        Ok(())
    }
}

/// Diagonal Gaussian, each field `(batch, latent)`.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl Posterior {
    pub fn sample(&self, rng: &mut Rng) -> Result<Tensor> {
        super::losses::reparameterize(&self.mean, &self.log_var, rng)
    }
}

#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    fn new(store: &mut ParamStore, name: &str, dims: &[usize]) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    /// ReLU between layers, none after the last.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    mlp: Mlp,
    deconvs: Vec<ConvTranspose1d>,
    channels: usize,
    seed_len: usize,
    out_len: usize,
}

impl Decoder {
    fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let b = z.dim(0)?;
        let mut h = self
            .mlp
            .forward(z)?
            .relu()?
            .reshape((b, self.channels, self.seed_len))?;
        for (i, d) in self.deconvs.iter().enumerate() {
            h = d.forward(&h)?;
            if i + 1 < self.deconvs.len() {
                h = h.relu()?;
            }
        }
        Ok(h.narrow(2, 0, self.out_len)?)
    }
}

/// Parameter-name prefixes of each component.
pub mod names {
    pub const ENCODER_SUBJECT: &str = "encoder_subject";
    pub const ENCODER_SLEEP: &str = "encoder_sleep";
    pub const DECODER: &str = "decoder";
    pub const PRIOR_SUBJECT: &str = "prior_subject";
    pub const PRIOR_SLEEP: &str = "prior_sleep";
    pub const CLASSIFIER_SUBJECT: &str = "classifier_subject";
    pub const CLASSIFIER_SLEEP: &str = "classifier_sleep";
    pub const PROJECTION_SUBJECT: &str = "projection_subject";
    pub const PROJECTION_SLEEP: &str = "projection_sleep";
}

/// Dual-latent variational model with auxiliary heads.
pub struct FeatureNet {
    config: FeatureNetConfig,
    store: ParamStore,
    encoder_subject: GaussianEncoder,
    encoder_sleep: GaussianEncoder,
    decoder: Decoder,
    prior_subject: Mlp,
    prior_sleep: Mlp,
    classifier_subject: Linear,
    classifier_sleep: Linear,
    projection_subject: Mlp,
    projection_sleep: Mlp,
}

impl FeatureNet {
    pub fn new(config: FeatureNetConfig, dtype: DType, init_rng: Rng) -> Result<Self> {
        use names::*;
        config.validate()?;
        let mut store = ParamStore::new(dtype, init_rng);
        let c = &config;
        let s = &mut store;
        let encoder_subject = GaussianEncoder::new(
            s,
            ENCODER_SUBJECT,
            &c.encoder,
            c.sampling_rate_hz,
            c.subject_latent_dim,
        )?;
        let encoder_sleep = GaussianEncoder::new(
            s,
            ENCODER_SLEEP,
            &c.encoder,
            c.sampling_rate_hz,
            c.sleep_latent_dim,
        )?;
        let out_len = c.epoch_len();
        let seed_len = out_len.div_ceil(8);
        let ch = c.decoder_channels;
        let decoder = Decoder {
            mlp: Mlp::new(
                s,
                &format!("{DECODER}.mlp"),
                &[
                    c.subject_latent_dim + c.sleep_latent_dim,
                    c.decoder_hidden,
                    ch * seed_len,
                ],
            )?,
            deconvs: vec![
                ConvTranspose1d::new(s, &format!("{DECODER}.deconv0"), ch, ch / 2, 4, 2, 1)?,
                ConvTranspose1d::new(s, &format!("{DECODER}.deconv1"), ch / 2, ch / 4, 4, 2, 1)?,
                ConvTranspose1d::new(s, &format!("{DECODER}.deconv2"), ch / 4, 1, 4, 2, 1)?,
            ],
            channels: ch,
            seed_len,
            out_len,
        };
        let h = c.prior_hidden;
        let prior_subject = Mlp::new(
            s,
            PRIOR_SUBJECT,
            &[c.num_subjects, h, h, 2 * c.subject_latent_dim],
        )?;
        let prior_sleep = Mlp::new(s, PRIOR_SLEEP, &[NUM_STAGES, h, h, 2 * c.sleep_latent_dim])?;
        let classifier_subject =
            Linear::new(s, CLASSIFIER_SUBJECT, c.subject_latent_dim, c.num_subjects)?;
        let classifier_sleep = Linear::new(s, CLASSIFIER_SLEEP, c.sleep_latent_dim, NUM_STAGES)?;
        let projection_subject = Mlp::new(
            s,
            PROJECTION_SUBJECT,
            &[c.subject_latent_dim, c.projection_hidden, c.projection_dim],
        )?;
        let projection_sleep = Mlp::new(
            s,
            PROJECTION_SLEEP,
            &[c.sleep_latent_dim, c.projection_hidden, c.projection_dim],
        )?;
        Ok(FeatureNet {
            config,
            store,
            encoder_subject,
            encoder_sleep,
            decoder,
            prior_subject,
            prior_sleep,
            classifier_subject,
            classifier_sleep,
            projection_subject,
            projection_sleep,
        })
    }

    pub fn config(&self) -> &FeatureNetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn sleep_stem_weight_name(&self) -> String {
        self.encoder_sleep.stem_weight_name()
    }

    pub fn subject_stem_weight_name(&self) -> String {
        self.encoder_subject.stem_weight_name()
    }

    /// Stacks sample vectors into a normalised `(batch, 1, N)` tensor.
    pub fn input_tensor(&self, signals: &[&[f32]]) -> Result<Tensor> {
        let n = self.config.epoch_len();
        let mut data = Vec::with_capacity(signals.len() * n);
        for s in signals {
            if s.len() != n {
                return Err(Error::Shape(format!(
                    "epoch has {} samples, model expects {n}",
                    s.len()
                )));
            }
            let (m, sd) = (self.config.input_mean, self.config.input_std);
            data.extend(s.iter().map(|&v| (v as f64 - m) / sd));
        }
        Ok(
            Tensor::from_vec(data, (signals.len(), 1, n), self.store.device())?
                .to_dtype(self.dtype())?,
        )
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let dims = x.dims();
        if dims.len() != 3 || dims[1] != 1 || dims[2] != self.config.epoch_len() {
            return Err(Error::Shape(format!(
                "expected (batch, 1, {}) input, got {dims:?}",
                self.config.epoch_len()
            )));
        }
        Ok(())
    }

    pub fn encode_subject(&self, x: &Tensor, train: bool) -> Result<Posterior> {
        self.check_input(x)?;
        let (mean, log_var) = self.encoder_subject.forward(x, train)?;
        Ok(Posterior { mean, log_var })
    }

    pub fn encode_sleep(&self, x: &Tensor, train: bool) -> Result<Posterior> {
        self.check_input(x)?;
        let (mean, log_var) = self.encoder_sleep.forward(x, train)?;
        Ok(Posterior { mean, log_var })
    }

    /// Both posteriors of a batch.
    pub fn encode(&self, x: &Tensor, train: bool) -> Result<(Posterior, Posterior)> {
        Ok((self.encode_subject(x, train)?, self.encode_sleep(x, train)?))
    }

    pub fn decode(&self, z_subject: &Tensor, z_sleep: &Tensor) -> Result<Tensor> {
        self.decoder
            .forward(&Tensor::cat(&[z_subject, z_sleep], 1)?)
    }

    fn prior(
        mlp: &Mlp,
        labels: &[usize],
        classes: usize,
        latent: usize,
        dtype: DType,
    ) -> Result<Posterior> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label(format!(
                "label {bad} outside vocabulary of {classes}"
            )));
        }
        let out = mlp.forward(&one_hot(labels, classes, dtype)?)?;
        Ok(Posterior {
            mean: out.narrow(1, 0, latent)?,
            log_var: out.narrow(1, latent, latent)?,
        })
    }

    pub fn prior_subject(&self, subjects: &[usize]) -> Result<Posterior> {
        Self::prior(
            &self.prior_subject,
            subjects,
            self.config.num_subjects,
            self.config.subject_latent_dim,
            self.dtype(),
        )
    }

    pub fn prior_sleep(&self, stages: &[usize]) -> Result<Posterior> {
        Self::prior(
            &self.prior_sleep,
            stages,
            NUM_STAGES,
            self.config.sleep_latent_dim,
            self.dtype(),
        )
    }

    pub fn classify_subject(&self, z: &Tensor) -> Result<Tensor> {
        self.classifier_subject.forward(z)
    }

    pub fn classify_sleep(&self, z: &Tensor) -> Result<Tensor> {
        self.classifier_sleep.forward(z)
    }

    pub fn project_subject(&self, z: &Tensor) -> Result<Tensor> {
        l2_normalize(&self.projection_subject.forward(z)?)
    }

    pub fn project_sleep(&self, z: &Tensor) -> Result<Tensor> {
        l2_normalize(&self.projection_sleep.forward(z)?)
    }

    /// Posterior means of the sleep encoder in evaluation mode, `(n, L_y)`,
    /// detached from the graph.
    pub fn extract_sleep(&self, epochs: &[&Epoch]) -> Result<Tensor> {
        self.extract_with(epochs, |x| self.encode_sleep(x, false))
    }

    /// Posterior means of the subject encoder in evaluation mode.
    pub fn extract_subject(&self, epochs: &[&Epoch]) -> Result<Tensor> {
        self.extract_with(epochs, |x| self.encode_subject(x, false))
    }

    fn extract_with<F: Fn(&Tensor) -> Result<Posterior>>(
        &self,
        epochs: &[&Epoch],
        f: F,
    ) -> Result<Tensor> {
        const CHUNK: usize = 256;
        if epochs.is_empty() {
            return Err(Error::EmptyDataset("no epochs to encode".into()));
        }
        if let Some(e) = epochs
            .iter()
            .find(|e| e.sampling_rate_hz != self.config.sampling_rate_hz)
        {
            return Err(Error::Transfer(format!(
                "epoch sampled at {} Hz but the model expects {} Hz; fine-tune the model for this rate",
                e.sampling_rate_hz, self.config.sampling_rate_hz
            )));
        }
        let mut parts = Vec::new();
        for chunk in epochs.chunks(CHUNK) {
            let signals: Vec<&[f32]> = chunk.iter().map(|e| &e.samples[..]).collect();
            parts.push(f(&self.input_tensor(&signals)?)?.mean.detach());
        }
        Ok(Tensor::cat(&parts, 0)?)
    }
}
