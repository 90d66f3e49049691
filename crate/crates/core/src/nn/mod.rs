//! Minimal neural-network toolkit on top of candle tensors.

mod adam;
mod gradcheck;
mod layers;
mod params;
mod resnet;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{gradient_check, GradCheckEntry};
pub use layers::{
    dropout, l2_normalize, log_softmax, log_sum_exp, one_hot, softmax, BatchNorm1d, Conv1d,
    ConvTranspose1d, LayerNorm, Linear,
};
pub use params::{Init, NamedTensor, ParamStore};
pub use resnet::{reinit_stem, stem_kernel, GaussianEncoder, ResNetConfig};
