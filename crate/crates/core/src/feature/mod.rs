//! Dual-latent representation learner for single epochs.

pub mod losses;
mod model;
mod objective;

pub use model::{names, FeatureNet, FeatureNetConfig, Posterior};
pub use objective::{
    labeled_loss, unlabeled_loss, FeatureTerms, LossWeights, ObjectiveTerms, TermValues,
};
