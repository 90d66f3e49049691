//! Sleep staging from single-channel EEG.
//!
//! Two-stage pipeline: a dual-latent variational model learns sleep and
//! subject representations of 30-second epochs, then a Transformer with a
//! linear-chain CRF labels sequences of the sleep representations.

pub mod augment;
pub mod config;
pub mod error;
pub mod eval;
pub mod feature;
pub mod ingest;
pub mod nn;
pub mod rng;
pub mod sequence;
pub mod stage;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use stage::{RawStage, SleepStage, NUM_STAGES};
