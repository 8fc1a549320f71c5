//! Multitask pressure-map recognition: a dual-head CNN that classifies in-bed
//! posture and subject identity from single 32×64 pressure-mat frames, with
//! the preprocessing, augmentation, cross-validation and baseline machinery
//! around it.

pub mod baselines;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod nn;
pub mod signal;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
