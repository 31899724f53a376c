//! Cross-modal info-max hashing.
//!
//! Learns paired binary codes for two feature modalities with product-Bernoulli
//! encoders trained on variational mutual-information bounds, and evaluates
//! Hamming-space retrieval over the resulting codes. The [`oracles`] module
//! holds exact enumeration routines used to check the estimators at small
//! scale.

pub mod autodiff;
pub mod bernoulli;
pub mod check;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod nn;
pub mod objectives;
pub mod oracles;
pub mod report;
pub mod retrieval;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }
}
