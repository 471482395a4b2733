//! Conditional adversarial sequence generation.
//!
//! A label-conditioned LSTM generator is pretrained by maximum likelihood and
//! then refined with REINFORCE, using Monte-Carlo rollout rewards scored by a
//! conditional discriminator (fastText, CNN + highway, or BiLSTM + attention).
//! The [`evaluation`] module provides the micro (NLL-test, self-BLEU), macro
//! (adversarial success, evaluator reliability) and application (downstream
//! classification) metrics. Training data comes from a synthetic grammar whose
//! exact entropy is computable, see [`corpus`].

pub mod adversarial;
pub mod corpus;
pub mod discriminators;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod numerics;

pub use error::{Error, Result};
