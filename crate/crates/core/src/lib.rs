//! Semantics-aware communication toolkit.
//!
//! * [`corpus`]: vocabularies, token sequences, toy text and image datasets
//! * [`channel`]: power normalisation, AWGN and phase-invariant (Rayleigh block) fading
//! * [`codec`]: confidence-gated iterative-distillation transceiver
//! * [`metrics`]: WER, BLEU, CIDEr-D, MSE and MSE gain
//! * [`training`]: cross-entropy, differentiable-similarity and actor-critic regimes
//! * [`baselines`]: 5-bit source code + Reed-Solomon over GF(32) + BPSK
//! * [`harness`]: configuration, sweeps, reports and plots behind the `semcom` CLI

pub mod autograd;
pub mod baselines;
pub mod channel;
pub mod codec;
pub mod corpus;
mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
