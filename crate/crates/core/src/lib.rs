//! Discriminator-free adversarial domain adaptation for multi-label
//! classification.
//!
//! The classifier's own sigmoid outputs are summarized per batch by a
//! two-component univariate Gaussian mixture, estimated in a single
//! differentiable pass ([`deepem`]). The squared 2-Wasserstein distance
//! between paired source and target components ([`critic`]) is the
//! adversarial signal, wired into training through a gradient reversal
//! layer ([`autodiff`]).

pub mod autodiff;
pub mod gmm_em;
pub mod nn;
pub mod critic;
pub mod deepem;
pub mod data;
pub mod metrics;
pub mod trainer;
