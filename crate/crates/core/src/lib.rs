//! Copula-factorized imitation learning for multi-agent continuous control.
//!
//! The joint action density is split per Sklar's theorem into independent
//! per-agent marginals (Gaussian mixtures with state-conditioned means) and
//! a copula over the probability-integral transforms of the actions. The
//! two parts train separately and recombine at inference, so marginals and
//! dependence structure can be swapped across trained policies.

pub mod copula;
pub mod data;
pub mod envs;
pub mod eval;
pub mod error;
pub mod marginal;
pub mod policy;
pub mod ser;
pub mod math;
pub mod mixture;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
