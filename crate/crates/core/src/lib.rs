//! Prototype-guided Sinkhorn distributionally robust optimization.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkit`]: dense matrices, Cholesky with ridge repair, Gaussian sampling,
//!   rotations, log-space reductions and seeded random streams.
//! - [`sinkhorn`]: log-domain entropic optimal transport and the soft-min
//!   sample-to-class cost.
//! - [`priors`]: class statistics, hierarchical OT mixture weights and the
//!   atomized class-adaptive Gaussian-mixture priors.
//! - [`dro`]: Gibbs tilting, the one-dimensional Sinkhorn-DRO dual, robust
//!   logits, the decision rule and envelope gradients.
//! - [`models`]: linear heads and every training objective (robust
//!   classifier/regressor and the ERM, OT, SAA and W-DRO baselines).
//! - [`synthgen`]: the synthetic source/target shift benchmark.
//! - [`bench`]: metrics, experiment drivers, configuration and the CLI.
//!
//! With the default `parallel` feature, batch-level work runs on rayon. All
//! reductions happen in a fixed order so results do not depend on the
//! thread count.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod dro;
mod error;
pub mod models;
pub mod numkit;
mod par;
pub mod priors;
pub mod sinkhorn;
pub mod synthgen;

pub use error::{Error, Result};
