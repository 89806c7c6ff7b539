//! Wideband mmWave MIMO-OFDM channel simulation with spatial-wideband and
//! frequency-wideband effects, plus a multi-band common-sparsity variational
//! EM estimator and OMP reference estimators.
//!
//! The pipeline runs channel → received pilots → whitening → dictionaries →
//! estimator → reconstructed channel. See `examples/` for runnable tours.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod channel;
pub mod dictionary;
pub mod error;
pub mod experiment;
pub mod frontend;
pub mod linalg;
pub mod vem;

pub use error::{Error, Result};
