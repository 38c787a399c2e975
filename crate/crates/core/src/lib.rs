//! Joint channel estimation and prediction for beyond-diagonal RIS (BD-RIS)
//! assisted multi-user MIMO links under channel aging.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aging;
pub mod bdris;
pub mod beamforming;
pub mod channel;
pub mod cnn;
pub mod error;
pub mod experiments;
pub mod io;
pub mod ls;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod tucker2;

pub use error::{Error, Result};
