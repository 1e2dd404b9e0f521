//! Random feature regression under gradient flow: exact spectral
//! trajectories, generalization bounds, the ReLU kernel spectrum and
//! Marchenko–Pastur analysis of the Gram matrix.
// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod experiment;
pub mod features;
pub mod idx;
pub mod kernel;
pub mod output;
pub mod quadrature;
pub mod rmt;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
