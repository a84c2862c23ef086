//! Graph-regularized distributed multi-task learning on a simulated network
//! of machines.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod data;
pub mod delay;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod objective;
pub mod stochastic;
pub mod synthdata;
pub mod trace;
pub mod verification;

pub use error::{Error, Result};
