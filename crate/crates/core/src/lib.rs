//! Asynchronous zeroth-order distributed optimization.
//!
//! Agents own blocks of a joint decision vector and can only query the value
//! of a shared black-box objective. At each step one randomly activated agent
//! perturbs its own block, queries the objective once, and forms a
//! residual-feedback gradient estimate by differencing against its own
//! previous query. The crate also carries the baseline estimators, a
//! feature-learning benchmark, verification instruments and an experiment
//! runner.

// `!(x <= bound)` is deliberate throughout: NaN must fail every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod block;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod objectives;
pub mod rng;
pub mod scheduler;
pub mod verify;

pub use block::{axpy_block, sample_block_gaussian, sample_categorical, BlockLayout, BlockVector, PerturbationDirection};
pub use error::{Error, Result};
pub use rng::{RngStream, StreamRole};
