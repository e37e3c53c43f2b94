//! Fork/merge training for auxiliary-task learning.
//!
//! The crate is `no_std` (with `alloc`): everything here is pure computation
//! over flat parameter vectors. File formats, threading and the command line
//! live in the `forkmerge-lab` companion crate.
//!
//! Module map:
//! - [`numeric`]: [`ParamVector`] arithmetic and the counter-based [`RngStream`].
//! - [`nn`]: a shared-encoder, multi-head dense network with analytic gradients.
//! - [`optim`]: task weightings, weighted gradients, SGD with momentum.
//! - [`tasks`]: synthetic task families and the interpolated-distribution sampler.
//! - [`metrics`]: transfer gain, gradient cosine similarity, confidence
//!   discrepancy, `Δ_m`, and the one-step / CSD analysis sweeps.
//! - [`forkmerge`]: branch training, merge-coefficient search and the
//!   fork/merge scheduler.
//! - [`baselines`]: STL, equal weighting, fixed-λ sweep, GCS weighting, post-train.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod error;
pub mod forkmerge;
pub mod metrics;
pub mod nn;
pub mod numeric;
pub mod optim;
pub mod tasks;

pub use error::{Error, Result};
pub use numeric::{dot, linear_combination, ParamVector, RngStream};
pub use tasks::TaskId;
