//! Post-hoc out-of-domain detection on classifier embeddings.
//!
//! The crate is `no_std` (with `alloc`) and covers dense numerics, a seeded
//! PRNG, linear probes and small MLPs with hand-written gradients, seven
//! inlier-score detectors, Weibull tail fitting, hyperspherical prototype
//! training of a projection head, and AUROC / ACC@TPR reporting. File
//! formats and the command line live in the `ood-forge` crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cider;
pub mod dataset;
pub mod detectors;
mod error;
pub mod eval;
pub mod evt;
mod math;
pub mod nnet;
pub mod numerics;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
