//! File formats, configuration and command-line stages around
//! [`ood_forge_core`].
//!
//! * [`emb`]: EMB1 embedding files.
//! * [`checkpoint`]: tensor containers for models and fitted detectors.
//! * [`config`]: the JSON run configuration.
//! * [`stages`] and [`run`]: the pipeline split into resumable steps, and
//!   the whole pipeline in one call.

pub mod checkpoint;
pub mod config;
pub mod emb;
mod error;
pub mod fsutil;
pub mod run;
pub mod stages;

pub use error::{Error, Result};
