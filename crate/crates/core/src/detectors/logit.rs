//! Stateless scores computed straight from class logits.

use crate::numerics::{logsumexp, softmax};
use crate::{Error, Result};

/// Largest softmax probability, in `(1/C, 1]`.
pub fn score_maxsoftmax(logits: &[f64]) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::invalid("max-softmax needs at least two logits"));
    }
    Ok(softmax(logits)?.into_iter().fold(0.0, f64::max))
}

pub fn score_maxlogit(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Empty);
    }
    Ok(logits.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Negative free energy `T·logsumexp(logits/T)`; higher means more in-domain.
pub fn score_energy(logits: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("energy temperature must be positive"));
    }
    let scaled: alloc::vec::Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    Ok(temperature * logsumexp(&scaled)?)
}
