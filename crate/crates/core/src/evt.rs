//! Two-parameter Weibull fitting on distance tails.
//!
//! The tail is shifted so its smallest value sits just above zero, then the
//! shape `k` solves the profile-likelihood score equation
//!
//! ```text
//! g(k) = Σ dᵢᵏ ln dᵢ / Σ dᵢᵏ − 1/k − (1/η) Σ ln dᵢ = 0
//! ```
//!
//! and the scale follows as `λ = (Σ dᵢᵏ / η)^(1/k)`. `g` is strictly
//! increasing in `k`, so a bracketed Newton iteration with bisection
//! fallback finds the unique root.

use alloc::format;
use alloc::vec::Vec;

use crate::math::{exp, expm1, log, pow};
use crate::{Error, Result};

pub const SHAPE_BRACKET: (f64, f64) = (1e-3, 1e3);
pub const SCORE_TOL: f64 = 1e-10;
const MAX_ITER: usize = 500;
/// Fraction of the tail range kept below the smallest tail value.
const SHIFT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullModel {
    pub shape: f64,
    pub scale: f64,
    /// Location subtracted from inputs before the CDF is evaluated.
    pub shift: f64,
}

impl WeibullModel {
    pub fn new(shape: f64, scale: f64, shift: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite())
            || !shift.is_finite()
        {
            return Err(Error::invalid("Weibull shape and scale must be finite and positive"));
        }
        Ok(Self { shape, scale, shift })
    }

    /// `1 − exp(−((d − shift)/λ)ᵏ)` above the shift, 0 at or below it.
    ///
    /// The result is capped at the largest double below 1, so the range is
    /// `[0, 1)` even where the exact value rounds up.
    pub fn cdf(&self, d: f64) -> f64 {
        if !(d > self.shift) {
            return 0.0;
        }
        let z = pow((d - self.shift) / self.scale, self.shape);
        (-expm1(-z)).min(1.0 - f64::EPSILON / 2.0)
    }
}

pub fn weibull_cdf(model: &WeibullModel, d: f64) -> f64 {
    model.cdf(d)
}

struct ScoreEquation {
    logs: Vec<f64>,
    max_log: f64,
    mean_log: f64,
}

impl ScoreEquation {
    fn new(values: &[f64]) -> Self {
        let logs: Vec<f64> = values.iter().map(|&v| log(v)).collect();
        let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean_log = logs.iter().sum::<f64>() / logs.len() as f64;
        Self {
            logs,
            max_log,
            mean_log,
        }
    }

    /// Returns `(g(k), g'(k), ln Σ dᵢᵏ)` using weights rescaled by `max dᵢᵏ`.
    fn eval(&self, k: f64) -> (f64, f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &self.logs {
            let w = exp(k * (l - self.max_log));
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let m1 = s1 / s0;
        let m2 = s2 / s0;
        let g = m1 - 1.0 / k - self.mean_log;
        let dg = (m2 - m1 * m1).max(0.0) + 1.0 / (k * k);
        (g, dg, k * self.max_log + log(s0))
    }
}

/// Fits a Weibull model to the `tail` largest `distances`.
pub fn fit_weibull_tail(distances: &[f64], tail: usize) -> Result<WeibullModel> {
    if tail < 2 {
        return Err(Error::invalid("Weibull tail size must be at least 2"));
    }
    if distances.len() < tail {
        return Err(Error::InsufficientSamples {
            class: 0,
            found: distances.len(),
            required: tail,
        });
    }
    crate::numerics::ensure_finite(distances)?;

    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.truncate(tail);
    let hi = sorted[0];
    let lo = sorted[tail - 1];
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::DegenerateTail);
    }
    let shift = lo - SHIFT_MARGIN * range;
    let shifted: Vec<f64> = sorted.iter().map(|&d| d - shift).collect();
    if shifted.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::DegenerateTail);
    }

    let eq = ScoreEquation::new(&shifted);
    let (mut a, mut b) = SHAPE_BRACKET;
    let (ga, _, _) = eq.eval(a);
    let (gb, _, _) = eq.eval(b);
    if ga > 0.0 || gb < 0.0 {
        return Err(Error::NoConvergence(format!(
            "score equation has no sign change on [{a}, {b}] (g = {ga:.3e}, {gb:.3e})"
        )));
    }

    // Start from the exponential case, clipped into the bracket.
    let mut k = 1.0f64.clamp(a, b);
    for _ in 0..MAX_ITER {
        let (g, dg, log_s0) = eq.eval(k);
        if g.abs() < SCORE_TOL {
            let n = shifted.len() as f64;
            let scale = exp((log_s0 - log(n)) / k);
            return WeibullModel::new(k, scale, shift);
        }
        if g < 0.0 {
            a = k;
        } else {
            b = k;
        }
        let newton = k - g / dg;
        k = if newton > a && newton < b && newton.is_finite() {
            newton
        } else {
            0.5 * (a + b)
        };
        if b - a <= f64::EPSILON * b {
            break;
        }
    }
    let (g, _, _) = eq.eval(k);
    Err(Error::NoConvergence(format!(
        "shape iteration stalled at k = {k} with |g| = {:.3e}",
        g.abs()
    )))
}
