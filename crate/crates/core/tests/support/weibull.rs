//! Seeded Weibull samples and the two tail-fit checks.

use ood_forge_core::evt::{fit_weibull_tail, WeibullModel};
use ood_forge_core::rng::Rng;

/// Inverse-CDF draws from Weibull(`shape`, `scale`).
pub fn sample(seed: u64, n: usize, shape: f64, scale: f64) -> Vec<f64> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| scale * (-(1.0 - rng.next_f64()).ln()).powf(1.0 / shape))
        .collect()
}

/// Fit on 10⁴ draws from Weibull(2, 1), every sample in the tail.
pub fn recovery() -> WeibullModel {
    let xs = sample(2024, 10_000, 2.0, 1.0);
    fit_weibull_tail(&xs, xs.len()).expect("well-posed tail")
}

pub fn recovery_ok(m: &WeibullModel) -> bool {
    (1.94..=2.06).contains(&m.shape) && (0.98..=1.02).contains(&m.scale)
}

pub const SCALES: [f64; 4] = [1e-3, 0.5, 7.0, 1e4];

/// Largest relative deviation of `(k, λ, shift)` from `(k, aλ, a·shift)`
/// over [`SCALES`].
pub fn equivariance_error() -> f64 {
    let xs = sample(31, 2_000, 2.0, 1.0);
    let base = fit_weibull_tail(&xs, 200).expect("well-posed tail");
    SCALES
        .iter()
        .map(|&a| {
            let scaled: Vec<f64> = xs.iter().map(|x| a * x).collect();
            let m = fit_weibull_tail(&scaled, 200).expect("well-posed tail");
            [
                m.shape / base.shape,
                m.scale / (a * base.scale),
                m.shift / (a * base.shift),
            ]
            .iter()
            .map(|r| (r - 1.0).abs())
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}
