//! Class-conditional Gaussians with one shared covariance.

use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{check_len, cholesky, dot, forward_substitute, Matrix};
use crate::{Error, Result};

/// Ridge added to the pooled covariance, relative to its mean diagonal.
pub const RIDGE_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisState {
    /// One row per class.
    pub class_means: Matrix,
    /// Lower Cholesky factor of the regularized shared covariance.
    pub covariance_chol: Matrix,
}

/// Per-class means and the pooled covariance
/// `Σ = (1/N) Σ_c Σ_{i∈c} (xᵢ − μ_c)(xᵢ − μ_c)ᵀ + λ·I`, `λ = 1e−6·tr(Σ)/F_d`.
pub fn fit_mahalanobis(features: &Matrix, labels: &[usize]) -> Result<MahalanobisState> {
    check_len(features.rows(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Empty);
    }
    let d = features.cols();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    let mut means = Matrix::zeros(classes, d);
    for (x, &y) in features.iter_rows().zip(labels) {
        counts[y] += 1;
        means
            .row_mut(y)
            .iter_mut()
            .zip(x)
            .for_each(|(m, v)| *m += v);
    }
    for (class, &n) in counts.iter().enumerate() {
        if n < 2 {
            return Err(Error::InsufficientSamples {
                class,
                found: n,
                required: 2,
            });
        }
        means.row_mut(class).iter_mut().for_each(|m| *m /= n as f64);
    }

    let mut cov = Matrix::zeros(d, d);
    let mut centred = vec![0.0; d];
    for (x, &y) in features.iter_rows().zip(labels) {
        for ((c, v), m) in centred.iter_mut().zip(x).zip(means.row(y)) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centred[i];
            if ci == 0.0 {
                continue;
            }
            for j in 0..=i {
                cov[(i, j)] += ci * centred[j];
            }
        }
    }
    let n = labels.len() as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let mut ridge = RIDGE_FRACTION * cov.trace() / d as f64;
    if !(ridge > 0.0) {
        // Every class collapsed onto its mean; fall back to an absolute floor.
        ridge = RIDGE_FRACTION;
    }
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    Ok(MahalanobisState {
        class_means: means,
        covariance_chol: cholesky(&cov)?,
    })
}

impl MahalanobisState {
    pub fn dim(&self) -> usize {
        self.class_means.cols()
    }

    /// `(x − μ_c)ᵀ Σ⁻¹ (x − μ_c)` for every class.
    pub fn distances(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        self.class_means
            .iter_rows()
            .map(|mean| {
                let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
                let y = forward_substitute(&self.covariance_chol, &diff)?;
                Ok(dot(&y, &y))
            })
            .collect()
    }

    /// `−min_c (x − μ_c)ᵀ Σ⁻¹ (x − μ_c)`, never positive.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let best = self
            .distances(x)?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        Ok(-best)
    }
}

pub fn score_mahalanobis(state: &MahalanobisState, x: &[f64]) -> Result<f64> {
    state.score(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn hand_covariance() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]).unwrap();
        let st = fit_mahalanobis(&x, &[0, 0, 0, 0]).unwrap();
        assert_eq!(st.class_means.row(0), &[1.0, 1.0]);
        // Σ = I + λ·I with λ = 1e-6 · tr(I)/2.
        let expected = (1.0 + 1e-6f64).sqrt();
        let l = &st.covariance_chol;
        assert!((l[(0, 0)] - expected).abs() < 1e-15);
        assert!((l[(1, 1)] - expected).abs() < 1e-15);
        assert_eq!(l[(1, 0)], 0.0);
        assert_eq!(st.score(&[1.0, 1.0]).unwrap(), 0.0);
        let far = st.score(&[4.0, 5.0]).unwrap();
        assert!((far + 25.0 / (1.0 + 1e-6)).abs() < 1e-9);
    }

    #[test]
    fn duplicated_samples_survive_via_ridge() {
        let x = Matrix::from_rows(&[[0.3, 0.4], [0.3, 0.4], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        let st = fit_mahalanobis(&x, &[0, 0, 1, 1]).unwrap();
        assert_eq!(st.score(&[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn too_few_samples() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        assert_eq!(
            fit_mahalanobis(&x, &[0, 0, 1]),
            Err(Error::InsufficientSamples { class: 1, found: 1, required: 2 })
        );
    }

    #[test]
    fn agrees_with_adjugate_inverse() {
        let mut rng = Rng::seed_from_u64(31);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..12).map(|_| rng.gaussian_vec(3)).collect();
            let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
            let st = fit_mahalanobis(&Matrix::from_rows(&rows).unwrap(), &labels).unwrap();
            let l = &st.covariance_chol;
            let cov = l.matmul(&l.transpose()).unwrap();
            let inv = adjugate_inverse(&cov);
            let x = rng.gaussian_vec(3);
            let mut best = f64::INFINITY;
            for mean in st.class_means.iter_rows() {
                let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
                let mut q = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        q += diff[i] * inv[i][j] * diff[j];
                    }
                }
                best = best.min(q);
            }
            let got = st.score(&x).unwrap();
            assert!((got + best).abs() < 1e-8 * best.max(1.0));
        }
    }

    fn adjugate_inverse(a: &Matrix) -> [[f64; 3]; 3] {
        let m = |i: usize, j: usize| a[(i, j)];
        let cof = |i: usize, j: usize| {
            let r: Vec<usize> = (0..3).filter(|&k| k != i).collect();
            let c: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let minor = m(r[0], c[0]) * m(r[1], c[1]) - m(r[0], c[1]) * m(r[1], c[0]);
            if (i + j).is_multiple_of(2) { minor } else { -minor }
        };
        let det = m(0, 0) * cof(0, 0) + m(0, 1) * cof(0, 1) + m(0, 2) * cof(0, 2);
        let mut inv = [[0.0; 3]; 3];
        for (i, row) in inv.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = cof(j, i) / det;
            }
        }
        inv
    }
}
