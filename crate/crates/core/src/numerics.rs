//! Dense linear algebra and stable special functions.
//!
//! Everything runs in `f64`. Vectors are plain slices; [`Matrix`] is a
//! row-major buffer whose constructors reject non-finite entries.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::math::{ceil, exp, log, sqrt};
use crate::{Error, Result};

/// Relative tolerance for the symmetry check in [`cholesky`].
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        ensure_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, x.len())?;
        Ok(self.iter_rows().map(|r| dot(r, x)).collect())
    }

    /// `selfᵀ · y`.
    pub fn mul_vec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &yi) in self.iter_rows().zip(y) {
            axpy(yi, r, &mut out);
        }
        Ok(out)
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        check_len(self.cols, rhs.rows)?;
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                axpy(a, rhs.row(k), out.row_mut(i));
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub fn ensure_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    sqrt(dot(v, v))
}

/// `y += alpha · x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Index of the first maximal element.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// `ln Σ exp(v_i)` with a max shift, so no finite input overflows.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    let max = v
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        return Err(Error::Empty);
    }
    if !max.is_finite() {
        return Err(Error::NonFinite);
    }
    let sum: f64 = v.iter().map(|x| exp(x - max)).sum();
    Ok(max + log(sum))
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    let lse = logsumexp(v)?;
    let mut p: Vec<f64> = v.iter().map(|x| exp(x - lse)).collect();
    // Renormalize away the rounding left by exp(x - lse).
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(v)?;
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Lower-triangular `L` with `L·Lᵀ = A`.
///
/// Inputs that are symmetric within [`SYMMETRY_TOL`] (relative) are
/// symmetrized as `(A + Aᵀ)/2` first; anything further off is rejected.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    check_len(n, a.cols())?;
    let mut sym = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (x, y) = (a[(i, j)], a[(j, i)]);
            let scale = 1.0f64.max(x.abs()).max(y.abs());
            if (x - y).abs() > SYMMETRY_TOL * scale {
                return Err(Error::NotSymmetric);
            }
            let s = 0.5 * (x + y);
            sym[(i, j)] = s;
            sym[(j, i)] = s;
        }
    }

    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = sym[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = sqrt(diag);
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = sym[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L·y = b` for lower-triangular `L`.
pub fn forward_substitute(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows();
    check_len(n, l.cols())?;
    check_len(n, b.len())?;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let row = l.row(i);
        let s = b[i] - dot(&row[..i], &y[..i]);
        y[i] = s / row[i];
    }
    Ok(y)
}

/// Solves `Lᵀ·x = y` for lower-triangular `L`.
pub fn back_substitute_transposed(l: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows();
    check_len(n, l.cols())?;
    check_len(n, y.len())?;
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

/// Solves `(L·Lᵀ)·x = b` given the Cholesky factor `L`.
pub fn solve_spd(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let y = forward_substitute(l, b)?;
    back_substitute_transposed(l, &y)
}

/// Nearest-rank percentile: the ascending order statistic at
/// `ceil(q·n) − 1`, clamped into range.
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidFraction(q));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ceil(q * n as f64) as i64 - 1;
    let idx = rank.clamp(0, n as i64 - 1) as usize;
    Ok(sorted[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn logsumexp_cases() {
        assert!(close(logsumexp(&[0.0, 0.0]).unwrap(), core::f64::consts::LN_2, 1e-15));
        assert_eq!(
            logsumexp(&[1000.0, 1000.0]).unwrap(),
            1000.0 + core::f64::consts::LN_2
        );
        // 50-digit reference value.
        #[allow(clippy::excessive_precision)]
        let reference = 2.805_224_384_654_116_859_467_455_196_237_549_463_5;
        assert!(close(logsumexp(&[0.3, -1.2, 2.7]).unwrap(), reference, 1e-14));
        assert_eq!(logsumexp(&[]), Err(Error::Empty));
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&[0.0; 4]).unwrap();
        assert!(p.iter().all(|&x| close(x, 0.25, 1e-15)));
        let p = softmax(&[core::f64::consts::LN_2, 0.0, 0.0]).unwrap();
        assert!(close(p[0], 0.5, 1e-15) && close(p[1], 0.25, 1e-15));
        let a = softmax(&[5.0, 8.0, 2.0]).unwrap();
        let b = softmax(&[0.0, 3.0, -3.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(close(*x, *y, 1e-15));
        }
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector));
    }

    #[test]
    fn cholesky_cases() {
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 5.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l, Matrix::from_rows(&[[2.0, 0.0], [1.0, 2.0]]).unwrap());
        let bad = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert_eq!(cholesky(&bad), Err(Error::NotPositiveDefinite { pivot: 1 }));
        let asym = Matrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]).unwrap();
        assert_eq!(cholesky(&asym), Err(Error::NotSymmetric));
    }

    #[test]
    fn solve_cases() {
        let b = [1.5, -2.0, 0.25];
        assert_eq!(solve_spd(&Matrix::identity(3), &b).unwrap(), b.to_vec());

        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 5.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        let x = solve_spd(&l, &[2.0, 7.0]).unwrap();
        let ax = a.mul_vec(&x).unwrap();
        assert!(close(ax[0], 2.0, 1e-12) && close(ax[1], 7.0, 1e-12));

        assert!(matches!(
            solve_spd(&l, &[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn percentile_cases() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&v, 0.05).unwrap(), 5.0);
        assert_eq!(percentile_nearest_rank(&[7.0], 0.0).unwrap(), 7.0);
        assert_eq!(percentile_nearest_rank(&[7.0], 1.0).unwrap(), 7.0);
        assert_eq!(percentile_nearest_rank(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
        assert_eq!(percentile_nearest_rank(&[], 0.5), Err(Error::Empty));
        assert_eq!(
            percentile_nearest_rank(&[1.0], 1.5),
            Err(Error::InvalidFraction(1.5))
        );
    }

    #[test]
    fn matrix_rejects_non_finite() {
        assert_eq!(Matrix::new(1, 2, vec![1.0, f64::NAN]), Err(Error::NonFinite));
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn argmax_takes_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }
}
