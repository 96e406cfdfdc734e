//! Distance from a posterior to typical per-class posteriors.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::log;
use crate::numerics::{argmax, check_len, Matrix};
use crate::{Error, Result};

/// Floor applied to every probability before renormalization.
pub const CLAMP: f64 = 1e-10;
const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlMode {
    /// One typical posterior per predicted class.
    #[default]
    PerClass,
    /// A single mean posterior over the whole validation set.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlMatchingState {
    /// One typical posterior per row.
    pub typical: Matrix,
}

fn clamp_normalize(p: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = p.iter().map(|&v| v.max(CLAMP)).collect();
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
    q
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL || p.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("posterior must be a probability vector"));
    }
    Ok(())
}

/// Groups validation posteriors by their argmax and averages each group.
/// Classes no row predicts fall back to the global mean posterior.
pub fn fit_klmatching(posteriors: &Matrix, mode: KlMode) -> Result<KlMatchingState> {
    if posteriors.rows() == 0 {
        return Err(Error::Empty);
    }
    let c = posteriors.cols();
    let mut global = vec![0.0; c];
    let mut sums = Matrix::zeros(c, c);
    let mut counts = vec![0usize; c];
    for row in posteriors.iter_rows() {
        check_distribution(row)?;
        let k = argmax(row).ok_or(Error::Empty)?;
        counts[k] += 1;
        for j in 0..c {
            global[j] += row[j];
            sums[(k, j)] += row[j];
        }
    }
    let n = posteriors.rows() as f64;
    global.iter_mut().for_each(|v| *v /= n);
    let global = clamp_normalize(&global);

    let typical = match mode {
        KlMode::Global => Matrix::from_rows(&[global])?,
        KlMode::PerClass => {
            let rows: Vec<Vec<f64>> = (0..c)
                .map(|k| {
                    if counts[k] == 0 {
                        global.clone()
                    } else {
                        let mean: Vec<f64> =
                            sums.row(k).iter().map(|v| v / counts[k] as f64).collect();
                        clamp_normalize(&mean)
                    }
                })
                .collect();
            Matrix::from_rows(&rows)?
        }
    };
    Ok(KlMatchingState { typical })
}

/// `Σ pᵢ ln(pᵢ/qᵢ)` after clamping both sides.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let p = clamp_normalize(p);
    let q = clamp_normalize(q);
    p.iter().zip(&q).map(|(a, b)| a * log(a / b)).sum()
}

impl KlMatchingState {
    pub fn classes(&self) -> usize {
        self.typical.cols()
    }

    /// `−min_k KL(posterior ‖ d_k)`, never positive.
    pub fn score(&self, posterior: &[f64]) -> Result<f64> {
        check_len(self.classes(), posterior.len())?;
        check_distribution(posterior)?;
        let best = self
            .typical
            .iter_rows()
            .map(|d| kl_divergence(posterior, d).max(0.0))
            .fold(f64::INFINITY, f64::min);
        Ok(-best)
    }
}

pub fn score_klmatching(state: &KlMatchingState, posterior: &[f64]) -> Result<f64> {
    state.score(posterior)
}
