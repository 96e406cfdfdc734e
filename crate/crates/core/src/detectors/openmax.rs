//! Activation revision with per-class Weibull tails over logit-space
//! distances to each class's mean activation vector.

use alloc::vec;
use alloc::vec::Vec;

use crate::evt::{fit_weibull_tail, WeibullModel};
use crate::numerics::{argmax, check_len, norm, softmax, Matrix};
use crate::{Error, Result};

/// How the `i`-th ranked class (1-based) is weighted among the top `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankWeight {
    /// `(α − i + 1)/α`: with `α = 1` the top class is fully revised.
    #[default]
    Inclusive,
    /// `(α − i)/α`: with `α = 1` nothing is revised.
    Exclusive,
}

impl RankWeight {
    fn weight(self, alpha: usize, rank: usize) -> f64 {
        let a = alpha as f64;
        let i = rank as f64;
        match self {
            RankWeight::Inclusive => (a - i + 1.0) / a,
            RankWeight::Exclusive => (a - i) / a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenMaxState {
    /// Mean activation vector of each class, one row per class.
    pub mavs: Matrix,
    pub weibulls: Vec<WeibullModel>,
    pub alpha: usize,
    pub tail: usize,
    pub rank_weight: RankWeight,
}

/// Revised activations `[v̂₀, v̂₁ … v̂_C]`, the unknown class first.
#[derive(Debug, Clone, PartialEq)]
pub struct Revision {
    pub activations: Vec<f64>,
    pub probabilities: Vec<f64>,
}

pub fn fit_openmax(
    train_logits: &Matrix,
    labels: &[usize],
    tail: usize,
    alpha: usize,
    rank_weight: RankWeight,
) -> Result<OpenMaxState> {
    check_len(train_logits.rows(), labels.len())?;
    let c = train_logits.cols();
    if alpha < 1 || alpha > c {
        return Err(Error::invalid("OpenMax alpha must lie in [1, C]"));
    }
    if tail < 2 {
        return Err(Error::invalid("OpenMax tail size must be at least 2"));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, (v, &y)) in train_logits.iter_rows().zip(labels).enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        if argmax(v) == Some(y) {
            members[y].push(i);
        }
    }

    let mut mavs = Matrix::zeros(c, c);
    let mut weibulls = Vec::with_capacity(c);
    for (class, idx) in members.iter().enumerate() {
        if idx.len() < tail {
            return Err(Error::InsufficientSamples {
                class,
                found: idx.len(),
                required: tail,
            });
        }
        let mav = mavs.row_mut(class);
        for &i in idx {
            mav.iter_mut()
                .zip(train_logits.row(i))
                .for_each(|(m, v)| *m += v);
        }
        mav.iter_mut().for_each(|m| *m /= idx.len() as f64);
        let mav = mavs.row(class);
        let distances: Vec<f64> = idx
            .iter()
            .map(|&i| euclidean(train_logits.row(i), mav))
            .collect();
        weibulls.push(fit_weibull_tail(&distances, tail)?);
    }
    Ok(OpenMaxState {
        mavs,
        weibulls,
        alpha,
        tail,
        rank_weight,
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

impl OpenMaxState {
    pub fn classes(&self) -> usize {
        self.mavs.rows()
    }

    pub fn revise(&self, v: &[f64]) -> Result<Revision> {
        check_len(self.classes(), v.len())?;
        let mut ranked: Vec<usize> = (0..v.len()).collect();
        // Stable sort keeps lower class indices first on ties.
        ranked.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
        let mut omega = vec![1.0; v.len()];
        for (pos, &class) in ranked.iter().take(self.alpha).enumerate() {
            let cdf = self.weibulls[class].cdf(euclidean(v, self.mavs.row(class)));
            omega[class] = 1.0 - self.rank_weight.weight(self.alpha, pos + 1) * cdf;
        }
        let mut activations = Vec::with_capacity(v.len() + 1);
        let unknown: f64 = v.iter().zip(&omega).map(|(x, w)| x * (1.0 - w)).sum();
        activations.push(unknown);
        activations.extend(v.iter().zip(&omega).map(|(x, w)| x * w));
        let probabilities = softmax(&activations)?;
        Ok(Revision {
            activations,
            probabilities,
        })
    }

    /// Largest revised probability among the known classes.
    pub fn score(&self, v: &[f64]) -> Result<f64> {
        let r = self.revise(v)?;
        Ok(r.probabilities[1..].iter().copied().fold(0.0, f64::max))
    }
}

pub fn score_openmax(state: &OpenMaxState, logits: &[f64]) -> Result<f64> {
    state.score(logits)
}
