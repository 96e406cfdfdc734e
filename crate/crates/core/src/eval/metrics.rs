use alloc::string::String;
use alloc::vec::Vec;

use crate::detectors::{classify_ood, Threshold, Verdict};
use crate::numerics::ensure_finite;
use crate::{Error, Result};

/// Inlier scores of one detector on one (ID test, OOD) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset {
    id_scores: Vec<f64>,
    ood_scores: Vec<f64>,
    pub detector: String,
    pub dataset: String,
    pub condition: String,
}

impl ScoredDataset {
    pub fn new(
        id_scores: Vec<f64>,
        ood_scores: Vec<f64>,
        detector: impl Into<String>,
        dataset: impl Into<String>,
        condition: impl Into<String>,
    ) -> Result<Self> {
        if id_scores.is_empty() || ood_scores.is_empty() {
            return Err(Error::Empty);
        }
        ensure_finite(&id_scores)?;
        ensure_finite(&ood_scores)?;
        Ok(Self {
            id_scores,
            ood_scores,
            detector: detector.into(),
            dataset: dataset.into(),
            condition: condition.into(),
        })
    }

    /// Scores without labels, for metric-only use.
    pub fn from_scores(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        Self::new(id_scores, ood_scores, "", "", "")
    }

    pub fn id_scores(&self) -> &[f64] {
        &self.id_scores
    }

    pub fn ood_scores(&self) -> &[f64] {
        &self.ood_scores
    }

    /// Same scores with the ID and OOD roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            id_scores: self.ood_scores.clone(),
            ood_scores: self.id_scores.clone(),
            ..self.clone()
        }
    }
}

/// Mann–Whitney statistic kept in integers: `twice_u = 2·#[id > ood] + #[id = ood]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MannWhitney {
    pub twice_u: u64,
    pub pairs: u64,
}

impl MannWhitney {
    pub fn auroc(self) -> f64 {
        self.twice_u as f64 / (2 * self.pairs) as f64
    }
}

/// Midrank computation of the Mann–Whitney statistic with ID as the
/// positive class, in `O(n log n)`.
pub fn mann_whitney(s: &ScoredDataset) -> MannWhitney {
    let n_id = s.id_scores.len();
    let mut all: Vec<(f64, bool)> = s
        .id_scores
        .iter()
        .map(|&v| (v, true))
        .chain(s.ood_scores.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Doubled 1-based midranks stay integral: a tie group over positions
    // i..=j has midrank (i + j + 2) / 2.
    let mut twice_rank_sum = 0u64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let ids = all[i..=j].iter().filter(|e| e.1).count() as u64;
        twice_rank_sum += ids * (i + j + 2) as u64;
        i = j + 1;
    }
    let n = n_id as u64;
    MannWhitney {
        twice_u: twice_rank_sum - n * (n + 1),
        pairs: n * s.ood_scores.len() as u64,
    }
}

/// Probability that a random ID sample outscores a random OOD sample, ties
/// counting one half.
pub fn auroc(s: &ScoredDataset) -> f64 {
    mann_whitney(s).auroc()
}

/// ID/OOD accuracy at the nearest-rank threshold accepting `tpr` of the ID
/// scores. `balanced` averages the per-class rates instead of pooling counts.
pub fn acc_at_tpr(s: &ScoredDataset, tpr: f64, balanced: bool) -> Result<f64> {
    let threshold = Threshold::at_tpr(&s.id_scores, tpr)?;
    Ok(acc_at_threshold(s, threshold, balanced))
}

/// Accuracy at a fixed threshold, e.g. one calibrated on held-out data.
pub fn acc_at_threshold(s: &ScoredDataset, threshold: Threshold, balanced: bool) -> f64 {
    let id_ok = s
        .id_scores
        .iter()
        .filter(|&&v| classify_ood(v, threshold) == Verdict::InDomain)
        .count();
    let ood_ok = s
        .ood_scores
        .iter()
        .filter(|&&v| classify_ood(v, threshold) == Verdict::OutOfDomain)
        .count();
    let (n_id, n_ood) = (s.id_scores.len() as f64, s.ood_scores.len() as f64);
    if balanced {
        0.5 * (id_ok as f64 / n_id + ood_ok as f64 / n_ood)
    } else {
        (id_ok + ood_ok) as f64 / (n_id + n_ood)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec;

    fn sd(id: &[f64], ood: &[f64]) -> ScoredDataset {
        ScoredDataset::from_scores(id.to_vec(), ood.to_vec()).unwrap()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&sd(&[5.0, 6.0], &[1.0, 2.0, 3.0])), 1.0);
        assert_eq!(auroc(&sd(&[3.0, 2.0], &[1.0, 2.5])), 0.75);
        assert_eq!(auroc(&sd(&[5.0; 3], &[5.0; 3])), 0.5);
        assert_eq!(auroc(&sd(&[1.0], &[2.0])), 0.0);
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(ScoredDataset::from_scores(vec![], vec![1.0]), Err(Error::Empty));
        assert_eq!(
            ScoredDataset::from_scores(vec![f64::NAN], vec![1.0]),
            Err(Error::NonFinite)
        );
        assert!(acc_at_tpr(&sd(&[1.0], &[0.0]), 1.5, false).is_err());
    }

    #[test]
    fn acc_examples() {
        let s = sd(&[1.0; 10], &[0.0; 7]);
        assert_eq!(acc_at_tpr(&s, 0.95, false).unwrap(), 1.0);
        let s = sd(&[0.3, 0.1, 0.7, 0.5], &[0.2, 0.05]);
        // tpr = 1 uses the minimum ID score.
        let acc = acc_at_tpr(&s, 1.0, false).unwrap();
        assert_eq!(acc, 5.0 / 6.0);
    }

    #[test]
    fn acc_identical_distributions() {
        let mut rng = Rng::seed_from_u64(99);
        let n = 10_000;
        let id: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let ood: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let s = sd(&id, &ood);
        let acc = acc_at_tpr(&s, 0.95, false).unwrap();
        let expected = (0.95 * n as f64 + 0.05 * n as f64) / (2 * n) as f64;
        assert!((acc - expected).abs() < 0.03, "{acc}");
        let bal = acc_at_tpr(&s, 0.95, true).unwrap();
        assert!((bal - 0.5).abs() < 0.03, "{bal}");
    }
}
