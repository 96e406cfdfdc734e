//! Brute-force AUROC and random score instances with ties.

use ood_forge_core::eval::{auroc, mann_whitney, ScoredDataset};
use ood_forge_core::rng::Rng;

/// `(2·#[id > ood] + #[id = ood], 2·n_id·n_ood)` by enumerating all pairs.
pub fn pairwise_twice_u(id: &[f64], ood: &[f64]) -> (u64, u64) {
    let mut twice_u = 0u64;
    for a in id {
        for b in ood {
            if a > b {
                twice_u += 2;
            } else if a == b {
                twice_u += 1;
            }
        }
    }
    (twice_u, 2 * (id.len() * ood.len()) as u64)
}

pub fn pairwise_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let (num, den) = pairwise_twice_u(id, ood);
    num as f64 / den as f64
}

/// Scores on a coarse grid so that ties are common.
pub fn random_instance(seed: u64, max_n: usize) -> ScoredDataset {
    let mut rng = Rng::seed_from_u64(seed);
    let n_id = 1 + rng.below(max_n);
    let n_ood = 1 + rng.below(max_n);
    let levels = 1 + rng.below(12) as i64;
    let shift = rng.uniform(-2.0, 2.0);
    let mut draw = |offset: f64| (rng.below(levels as usize) as f64 + offset).round();
    let id: Vec<f64> = (0..n_id).map(|_| draw(shift.max(0.0))).collect();
    let ood: Vec<f64> = (0..n_ood).map(|_| draw((-shift).max(0.0))).collect();
    ScoredDataset::from_scores(id, ood).unwrap()
}

/// Number of instances (out of `count`) where the rank statistic differs
/// from the pairwise count, or the resulting AUROC values are not identical.
pub fn mismatches(count: u64, max_n: usize) -> usize {
    (0..count)
        .filter(|&seed| {
            let s = random_instance(seed, max_n);
            let mw = mann_whitney(&s);
            let (num, den) = pairwise_twice_u(s.id_scores(), s.ood_scores());
            mw.twice_u != num
                || 2 * mw.pairs != den
                || auroc(&s) != pairwise_auroc(s.id_scores(), s.ood_scores())
        })
        .count()
}
