//! Property checks over seeded random inputs, driven by proptest.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestError, TestRng, TestRunner};

use ood_forge_core::cider::{cider_train_observed, CiderConfig};
use ood_forge_core::dataset::{generate_synthetic, SyntheticSpec};
use ood_forge_core::detectors::{
    fit_mahalanobis, fit_openmax, score_energy, score_maxsoftmax, RankWeight,
};
use ood_forge_core::numerics::{softmax, Matrix};
use ood_forge_core::rng::Rng;

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), TestCaseError> {
    if (a - b).abs() <= tol {
        Ok(())
    } else {
        Err(TestCaseError::fail(format!("{what}: {a} vs {b} (tol {tol})")))
    }
}

pub fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-60.0..60.0f64, 2..12)
}

pub fn softmax_normalized(v: &[f64]) -> Result<(), TestCaseError> {
    let p = softmax(v).unwrap();
    prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    close(p.iter().sum(), 1.0, 1e-12, "softmax sum")
}

/// `E(v + c) = E(v) + c` for the `T·logsumexp(v/T)` score.
pub fn energy_shift(v: &[f64], c: f64, t: f64) -> Result<(), TestCaseError> {
    let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
    let a = score_energy(&shifted, t).unwrap();
    let b = score_energy(v, t).unwrap() + c;
    close(a, b, 1e-9 * (1.0 + a.abs()), "energy shift")
}

pub fn maxsoftmax_shift(v: &[f64], c: f64) -> Result<(), TestCaseError> {
    let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
    close(
        score_maxsoftmax(&shifted).unwrap(),
        score_maxsoftmax(v).unwrap(),
        1e-12,
        "max-softmax shift",
    )
}

/// Scores are non-positive everywhere and exactly zero at every class mean.
pub fn mahalanobis(seed: u64) -> Result<(), TestCaseError> {
    let mut rng = Rng::seed_from_u64(seed);
    let (c, d, per) = (2 + rng.below(3), 1 + rng.below(5), 2 + rng.below(8));
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for class in 0..c {
        let offset = rng.gaussian_vec(d);
        for _ in 0..per {
            rows.push(
                offset
                    .iter()
                    .map(|o| 3.0 * o + rng.gaussian())
                    .collect::<Vec<_>>(),
            );
            labels.push(class);
        }
    }
    let st = fit_mahalanobis(&Matrix::from_rows(&rows).unwrap(), &labels).unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = rng.gaussian_vec(d).iter().map(|v| 5.0 * v).collect();
        prop_assert!(st.score(&x).unwrap() <= 0.0);
    }
    for mean in st.class_means.iter_rows() {
        prop_assert_eq!(st.score(mean).unwrap(), 0.0);
    }
    Ok(())
}

/// Revision moves activation mass without creating any, and the C + 1
/// probabilities sum to one.
pub fn openmax(seed: u64) -> Result<(), TestCaseError> {
    let mut rng = Rng::seed_from_u64(seed);
    let c = 2 + rng.below(4);
    let per = 30;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for class in 0..c {
        for _ in 0..per {
            let mut v = rng.gaussian_vec(c);
            v[class] += 4.0;
            rows.push(v);
            labels.push(class);
        }
    }
    let tail = 2 + rng.below(15);
    let alpha = 1 + rng.below(c);
    let weight = if rng.below(2) == 0 {
        RankWeight::Inclusive
    } else {
        RankWeight::Exclusive
    };
    let st = match fit_openmax(&Matrix::from_rows(&rows).unwrap(), &labels, tail, alpha, weight) {
        Ok(st) => st,
        Err(e) => return Err(TestCaseError::reject(e.to_string())),
    };
    for _ in 0..20 {
        let v: Vec<f64> = rng.gaussian_vec(c).iter().map(|x| 6.0 * x).collect();
        let r = st.revise(&v).unwrap();
        prop_assert_eq!(r.activations.len(), c + 1);
        let before: f64 = v.iter().sum();
        let after: f64 = r.activations.iter().sum();
        close(after, before, 1e-9 * (1.0 + before.abs()), "activation mass")?;
        close(r.probabilities.iter().sum(), 1.0, 1e-12, "probability sum")?;
    }
    Ok(())
}

/// Every projection and prototype stays on the unit sphere at every step,
/// and each logged dispersion is at least `−1/τ`.
pub fn cider_steps(seed: u64) -> Result<(), TestCaseError> {
    let mut rng = Rng::seed_from_u64(seed);
    let data = generate_synthetic(&SyntheticSpec {
        classes: 2 + rng.below(3),
        dim: 6,
        per_class: 10 + rng.below(20),
        noise_sigma: rng.uniform(0.05, 0.5),
        ood_shift: 1.0,
        seed,
    })
    .unwrap()
    .id_train;
    let cfg = CiderConfig {
        hidden: Some(16),
        projection_dim: 2 + rng.below(10),
        temperature: rng.uniform(0.05, 1.0),
        prototype_momentum: rng.uniform(0.0, 1.0),
        compactness_weight: rng.uniform(0.0, 2.0),
        epochs: 3,
        batch_size: 1 + rng.below(32),
        learning_rate: rng.uniform(0.005, 0.2),
        seed,
        adapter: rng.below(2) == 0,
    };
    let mut failure = None;
    cider_train_observed(&data, &cfg, |s| {
        if failure.is_some() {
            return;
        }
        if s.projection_norm_error > 1e-9 || s.prototype_norm_error > 1e-9 {
            failure = Some(format!("step {}: norm errors {:?}", s.step, s));
        } else if s.dispersion < -1.0 / cfg.temperature - 1e-12 {
            failure = Some(format!("step {}: dispersion {}", s.step, s.dispersion));
        } else if !(s.compactness > 0.0) {
            failure = Some(format!("step {}: compactness {}", s.step, s.compactness));
        }
    })
    .map_err(|e| TestCaseError::fail(e.to_string()))?;
    match failure {
        Some(msg) => Err(TestCaseError::fail(msg)),
        None => Ok(()),
    }
}

/// Runner with a fixed ChaCha stream so every run sees the same inputs.
pub fn seeded_runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

/// Runs every invariant and returns `(name, outcome)` pairs.
pub fn run_all(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    fn report<T: std::fmt::Debug>(r: Result<(), TestError<T>>) -> Result<(), String> {
        r.map_err(|e| e.to_string())
    }
    vec![
        (
            "softmax normalization",
            report(seeded_runner(cases).run(&logits(), |v| softmax_normalized(&v))),
        ),
        (
            "energy shift-equivariance",
            report(seeded_runner(cases).run(
                &(logits(), -100.0..100.0f64, 0.05..50.0f64),
                |(v, c, t)| energy_shift(&v, c, t),
            )),
        ),
        (
            "max-softmax shift-invariance",
            report(
                seeded_runner(cases).run(&(logits(), -100.0..100.0f64), |(v, c)| {
                    maxsoftmax_shift(&v, c)
                }),
            ),
        ),
        (
            "Mahalanobis non-positive, zero at class means",
            report(seeded_runner(cases).run(&any::<u64>(), mahalanobis)),
        ),
        (
            "OpenMax mass conservation and C+1 normalization",
            report(seeded_runner(cases).run(&any::<u64>(), openmax)),
        ),
        (
            "unit-norm projections and prototypes at every CIDER step",
            report(seeded_runner(cases.min(32)).run(&any::<u64>(), cider_steps)),
        ),
    ]
}
