//! Labeled embedding sets and the seeded synthetic hypersphere generator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::math::sqrt;
use crate::numerics::{self, axpy, cholesky, dot, l2_normalize, solve_spd, Matrix};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split {other:?}"))),
        }
    }
}

/// `N` feature vectors of dimension `F_d`, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    features: Matrix,
    labels: Option<Vec<usize>>,
    name: String,
    split: Split,
}

impl LabeledEmbeddings {
    pub fn new(
        features: Matrix,
        labels: Option<Vec<usize>>,
        name: impl Into<String>,
        split: Split,
    ) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Empty);
        }
        if features.cols() == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if let Some(l) = &labels {
            numerics::check_len(features.rows(), l.len())?;
        }
        Ok(Self {
            features,
            labels,
            name: name.into(),
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels().ok_or(Error::MissingLabels)
    }

    /// `max label + 1`, or `None` for unlabeled sets.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Checks every label against an externally known class count.
    pub fn check_labels(&self, classes: usize) -> Result<()> {
        for &label in self.require_labels()? {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Applies `f` to every row, keeping labels, name and split.
    pub fn map_rows<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let rows = self
            .features
            .iter_rows()
            .map(&mut f)
            .collect::<Result<Vec<_>>>()?;
        let features = Matrix::from_rows(&rows)?;
        Self::new(features, self.labels.clone(), self.name.clone(), self.split)
    }

    pub fn normalized(&self) -> Result<Self> {
        self.map_rows(l2_normalize)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(
            Matrix::new(indices.len(), d, data)?,
            labels,
            self.name.clone(),
            self.split,
        )
    }
}

/// Parameters of the synthetic hypersphere scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub noise_sigma: f64,
    pub ood_shift: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("synthetic spec needs at least two classes"));
        }
        if self.per_class < 1 {
            return Err(Error::invalid("per_class must be at least 1"));
        }
        if self.dim <= self.classes {
            return Err(Error::invalid(
                "dim must exceed classes so the OOD centre can leave the span of the class means",
            ));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be positive"));
        }
        if !(self.ood_shift >= 0.0 && self.ood_shift.is_finite()) {
            return Err(Error::invalid("ood_shift must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub id_train: LabeledEmbeddings,
    pub id_test: LabeledEmbeddings,
    pub ood: LabeledEmbeddings,
    /// Unit class-mean directions.
    pub class_means: Matrix,
    /// OOD cluster centre before normalization.
    pub ood_center: Vec<f64>,
}

/// Draws a seeded ID/OOD scenario on the unit sphere.
///
/// Stream order: `C` class means (Gaussian vectors, normalized), one
/// Gaussian vector for the OOD direction, then ID train samples
/// class-major, ID test samples class-major, and `C·per_class` OOD samples.
/// Every sample is `normalize(centre + σ·g)` with `g` a fresh Gaussian vector.
///
/// The OOD centre is equidistant from every class mean. It sits on the line
/// through the circumcentre `p₀` of the means (their affine hull's point
/// closest to the origin) along a unit direction `u` orthogonal to all
/// means: `p₀ + t·u` with `t = sqrt(max(shift² − r₀², 0))`, where
/// `r₀ = |p₀ − μ_c|`. For `shift ≥ r₀` the distance to every mean is exactly
/// `shift`; smaller shifts saturate at `r₀`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSplits> {
    spec.validate()?;
    let mut rng = Rng::seed_from_u64(spec.seed);
    let (c, d) = (spec.classes, spec.dim);

    let mut means = Vec::with_capacity(c);
    while means.len() < c {
        if let Ok(m) = l2_normalize(&rng.gaussian_vec(d)) {
            means.push(m);
        }
    }
    let class_means = Matrix::from_rows(&means)?;

    // Direction orthogonal to every mean (modified Gram-Schmidt).
    let mut u = rng.gaussian_vec(d);
    let basis = orthonormal_basis(&means);
    for b in &basis {
        let p = dot(&u, b);
        axpy(-p, b, &mut u);
    }
    let u = l2_normalize(&u)?;

    let p0 = circumcenter(&class_means)?;
    let r0_sq = (1.0 - dot(&p0, &p0)).max(0.0);
    let t = sqrt((spec.ood_shift * spec.ood_shift - r0_sq).max(0.0));
    let mut ood_center = p0.clone();
    axpy(t, &u, &mut ood_center);

    let draw = |rng: &mut Rng, center: &[f64]| -> Result<Vec<f64>> {
        let mut x = center.to_vec();
        axpy(spec.noise_sigma, &rng.gaussian_vec(d), &mut x);
        l2_normalize(&x)
    };

    let mut id_sets = Vec::with_capacity(2);
    for split in [Split::Train, Split::Test] {
        let mut rows = Vec::with_capacity(c * spec.per_class);
        let mut labels = Vec::with_capacity(c * spec.per_class);
        for (class, mean) in means.iter().enumerate() {
            for _ in 0..spec.per_class {
                rows.push(draw(&mut rng, mean)?);
                labels.push(class);
            }
        }
        id_sets.push(LabeledEmbeddings::new(
            Matrix::from_rows(&rows)?,
            Some(labels),
            "synthetic-id",
            split,
        )?);
    }
    let ood_rows = (0..c * spec.per_class)
        .map(|_| draw(&mut rng, &ood_center))
        .collect::<Result<Vec<_>>>()?;
    let ood = LabeledEmbeddings::new(
        Matrix::from_rows(&ood_rows)?,
        None,
        "synthetic-ood",
        Split::Test,
    )?;

    let id_test = id_sets.pop().expect("two splits");
    let id_train = id_sets.pop().expect("two splits");
    Ok(SyntheticSplits {
        id_train,
        id_test,
        ood,
        class_means,
        ood_center,
    })
}

fn orthonormal_basis(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for b in &basis {
            let p = dot(&w, b);
            axpy(-p, b, &mut w);
        }
        if let Ok(w) = l2_normalize(&w) {
            if numerics::norm(&w) > 0.5 {
                basis.push(w);
            }
        }
    }
    basis
}

/// Point of the affine hull of the (unit) rows closest to the origin.
fn circumcenter(means: &Matrix) -> Result<Vec<f64>> {
    let c = means.rows();
    let gram = means.matmul(&means.transpose())?;
    let l = cholesky(&gram)?;
    let a = solve_spd(&l, &vec![1.0; c])?;
    let total: f64 = a.iter().sum();
    let weights: Vec<f64> = a.iter().map(|x| x / total).collect();
    means.mul_vec_transposed(&weights)
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "C={} dim={} per_class={} sigma={} shift={} seed={}",
            self.classes, self.dim, self.per_class, self.noise_sigma, self.ood_shift, self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 3,
            dim: 8,
            per_class: 20,
            noise_sigma: 0.05,
            ood_shift: 2.0,
            seed: 7,
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_synthetic(&spec()).unwrap(), generate_synthetic(&spec()).unwrap());
        let mut other = spec();
        other.seed = 8;
        assert_ne!(
            generate_synthetic(&spec()).unwrap().id_train,
            generate_synthetic(&other).unwrap().id_train
        );
    }

    #[test]
    fn unit_norm_and_balanced() {
        let s = generate_synthetic(&spec()).unwrap();
        for set in [&s.id_train, &s.id_test, &s.ood] {
            for r in set.features().iter_rows() {
                assert!((norm(r) - 1.0).abs() < 1e-6);
            }
        }
        let labels = s.id_train.labels().unwrap();
        for class in 0..3 {
            assert_eq!(labels.iter().filter(|&&l| l == class).count(), 20);
        }
        assert_eq!(s.ood.labels(), None);
        assert_eq!(s.ood.len(), 60);
    }

    #[test]
    fn ood_center_is_shift_away_from_every_mean() {
        let s = generate_synthetic(&spec()).unwrap();
        for m in s.class_means.iter_rows() {
            let dist: f64 = norm(
                &m.iter()
                    .zip(&s.ood_center)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            assert!((dist - 2.0).abs() < 1e-9, "distance {dist}");
        }
    }

    #[test]
    fn vanishing_noise_collapses_onto_means() {
        let mut sp = spec();
        sp.noise_sigma = 1e-12;
        let s = generate_synthetic(&sp).unwrap();
        let labels = s.id_train.labels().unwrap();
        for (row, &label) in s.id_train.features().iter_rows().zip(labels) {
            for (a, b) in row.iter().zip(s.class_means.row(label)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut sp = spec();
        sp.classes = 1;
        assert!(generate_synthetic(&sp).is_err());
        let mut sp = spec();
        sp.dim = 3;
        assert!(generate_synthetic(&sp).is_err());
        let mut sp = spec();
        sp.noise_sigma = 0.0;
        assert!(generate_synthetic(&sp).is_err());
    }

    #[test]
    fn label_checks() {
        let f = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(LabeledEmbeddings::new(f.clone(), Some(vec![0]), "x", Split::Train).is_err());
        let ds = LabeledEmbeddings::new(f, Some(vec![0, 3]), "x", Split::Train).unwrap();
        assert_eq!(ds.num_classes(), Some(4));
        assert_eq!(
            ds.check_labels(2),
            Err(Error::LabelOutOfRange { label: 3, classes: 2 })
        );
        assert!("val".parse::<Split>().is_ok());
        assert!("dev".parse::<Split>().is_err());
    }
}
