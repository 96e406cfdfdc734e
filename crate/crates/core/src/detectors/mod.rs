//! Post-hoc OOD detectors.
//!
//! Every detector emits an *inlier* score: higher means more in-domain.
//! Stateful detectors have a `fit_*` function producing frozen state; all
//! scoring functions are pure.

mod klmatching;
mod logit;
mod mahalanobis;
mod odin;
mod openmax;

use alloc::format;
use core::fmt;
use core::str::FromStr;

pub use klmatching::{fit_klmatching, kl_divergence, score_klmatching, KlMatchingState, KlMode};
pub use logit::{score_energy, score_maxlogit, score_maxsoftmax};
pub use mahalanobis::{fit_mahalanobis, score_mahalanobis, MahalanobisState, RIDGE_FRACTION};
pub use odin::{
    linear_log_softmax_input_grad, log_softmax_input_grad, score_odin, OdinConfig, OdinMode,
};
pub use openmax::{fit_openmax, score_openmax, OpenMaxState, RankWeight, Revision};

use crate::nnet::Classifier;
use crate::numerics::{percentile_nearest_rank, softmax, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetectorKind {
    MaxSoftmax,
    MaxLogit,
    Mahalanobis,
    Energy,
    Odin,
    KlMatching,
    OpenMax,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 7] = [
        DetectorKind::Mahalanobis,
        DetectorKind::MaxLogit,
        DetectorKind::MaxSoftmax,
        DetectorKind::Odin,
        DetectorKind::OpenMax,
        DetectorKind::Energy,
        DetectorKind::KlMatching,
    ];

    /// Identifier used in configuration files.
    pub fn key(self) -> &'static str {
        match self {
            DetectorKind::MaxSoftmax => "maxsoftmax",
            DetectorKind::MaxLogit => "maxlogit",
            DetectorKind::Mahalanobis => "mahalanobis",
            DetectorKind::Energy => "energy",
            DetectorKind::Odin => "odin",
            DetectorKind::KlMatching => "klmatching",
            DetectorKind::OpenMax => "openmax",
        }
    }

    /// Name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            DetectorKind::MaxSoftmax => "MaxSoftmax",
            DetectorKind::MaxLogit => "MaxLogit",
            DetectorKind::Mahalanobis => "Mahalanobis",
            DetectorKind::Energy => "EnergyBased",
            DetectorKind::Odin => "ODIN",
            DetectorKind::KlMatching => "KLMatching",
            DetectorKind::OpenMax => "OpenMax",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.to_ascii_lowercase();
        let wanted = match wanted.as_str() {
            "energybased" => "energy",
            other => other,
        };
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.key() == wanted)
            .ok_or_else(|| Error::Parse(format!("unknown detector {s:?}")))
    }
}

/// A detector together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorSpec {
    MaxSoftmax,
    MaxLogit,
    Mahalanobis,
    Energy { temperature: f64 },
    Odin(OdinConfig),
    KlMatching { mode: KlMode },
    OpenMax {
        tail: usize,
        /// `None` revises every class (`α = C`).
        alpha: Option<usize>,
        rank_weight: RankWeight,
    },
}

pub const DEFAULT_TAIL: usize = 20;

impl DetectorSpec {
    pub fn default_for(kind: DetectorKind) -> Self {
        match kind {
            DetectorKind::MaxSoftmax => DetectorSpec::MaxSoftmax,
            DetectorKind::MaxLogit => DetectorSpec::MaxLogit,
            DetectorKind::Mahalanobis => DetectorSpec::Mahalanobis,
            DetectorKind::Energy => DetectorSpec::Energy { temperature: 1.0 },
            DetectorKind::Odin => DetectorSpec::Odin(OdinConfig::default()),
            DetectorKind::KlMatching => DetectorSpec::KlMatching {
                mode: KlMode::PerClass,
            },
            DetectorKind::OpenMax => DetectorSpec::OpenMax {
                tail: DEFAULT_TAIL,
                alpha: None,
                rank_weight: RankWeight::Inclusive,
            },
        }
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorSpec::MaxSoftmax => DetectorKind::MaxSoftmax,
            DetectorSpec::MaxLogit => DetectorKind::MaxLogit,
            DetectorSpec::Mahalanobis => DetectorKind::Mahalanobis,
            DetectorSpec::Energy { .. } => DetectorKind::Energy,
            DetectorSpec::Odin(_) => DetectorKind::Odin,
            DetectorSpec::KlMatching { .. } => DetectorKind::KlMatching,
            DetectorSpec::OpenMax { .. } => DetectorKind::OpenMax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DetectorSpec::Energy { temperature } if !(*temperature > 0.0) => {
                Err(Error::invalid("energy temperature must be positive"))
            }
            DetectorSpec::Odin(cfg) => cfg.validate(),
            DetectorSpec::OpenMax { tail, alpha, .. } => {
                if *tail < 2 {
                    Err(Error::invalid("OpenMax tail must be at least 2"))
                } else if *alpha == Some(0) {
                    Err(Error::invalid("OpenMax alpha must be at least 1"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Training-side tensors a detector may need when fitting.
#[derive(Debug, Clone, Copy)]
pub struct FitInputs<'a> {
    /// Deep representation of the ID training set (Mahalanobis input).
    pub train_repr: &'a Matrix,
    pub train_logits: &'a Matrix,
    pub train_labels: &'a [usize],
    /// Softmax posteriors of the ID validation set.
    pub val_posteriors: &'a Matrix,
}

/// Everything known about one sample at scoring time.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    /// Deep representation (Mahalanobis input).
    pub repr: &'a [f64],
    /// Input of the classifier (perturbed by ODIN).
    pub probe_input: &'a [f64],
    pub logits: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedDetector {
    MaxSoftmax,
    MaxLogit,
    Energy { temperature: f64 },
    Odin(OdinConfig),
    Mahalanobis(MahalanobisState),
    KlMatching(KlMatchingState),
    OpenMax(OpenMaxState),
}

pub fn fit_detector(spec: &DetectorSpec, inputs: &FitInputs<'_>) -> Result<FittedDetector> {
    spec.validate()?;
    Ok(match spec {
        DetectorSpec::MaxSoftmax => FittedDetector::MaxSoftmax,
        DetectorSpec::MaxLogit => FittedDetector::MaxLogit,
        DetectorSpec::Energy { temperature } => FittedDetector::Energy {
            temperature: *temperature,
        },
        DetectorSpec::Odin(cfg) => FittedDetector::Odin(*cfg),
        DetectorSpec::Mahalanobis => FittedDetector::Mahalanobis(fit_mahalanobis(
            inputs.train_repr,
            inputs.train_labels,
        )?),
        DetectorSpec::KlMatching { mode } => {
            FittedDetector::KlMatching(fit_klmatching(inputs.val_posteriors, *mode)?)
        }
        DetectorSpec::OpenMax {
            tail,
            alpha,
            rank_weight,
        } => {
            let classes = inputs.train_logits.cols();
            FittedDetector::OpenMax(fit_openmax(
                inputs.train_logits,
                inputs.train_labels,
                *tail,
                alpha.unwrap_or(classes),
                *rank_weight,
            )?)
        }
    })
}

impl FittedDetector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            FittedDetector::MaxSoftmax => DetectorKind::MaxSoftmax,
            FittedDetector::MaxLogit => DetectorKind::MaxLogit,
            FittedDetector::Energy { .. } => DetectorKind::Energy,
            FittedDetector::Odin(_) => DetectorKind::Odin,
            FittedDetector::Mahalanobis(_) => DetectorKind::Mahalanobis,
            FittedDetector::KlMatching(_) => DetectorKind::KlMatching,
            FittedDetector::OpenMax(_) => DetectorKind::OpenMax,
        }
    }

    pub fn score<C: Classifier + ?Sized>(&self, sample: &Sample<'_>, classifier: &C) -> Result<f64> {
        match self {
            FittedDetector::MaxSoftmax => score_maxsoftmax(sample.logits),
            FittedDetector::MaxLogit => score_maxlogit(sample.logits),
            FittedDetector::Energy { temperature } => score_energy(sample.logits, *temperature),
            FittedDetector::Odin(cfg) => score_odin(classifier, sample.probe_input, cfg),
            FittedDetector::Mahalanobis(st) => st.score(sample.repr),
            FittedDetector::KlMatching(st) => st.score(&softmax(sample.logits)?),
            FittedDetector::OpenMax(st) => st.score(sample.logits),
        }
    }
}

/// Cutoff on inlier scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub tau: f64,
}

impl Threshold {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self { tau })
    }

    /// Nearest-rank cutoff accepting at least a `tpr` fraction of `id_scores`.
    pub fn at_tpr(id_scores: &[f64], tpr: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tpr) {
            return Err(Error::InvalidFraction(tpr));
        }
        Self::new(percentile_nearest_rank(id_scores, 1.0 - tpr)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    InDomain,
    OutOfDomain,
}

/// In-domain iff `score ≥ τ`.
pub fn classify_ood(score: f64, threshold: Threshold) -> Verdict {
    if score >= threshold.tau {
        Verdict::InDomain
    } else {
        Verdict::OutOfDomain
    }
}
