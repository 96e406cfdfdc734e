//! End-to-end evaluation of one condition.
//!
//! The baseline condition trains a linear probe on normalized ID features;
//! the `cider` condition first trains a projection head and then fits the
//! probe on the projected features. Every detector is then fitted once and
//! scored on the ID test set and on each OOD set. Cells are independent so
//! callers may evaluate them concurrently and merge rows in order.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::cider::{cider_train, evaluate_with_probe, CiderConfig, CiderModel, EpochLoss};
use crate::dataset::LabeledEmbeddings;
use crate::detectors::{fit_detector, DetectorSpec, FitInputs, FittedDetector, Sample};
use crate::eval::{acc_at_tpr, auroc, EvalRow, Outcome, ScoredDataset, DEFAULT_TPR};
use crate::nnet::{accuracy, train_probe, Classifier, LinearProbe, TrainConfig};
use crate::numerics::{check_len, softmax, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Baseline,
    Cider(CiderConfig),
}

impl Condition {
    /// Value of the `condition` column.
    pub fn tag(&self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Cider(_) => "cider",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineInputs<'a> {
    pub id_train: &'a LabeledEmbeddings,
    /// Source of KLMatching templates; the training set is used when absent.
    pub id_val: Option<&'a LabeledEmbeddings>,
    pub id_test: &'a LabeledEmbeddings,
    pub ood: &'a [LabeledEmbeddings],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub tpr: f64,
    pub balanced: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tpr: DEFAULT_TPR,
            balanced: false,
        }
    }
}

/// One dataset as seen by the detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitView {
    pub name: String,
    /// Mahalanobis input: raw features (baseline) or projections (cider).
    pub repr: Matrix,
    /// Normalized probe input.
    pub probe_input: Matrix,
    pub logits: Matrix,
}

impl SplitView {
    pub fn len(&self) -> usize {
        self.repr.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.repr.rows() == 0
    }

    fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            repr: self.repr.row(i),
            probe_input: self.probe_input.row(i),
            logits: self.logits.row(i),
        }
    }
}

/// Models of one condition: the optional projection and the probe.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub cider: Option<CiderModel>,
    pub probe: LinearProbe,
}

/// Models together with their training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub models: Models,
    pub cider_trace: Vec<EpochLoss>,
    pub probe_trace: Vec<f64>,
    /// Probe accuracy on the ID test set when it is labeled.
    pub id_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub condition: Condition,
    pub models: Models,
    pub train: SplitView,
    pub train_labels: Vec<usize>,
    pub val_posteriors: Matrix,
    pub id_test: SplitView,
    pub ood: Vec<SplitView>,
}

fn view(
    data: &LabeledEmbeddings,
    repr: &LabeledEmbeddings,
    probe: &LinearProbe,
) -> Result<SplitView> {
    let probe_input = repr.normalized()?;
    let mut logits = Vec::with_capacity(data.len() * probe.num_classes());
    for x in probe_input.features().iter_rows() {
        logits.extend(probe.logits(x)?);
    }
    Ok(SplitView {
        name: data.name().to_string(),
        repr: repr.features().clone(),
        probe_input: probe_input.features().clone(),
        logits: Matrix::new(data.len(), probe.num_classes(), logits)?,
    })
}

fn posteriors(logits: &Matrix) -> Result<Matrix> {
    let mut out = Vec::with_capacity(logits.rows() * logits.cols());
    for row in logits.iter_rows() {
        out.extend(softmax(row)?);
    }
    Matrix::new(logits.rows(), logits.cols(), out)
}

fn check_inputs(inputs: &PipelineInputs<'_>) -> Result<()> {
    let d = inputs.id_train.dim();
    inputs.id_train.require_labels()?;
    for other in inputs.id_val.iter().copied().chain([inputs.id_test]).chain(inputs.ood) {
        check_len(d, other.dim())?;
    }
    Ok(())
}

fn represent(cider: Option<&CiderModel>, data: &LabeledEmbeddings) -> Result<LabeledEmbeddings> {
    match cider {
        Some(m) => m.project_all(data),
        None => Ok(data.clone()),
    }
}

/// Trains the projection head (cider condition only), then the probe on
/// normalized representations of the ID training set.
pub fn train_models(
    inputs: &PipelineInputs<'_>,
    condition: &Condition,
    probe_cfg: &TrainConfig,
) -> Result<TrainedModels> {
    check_inputs(inputs)?;
    let cider = match condition {
        Condition::Baseline => None,
        Condition::Cider(cfg) => Some(cider_train(inputs.id_train, cfg)?),
    };
    let (probe, id_accuracy) = match (&cider, inputs.id_test.labels()) {
        (Some(t), Some(_)) => {
            let (p, acc) = evaluate_with_probe(inputs.id_train, inputs.id_test, &t.model, probe_cfg)?;
            (p, Some(acc))
        }
        _ => {
            let model = cider.as_ref().map(|t| &t.model);
            let p = train_probe(&represent(model, inputs.id_train)?.normalized()?, probe_cfg)?;
            let acc = match inputs.id_test.labels() {
                Some(_) => Some(accuracy(
                    &p.probe,
                    &represent(model, inputs.id_test)?.normalized()?,
                )?),
                None => None,
            };
            (p, acc)
        }
    };
    let (cider, cider_trace) = match cider {
        Some(t) => (Some(t.model), t.loss_trace),
        None => (None, Vec::new()),
    };
    Ok(TrainedModels {
        models: Models {
            cider,
            probe: probe.probe,
        },
        cider_trace,
        probe_trace: probe.loss_trace,
        id_accuracy,
    })
}

/// Precomputes every split's detector inputs under already trained models.
pub fn assemble(
    inputs: &PipelineInputs<'_>,
    condition: &Condition,
    models: Models,
) -> Result<FittedPipeline> {
    check_inputs(inputs)?;
    match (condition, &models.cider) {
        (Condition::Cider(_), None) => {
            return Err(Error::invalid("the cider condition needs a trained projection head"))
        }
        (Condition::Baseline, Some(_)) => {
            return Err(Error::invalid("the baseline condition takes no projection head"))
        }
        _ => {}
    }
    let probe = &models.probe;
    let cider = models.cider.as_ref();
    let expected = cider.map_or(inputs.id_train.dim(), CiderModel::output_dim);
    check_len(expected, probe.input_dim())?;
    let classes = probe.num_classes();
    for data in [inputs.id_train, inputs.id_test] {
        if let Some(labels) = data.labels() {
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(Error::LabelOutOfRange { label: bad, classes });
            }
        }
    }

    let train = view(inputs.id_train, &represent(cider, inputs.id_train)?, probe)?;
    let val_posteriors = match inputs.id_val {
        Some(val) => posteriors(&view(val, &represent(cider, val)?, probe)?.logits)?,
        None => posteriors(&train.logits)?,
    };
    let id_test = view(inputs.id_test, &represent(cider, inputs.id_test)?, probe)?;
    let ood = inputs
        .ood
        .iter()
        .map(|o| view(o, &represent(cider, o)?, probe))
        .collect::<Result<Vec<_>>>()?;
    Ok(FittedPipeline {
        condition: condition.clone(),
        train_labels: inputs.id_train.require_labels()?.to_vec(),
        models,
        train,
        val_posteriors,
        id_test,
        ood,
    })
}

/// [`train_models`] followed by [`assemble`].
pub fn fit_pipeline(
    inputs: &PipelineInputs<'_>,
    condition: &Condition,
    probe_cfg: &TrainConfig,
) -> Result<(FittedPipeline, TrainedModels)> {
    let trained = train_models(inputs, condition, probe_cfg)?;
    let fitted = assemble(inputs, condition, trained.models.clone())?;
    Ok((fitted, trained))
}

impl FittedPipeline {
    pub fn fit_inputs(&self) -> FitInputs<'_> {
        FitInputs {
            train_repr: &self.train.repr,
            train_logits: &self.train.logits,
            train_labels: &self.train_labels,
            val_posteriors: &self.val_posteriors,
        }
    }

    pub fn fit_detector(&self, spec: &DetectorSpec) -> Result<FittedDetector> {
        fit_detector(spec, &self.fit_inputs())
    }

    pub fn score_split(&self, detector: &FittedDetector, split: &SplitView) -> Result<Vec<f64>> {
        (0..split.len())
            .map(|i| detector.score(&split.sample(i), &self.models.probe))
            .collect()
    }

    pub fn scored_dataset(
        &self,
        detector: &FittedDetector,
        ood_index: usize,
    ) -> Result<ScoredDataset> {
        let ood = self
            .ood
            .get(ood_index)
            .ok_or_else(|| Error::invalid("OOD dataset index out of range"))?;
        ScoredDataset::new(
            self.score_split(detector, &self.id_test)?,
            self.score_split(detector, ood)?,
            detector.kind().label(),
            ood.name.clone(),
            self.condition.tag(),
        )
    }

    /// Report row for one detector on one OOD set; fit or scoring errors
    /// become a failed row.
    pub fn evaluate_cell(
        &self,
        spec: &DetectorSpec,
        detector: &Result<FittedDetector>,
        ood_index: usize,
        opts: &EvalOptions,
    ) -> EvalRow {
        let ood = &self.ood[ood_index];
        let outcome = detector
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|det| {
                let s = self.scored_dataset(det, ood_index)?;
                Ok(Outcome::Scored {
                    auroc: auroc(&s),
                    acc95tpr: acc_at_tpr(&s, opts.tpr, opts.balanced)?,
                })
            })
            .unwrap_or_else(|e| Outcome::Failed(e.to_string()));
        EvalRow {
            condition: self.condition.tag().to_string(),
            detector: spec.kind().label().to_string(),
            dataset: ood.name.clone(),
            n_id: self.id_test.len(),
            n_ood: ood.len(),
            outcome,
        }
    }

    /// Fits every detector and evaluates all cells sequentially, rows
    /// ordered detector-major.
    pub fn evaluate(&self, specs: &[DetectorSpec], opts: &EvalOptions) -> crate::eval::EvalReport {
        let mut rows = Vec::with_capacity(specs.len() * self.ood.len());
        for spec in specs {
            let det = self.fit_detector(spec);
            for j in 0..self.ood.len() {
                rows.push(self.evaluate_cell(spec, &det, j, opts));
            }
        }
        crate::eval::EvalReport::new(rows)
    }
}

/// Trains, assembles and evaluates one condition sequentially.
pub fn run_condition(
    inputs: &PipelineInputs<'_>,
    condition: &Condition,
    probe_cfg: &TrainConfig,
    specs: &[DetectorSpec],
    opts: &EvalOptions,
) -> Result<(TrainedModels, crate::eval::EvalReport)> {
    let (fitted, trained) = fit_pipeline(inputs, condition, probe_cfg)?;
    Ok((trained, fitted.evaluate(specs, opts)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::detectors::{DetectorKind, DetectorSpec};
    use alloc::vec;

    fn all_specs() -> Vec<DetectorSpec> {
        DetectorKind::ALL.iter().map(|&k| DetectorSpec::default_for(k)).collect()
    }

    #[test]
    fn failed_detector_does_not_abort() {
        let s = generate_synthetic(&SyntheticSpec {
            classes: 3,
            dim: 8,
            per_class: 10,
            noise_sigma: 0.05,
            ood_shift: 2.0,
            seed: 1,
        })
        .unwrap();
        let ood = vec![s.ood];
        let inputs = PipelineInputs {
            id_train: &s.id_train,
            id_val: None,
            id_test: &s.id_test,
            ood: &ood,
        };
        let (trained, report) = run_condition(
            &inputs,
            &Condition::Baseline,
            &TrainConfig::default(),
            &all_specs(),
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(report.rows.len(), 7);
        // Ten samples per class cannot fill a tail of twenty.
        let om = report.rows.iter().find(|r| r.detector == "OpenMax").unwrap();
        assert!(!om.is_ok());
        assert!(report.rows.iter().filter(|r| r.is_ok()).count() == 6);
        assert_eq!(trained.id_accuracy, Some(1.0));
    }
}
