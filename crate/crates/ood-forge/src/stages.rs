//! Individual pipeline stages, each reading and writing files so that a run
//! can be split across separate invocations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ood_forge_core::cider::{cider_train, CiderConfig, CiderModel, EpochLoss};
use ood_forge_core::detectors::{DetectorSpec, FittedDetector};
use ood_forge_core::eval::{acc_at_tpr, auroc, EvalReport, EvalRow, Outcome, ScoredDataset};
use ood_forge_core::nnet::{accuracy, train_probe, LinearProbe};
use ood_forge_core::pipeline::{assemble, Condition, EvalOptions, FittedPipeline, Models};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    cider_from, detector_container, detector_from, probe_from, Container, KIND_CIDER,
    KIND_DETECTOR, KIND_PROBE,
};
use crate::config::{ConditionName, RunConfig};
use crate::fsutil::{write_atomic, StagedDir};
use crate::run::Inputs;
use crate::{Error, Result};

/// Name of the file listing detectors whose fit failed.
pub const FIT_ERRORS: &str = "errors.json";

pub fn detector_file(spec: &DetectorSpec) -> String {
    format!("{}.det", spec.kind().key())
}

#[derive(Debug, Clone)]
pub struct CiderStage {
    pub model: CiderModel,
    pub config: CiderConfig,
    pub loss_trace: Vec<EpochLoss>,
}

pub fn train_cider_stage(cfg: &RunConfig, inputs: &Inputs) -> Result<CiderStage> {
    let config = cfg
        .cider
        .clone()
        .ok_or_else(|| Error::config("cider-train needs a \"cider\" section"))?;
    let t = cider_train(&inputs.id_train, &config)?;
    Ok(CiderStage {
        model: t.model,
        config,
        loss_trace: t.loss_trace,
    })
}

#[derive(Debug, Clone)]
pub struct ProbeStage {
    pub probe: LinearProbe,
    pub loss_trace: Vec<f64>,
    /// Test accuracy when the ID test set is labeled.
    pub id_accuracy: Option<f64>,
}

/// Trains the probe on normalized (optionally projected) ID training features.
pub fn train_probe_stage(
    cfg: &RunConfig,
    inputs: &Inputs,
    cider: Option<&CiderModel>,
) -> Result<ProbeStage> {
    let prepare = |data| -> Result<_> {
        Ok(match cider {
            Some(m) => m.project_all(data)?.normalized()?,
            None => data.normalized()?,
        })
    };
    let trained = train_probe(&prepare(&inputs.id_train)?, &cfg.probe)?;
    let id_accuracy = match inputs.id_test.labels() {
        Some(_) => Some(accuracy(&trained.probe, &prepare(&inputs.id_test)?)?),
        None => None,
    };
    Ok(ProbeStage {
        probe: trained.probe,
        loss_trace: trained.loss_trace,
        id_accuracy,
    })
}

/// Loads checkpoints and checks them against the configured condition.
pub fn load_models(
    cfg: &RunConfig,
    probe: &Path,
    cider: Option<&Path>,
) -> Result<(Condition, Models)> {
    let probe = probe_from(&Container::load(probe, KIND_PROBE)?).map_err(|e| e.in_file(probe))?;
    match (cfg.condition, cider) {
        (ConditionName::Baseline, None) => Ok((Condition::Baseline, Models { cider: None, probe })),
        (ConditionName::Cider, Some(path)) => {
            let (model, config) =
                cider_from(&Container::load(path, KIND_CIDER)?).map_err(|e| e.in_file(path))?;
            Ok((
                Condition::Cider(config),
                Models {
                    cider: Some(model),
                    probe,
                },
            ))
        }
        (ConditionName::Baseline, Some(_)) => Err(Error::config(
            "a cider checkpoint was given but the condition is \"baseline\"",
        )),
        (ConditionName::Cider, None) => Err(Error::config(
            "condition \"cider\" needs a cider checkpoint (--cider)",
        )),
    }
}

pub fn assemble_stage(inputs: &Inputs, condition: &Condition, models: Models) -> Result<FittedPipeline> {
    Ok(assemble(&inputs.pipeline(), condition, models)?)
}

/// Fits every configured detector; failures are kept per detector.
pub fn fit_stage(
    cfg: &RunConfig,
    fitted: &FittedPipeline,
) -> Vec<(DetectorSpec, ood_forge_core::Result<FittedDetector>)> {
    cfg.detectors
        .iter()
        .map(|s| (s.clone(), fitted.fit_detector(s)))
        .collect()
}

/// Writes one `<key>.det` per fitted detector and [`FIT_ERRORS`] for the rest.
pub fn write_detectors(
    dir: &Path,
    results: &[(DetectorSpec, ood_forge_core::Result<FittedDetector>)],
) -> Result<()> {
    let staged = StagedDir::new(dir)?;
    let mut errors = BTreeMap::new();
    for (spec, det) in results {
        match det {
            Ok(d) => staged.write(&detector_file(spec), &detector_container(d).encode()?)?,
            Err(e) => {
                errors.insert(spec.kind().key().to_string(), e.to_string());
            }
        }
    }
    let text = serde_json::to_string_pretty(&errors).expect("string map");
    staged.write(FIT_ERRORS, format!("{text}\n").as_bytes())?;
    staged.commit()?;
    Ok(())
}

/// Reads the fitted detectors in configuration order.
pub fn read_detectors(
    cfg: &RunConfig,
    dir: &Path,
) -> Result<Vec<(DetectorSpec, std::result::Result<FittedDetector, String>)>> {
    let errors: BTreeMap<String, String> = match fs::read_to_string(dir.join(FIT_ERRORS)) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| Error::format(e.to_string()).in_file(dir.join(FIT_ERRORS)))?,
        Err(_) => BTreeMap::new(),
    };
    cfg.detectors
        .iter()
        .map(|spec| {
            let path = dir.join(detector_file(spec));
            let key = spec.kind().key();
            let det = if path.is_file() {
                let det = detector_from(&Container::load(&path, KIND_DETECTOR)?)
                    .map_err(|e| e.in_file(&path))?;
                if det.kind() != spec.kind() {
                    return Err(Error::format(format!("holds a {} state", det.kind().key())).in_file(&path));
                }
                Ok(det)
            } else {
                Err(errors
                    .get(key)
                    .cloned()
                    .unwrap_or_else(|| format!("detector {key} was not fitted")))
            };
            Ok((spec.clone(), det))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Id,
    Ood,
}

/// Scores of one detector on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSet {
    pub detector: String,
    pub dataset: String,
    pub role: Role,
    /// Number of samples in the dataset, also when scoring failed.
    pub len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFile {
    pub condition: String,
    pub sets: Vec<ScoreSet>,
}

impl ScoreFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("plain data");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(format!("score file: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }
}

/// Scores the ID test set and every OOD set with each detector.
pub fn score_stage(
    fitted: &FittedPipeline,
    detectors: &[(DetectorSpec, std::result::Result<FittedDetector, String>)],
) -> ScoreFile {
    let mut sets = Vec::new();
    for (spec, det) in detectors {
        let label = spec.kind().label();
        let splits = std::iter::once((Role::Id, &fitted.id_test)).chain(fitted.ood.iter().map(|o| (Role::Ood, o)));
        for (role, split) in splits {
            let scored = det
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|d| fitted.score_split(d, split).map_err(|e| e.to_string()));
            let (scores, error) = match scored {
                Ok(s) => (s, None),
                Err(e) => (Vec::new(), Some(e)),
            };
            sets.push(ScoreSet {
                detector: label.to_string(),
                dataset: split.name.clone(),
                role,
                len: split.len(),
                error,
                scores,
            });
        }
    }
    ScoreFile {
        condition: fitted.condition.tag().to_string(),
        sets,
    }
}

/// Turns a score file into report rows, detector-major in file order.
pub fn evaluate_scores(file: &ScoreFile, opts: &EvalOptions) -> Result<EvalReport> {
    let mut detectors: Vec<&str> = Vec::new();
    for s in &file.sets {
        if !detectors.contains(&s.detector.as_str()) {
            detectors.push(&s.detector);
        }
    }
    let mut rows = Vec::new();
    for det in detectors {
        let sets: Vec<&ScoreSet> = file.sets.iter().filter(|s| s.detector == det).collect();
        let ids: Vec<&&ScoreSet> = sets.iter().filter(|s| s.role == Role::Id).collect();
        let [id] = ids[..] else {
            return Err(Error::format(format!(
                "detector {det} needs exactly one ID score set, found {}",
                ids.len()
            )));
        };
        for ood in sets.iter().filter(|s| s.role == Role::Ood) {
            let outcome = match (&id.error, &ood.error) {
                (Some(e), _) | (None, Some(e)) => Outcome::Failed(e.clone()),
                (None, None) => ScoredDataset::new(
                    id.scores.clone(),
                    ood.scores.clone(),
                    det,
                    ood.dataset.clone(),
                    file.condition.clone(),
                )
                .and_then(|s| {
                    Ok(Outcome::Scored {
                        auroc: auroc(&s),
                        acc95tpr: acc_at_tpr(&s, opts.tpr, opts.balanced)?,
                    })
                })
                .unwrap_or_else(|e| Outcome::Failed(e.to_string())),
            };
            rows.push(EvalRow {
                condition: file.condition.clone(),
                detector: det.to_string(),
                dataset: ood.dataset.clone(),
                n_id: id.len,
                n_ood: ood.len,
                outcome,
            });
        }
    }
    Ok(EvalReport::new(rows))
}

/// Writes `report.csv` and `report.md` into `dir`, replacing it.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    let staged = StagedDir::new(dir)?;
    staged.write("report.csv", report.to_csv().as_bytes())?;
    staged.write("report.md", report.to_markdown().as_bytes())?;
    staged.commit()?;
    Ok(())
}
