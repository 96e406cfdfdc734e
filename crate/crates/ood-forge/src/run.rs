//! Full runs of one condition and the parallel evaluation stage.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use ood_forge_core::dataset::LabeledEmbeddings;
use ood_forge_core::detectors::DetectorSpec;
use ood_forge_core::eval::{EvalReport, EvalRow};
use ood_forge_core::pipeline::{fit_pipeline, EvalOptions, FittedPipeline, PipelineInputs, TrainedModels};
use serde_json::json;

use crate::checkpoint::{cider_container, probe_container};
use crate::config::RunConfig;
use crate::emb::read_emb;
use crate::fsutil::StagedDir;
use crate::{Error, Result};

pub const THREADS_VAR: &str = "OOD_FORGE_THREADS";

/// Every dataset a configuration refers to.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub id_train: LabeledEmbeddings,
    pub id_val: Option<LabeledEmbeddings>,
    pub id_test: LabeledEmbeddings,
    pub ood: Vec<LabeledEmbeddings>,
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            id_train: read_emb(&cfg.id_train)?,
            id_val: cfg.id_val.as_ref().map(read_emb).transpose()?,
            id_test: read_emb(&cfg.id_test)?,
            ood: cfg.ood.iter().map(read_emb).collect::<Result<_>>()?,
        })
    }

    pub fn pipeline(&self) -> PipelineInputs<'_> {
        PipelineInputs {
            id_train: &self.id_train,
            id_val: self.id_val.as_ref(),
            id_test: &self.id_test,
            ood: &self.ood,
        }
    }
}

/// Worker count from `OOD_FORGE_THREADS`, else the available parallelism.
pub fn thread_budget() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::config(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Fits every detector and evaluates its cells on up to `threads` workers.
///
/// Rows come out detector-major in `specs` order whatever the schedule, so
/// the result equals [`FittedPipeline::evaluate`].
pub fn evaluate_parallel(
    fitted: &FittedPipeline,
    specs: &[DetectorSpec],
    opts: &EvalOptions,
    threads: usize,
) -> EvalReport {
    let work = |i: usize| -> Vec<EvalRow> {
        let spec = &specs[i];
        let det = fitted.fit_detector(spec);
        (0..fitted.ood.len())
            .map(|j| fitted.evaluate_cell(spec, &det, j, opts))
            .collect()
    };
    let workers = threads.clamp(1, specs.len().max(1));
    let slots: Vec<Mutex<Vec<EvalRow>>> = specs.iter().map(|_| Mutex::new(Vec::new())).collect();
    if workers == 1 {
        for (i, slot) in slots.iter().enumerate() {
            *slot.lock().expect("unshared lock") = work(i);
        }
    } else {
        let next = AtomicUsize::new(0);
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= specs.len() {
                        break;
                    }
                    let rows = work(i);
                    *slots[i].lock().expect("worker panicked") = rows;
                });
            }
        });
    }
    EvalReport::new(
        slots
            .into_iter()
            .flat_map(|m| m.into_inner().expect("worker panicked"))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: EvalReport,
    pub trained: TrainedModels,
}

/// Trains, fits and evaluates in memory.
pub fn execute(cfg: &RunConfig, inputs: &Inputs, threads: usize) -> Result<RunOutput> {
    let condition = cfg.pipeline_condition()?;
    let (fitted, trained) = fit_pipeline(&inputs.pipeline(), &condition, &cfg.probe)?;
    let report = evaluate_parallel(&fitted, &cfg.detectors, &cfg.evaluation, threads);
    Ok(RunOutput { report, trained })
}

/// Run metadata written next to the report.
pub fn summary_json(cfg: &RunConfig, out: &RunOutput) -> String {
    let t = &out.trained;
    let failed: Vec<_> = out
        .report
        .rows
        .iter()
        .filter(|r| !r.is_ok())
        .map(|r| json!({"detector": r.detector, "dataset": r.dataset}))
        .collect();
    let value = json!({
        "condition": cfg.condition,
        "id_accuracy": t.id_accuracy,
        "probe_loss": t.probe_trace,
        "cider_loss": t.cider_trace.iter().map(|e| json!({
            "dispersion": e.dispersion,
            "compactness": e.compactness,
            "total": e.total,
        })).collect::<Vec<_>>(),
        "rows": out.report.rows.len(),
        "failed": failed,
    });
    let mut text = serde_json::to_string_pretty(&value).expect("plain JSON value");
    text.push('\n');
    text
}

/// Writes `report.csv`, `report.md`, `summary.json` and the model
/// checkpoints into `out`, replacing it as a whole.
pub fn write_outputs(cfg: &RunConfig, out: &Path, result: &RunOutput) -> Result<PathBuf> {
    let staged = StagedDir::new(out)?;
    staged.write("report.csv", result.report.to_csv().as_bytes())?;
    staged.write("report.md", result.report.to_markdown().as_bytes())?;
    staged.write("summary.json", summary_json(cfg, result).as_bytes())?;
    let models = &result.trained.models;
    staged.write("probe.ckpt", &probe_container(&models.probe).encode()?)?;
    if let (Some(model), Some(c)) = (&models.cider, &cfg.cider) {
        staged.write("cider.ckpt", &cider_container(model, c)?.encode()?)?;
    }
    staged.commit()
}

/// Loads inputs, runs the condition and writes every output atomically.
pub fn run(cfg: &RunConfig, out: &Path, threads: usize) -> Result<RunOutput> {
    let inputs = Inputs::load(cfg)?;
    let result = execute(cfg, &inputs, threads)?;
    write_outputs(cfg, out, &result)?;
    Ok(result)
}
