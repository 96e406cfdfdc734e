//! JSON run configuration.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every structural or parameter problem is reported as
//! [`Error::Config`], before any data is read.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ood_forge_core::cider::CiderConfig;
use ood_forge_core::dataset::SyntheticSpec;
use ood_forge_core::detectors::{DetectorKind, DetectorSpec, KlMode, OdinConfig, OdinMode, RankWeight};
use ood_forge_core::nnet::TrainConfig;
use ood_forge_core::pipeline::{Condition, EvalOptions};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::{Error, Result};

fn invalid(section: &str, e: ood_forge_core::Error) -> Error {
    Error::config(format!("{section}: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionName {
    Baseline,
    Cider,
}

/// Probe training section; every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        TrainConfig::default().into()
    }
}

impl From<TrainConfig> for ProbeSettings {
    fn from(c: TrainConfig) -> Self {
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            seed: c.seed,
            weight_decay: c.weight_decay,
        }
    }
}

impl From<ProbeSettings> for TrainConfig {
    fn from(s: ProbeSettings) -> Self {
        Self {
            epochs: s.epochs,
            batch_size: s.batch_size,
            learning_rate: s.learning_rate,
            seed: s.seed,
            weight_decay: s.weight_decay,
        }
    }
}

/// Projection-head training section; every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CiderSettings {
    pub hidden: Option<usize>,
    pub projection_dim: usize,
    pub temperature: f64,
    pub prototype_momentum: f64,
    pub compactness_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adapter: bool,
}

impl Default for CiderSettings {
    fn default() -> Self {
        CiderConfig::default().into()
    }
}

impl From<CiderConfig> for CiderSettings {
    fn from(c: CiderConfig) -> Self {
        Self {
            hidden: c.hidden,
            projection_dim: c.projection_dim,
            temperature: c.temperature,
            prototype_momentum: c.prototype_momentum,
            compactness_weight: c.compactness_weight,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            seed: c.seed,
            adapter: c.adapter,
        }
    }
}

impl From<CiderSettings> for CiderConfig {
    fn from(s: CiderSettings) -> Self {
        Self {
            hidden: s.hidden,
            projection_dim: s.projection_dim,
            temperature: s.temperature,
            prototype_momentum: s.prototype_momentum,
            compactness_weight: s.compactness_weight,
            epochs: s.epochs,
            batch_size: s.batch_size,
            learning_rate: s.learning_rate,
            seed: s.seed,
            adapter: s.adapter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub tpr: f64,
    pub balanced: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            tpr: o.tpr,
            balanced: o.balanced,
        }
    }
}

/// Input of `gen-synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSettings {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub noise_sigma: f64,
    pub ood_shift: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSettings {
    pub fn parse(text: &str) -> Result<SyntheticSpec> {
        let s: SyntheticSettings =
            serde_json::from_str(text).map_err(|e| Error::config(format!("synthetic spec: {e}")))?;
        let spec = SyntheticSpec {
            classes: s.classes,
            dim: s.dim,
            per_class: s.per_class,
            noise_sigma: s.noise_sigma,
            ood_shift: s.ood_shift,
            seed: s.seed,
        };
        spec.validate().map_err(|e| invalid("synthetic spec", e))?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<SyntheticSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    id_train: PathBuf,
    #[serde(default)]
    id_val: Option<PathBuf>,
    id_test: PathBuf,
    ood: Vec<PathBuf>,
    condition: ConditionName,
    #[serde(default)]
    detectors: Option<Vec<Value>>,
    #[serde(default)]
    probe: ProbeSettings,
    #[serde(default)]
    cider: Option<CiderSettings>,
    #[serde(default)]
    evaluation: EvalSettings,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    seed: Option<u64>,
}

/// A validated configuration with resolved paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub id_train: PathBuf,
    pub id_val: Option<PathBuf>,
    pub id_test: PathBuf,
    pub ood: Vec<PathBuf>,
    pub condition: ConditionName,
    pub detectors: Vec<DetectorSpec>,
    pub probe: TrainConfig,
    pub cider: Option<CiderConfig>,
    pub evaluation: EvalOptions,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parses and validates `text`, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        if raw.ood.is_empty() {
            return Err(Error::config("\"ood\" must list at least one file"));
        }
        let detectors = match raw.detectors {
            None => DetectorKind::ALL.iter().map(|&k| DetectorSpec::default_for(k)).collect(),
            Some(entries) => parse_detectors(&entries)?,
        };
        let mut probe: TrainConfig = raw.probe.into();
        let mut cider: Option<CiderConfig> = raw.cider.map(Into::into);
        if let Some(seed) = raw.seed {
            probe.seed = seed;
            if let Some(c) = cider.as_mut() {
                c.seed = seed;
            }
        }
        probe.validate().map_err(|e| invalid("probe", e))?;
        if let Some(c) = &cider {
            c.validate().map_err(|e| invalid("cider", e))?;
        }
        if raw.condition == ConditionName::Cider && cider.is_none() {
            return Err(Error::config(
                "condition \"cider\" requires a \"cider\" section (use {} for defaults)",
            ));
        }
        let evaluation = EvalOptions {
            tpr: raw.evaluation.tpr,
            balanced: raw.evaluation.balanced,
        };
        if !(evaluation.tpr > 0.0 && evaluation.tpr <= 1.0) {
            return Err(Error::config(format!(
                "evaluation: tpr {} outside (0, 1]",
                evaluation.tpr
            )));
        }
        Ok(Self {
            id_train: resolve(raw.id_train),
            id_val: raw.id_val.map(resolve),
            id_test: resolve(raw.id_test),
            ood: raw.ood.into_iter().map(resolve).collect(),
            condition: raw.condition,
            detectors,
            probe,
            cider,
            evaluation,
            out: raw.out.map(resolve),
        })
    }

    /// Reads, validates and checks that every referenced input exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::config(format!("config file {} not found", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let cfg = Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Path> {
        [&self.id_train]
            .into_iter()
            .chain(self.id_val.as_ref())
            .chain([&self.id_test])
            .chain(&self.ood)
            .map(PathBuf::as_path)
    }

    pub fn check_files(&self) -> Result<()> {
        let missing: Vec<String> = self
            .inputs()
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!("missing input files: {}", missing.join(", "))))
        }
    }

    /// Overrides the probe and projection-head seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.probe.seed = seed;
        if let Some(c) = self.cider.as_mut() {
            c.seed = seed;
        }
        self
    }

    pub fn pipeline_condition(&self) -> Result<Condition> {
        match (self.condition, &self.cider) {
            (ConditionName::Baseline, _) => Ok(Condition::Baseline),
            (ConditionName::Cider, Some(c)) => Ok(Condition::Cider(c.clone())),
            (ConditionName::Cider, None) => Err(Error::config("missing \"cider\" section")),
        }
    }
}

fn detector_kind(name: &str) -> Result<DetectorKind> {
    name.parse()
        .map_err(|_| Error::config(format!("unknown detector {name:?}")))
}

/// Parses detector entries: a bare name or an object with `name` and
/// hyperparameters.
pub fn parse_detectors(entries: &[Value]) -> Result<Vec<DetectorSpec>> {
    let mut seen = BTreeSet::new();
    let mut specs = Vec::with_capacity(entries.len());
    for entry in entries {
        let spec = parse_detector(entry)?;
        if !seen.insert(spec.kind()) {
            return Err(Error::config(format!(
                "detector {:?} listed twice",
                spec.kind().key()
            )));
        }
        specs.push(spec);
    }
    if specs.is_empty() {
        return Err(Error::config("\"detectors\" is empty"));
    }
    Ok(specs)
}

pub fn parse_detector(entry: &Value) -> Result<DetectorSpec> {
    let (name, params) = match entry {
        Value::String(s) => (s.as_str(), Map::new()),
        Value::Object(m) => {
            let name = m
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::config("detector entry without a \"name\""))?;
            let mut params = m.clone();
            params.remove("name");
            (name, params)
        }
        other => return Err(Error::config(format!("bad detector entry {other}"))),
    };
    let kind = detector_kind(name)?;
    let mut params = Params {
        key: kind.key(),
        map: params,
    };
    let spec = match DetectorSpec::default_for(kind) {
        DetectorSpec::Energy { temperature } => DetectorSpec::Energy {
            temperature: params.f64("temperature", temperature)?,
        },
        DetectorSpec::Odin(d) => DetectorSpec::Odin(OdinConfig {
            temperature: params.f64("temperature", d.temperature)?,
            epsilon: params.f64("epsilon", d.epsilon)?,
            mode: match params.string("odin_mode")?.as_deref() {
                None => d.mode,
                Some("perturbed") => OdinMode::Perturbed,
                Some("difference") => OdinMode::Difference,
                Some(other) => return Err(Error::config(format!("odin: unknown odin_mode {other:?}"))),
            },
        }),
        DetectorSpec::KlMatching { mode } => DetectorSpec::KlMatching {
            mode: match params.string("kl_mode")?.as_deref() {
                None => mode,
                Some("per_class") => KlMode::PerClass,
                Some("global") => KlMode::Global,
                Some(other) => return Err(Error::config(format!("klmatching: unknown kl_mode {other:?}"))),
            },
        },
        DetectorSpec::OpenMax {
            tail,
            alpha,
            rank_weight,
        } => DetectorSpec::OpenMax {
            tail: params.usize("tail")?.unwrap_or(tail),
            alpha: params.usize("alpha")?.or(alpha),
            rank_weight: match params.usize("openmax_rank_offset")? {
                None => rank_weight,
                Some(1) => RankWeight::Inclusive,
                Some(0) => RankWeight::Exclusive,
                Some(other) => {
                    return Err(Error::config(format!(
                        "openmax: openmax_rank_offset must be 0 or 1, got {other}"
                    )))
                }
            },
        },
        plain => plain,
    };
    params.finish()?;
    spec.validate().map_err(|e| invalid(kind.key(), e))?;
    Ok(spec)
}

struct Params {
    key: &'static str,
    map: Map<String, Value>,
}

impl Params {
    fn bad(&self, field: &str, want: &str) -> Error {
        Error::config(format!("{}: {field} must be {want}", self.key))
    }

    fn f64(&mut self, field: &str, default: f64) -> Result<f64> {
        match self.map.remove(field) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| self.bad(field, "a number")),
        }
    }

    /// `null` and absence both yield `None`.
    fn usize(&mut self, field: &str) -> Result<Option<usize>> {
        match self.map.remove(field) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .and_then(|x| usize::try_from(x).ok())
                .map(Some)
                .ok_or_else(|| self.bad(field, "a non-negative integer")),
        }
    }

    fn string(&mut self, field: &str) -> Result<Option<String>> {
        match self.map.remove(field) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.bad(field, "a string")),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::config(format!(
                "unknown parameter {k:?} for detector {}",
                self.key
            ))),
        }
    }
}

/// Inverse of [`parse_detector`]: the entry as an object with every
/// hyperparameter spelled out.
pub fn detector_json(spec: &DetectorSpec) -> Value {
    let name = spec.kind().key();
    match spec {
        DetectorSpec::Energy { temperature } => json!({"name": name, "temperature": temperature}),
        DetectorSpec::Odin(c) => json!({
            "name": name,
            "temperature": c.temperature,
            "epsilon": c.epsilon,
            "odin_mode": match c.mode {
                OdinMode::Perturbed => "perturbed",
                OdinMode::Difference => "difference",
            },
        }),
        DetectorSpec::KlMatching { mode } => json!({
            "name": name,
            "kl_mode": match mode {
                KlMode::PerClass => "per_class",
                KlMode::Global => "global",
            },
        }),
        DetectorSpec::OpenMax {
            tail,
            alpha,
            rank_weight,
        } => json!({
            "name": name,
            "tail": tail,
            "alpha": alpha,
            "openmax_rank_offset": match rank_weight {
                RankWeight::Inclusive => 1,
                RankWeight::Exclusive => 0,
            },
        }),
        _ => json!({ "name": name }),
    }
}
