//! Tensor containers for trained models and fitted detectors.
//!
//! Layout: the five bytes `OFT1\n`, one JSON header line
//! `{"kind":K,"dtype":"f32"|"f64","meta":{..},"tensors":[{"name":N,"shape":[..]},..]}\n`,
//! then every tensor's values little-endian and row-major, in header order.
//! Models are stored as `f32`, fitted detector states as `f64`.

use std::fs;
use std::path::Path;

use ood_forge_core::cider::{CiderConfig, CiderModel, PrototypeBank};
use ood_forge_core::detectors::{
    DetectorKind, DetectorSpec, FittedDetector, KlMatchingState, MahalanobisState, OpenMaxState,
};
use ood_forge_core::evt::WeibullModel;
use ood_forge_core::nnet::{Dense, LinearProbe, Mlp};
use ood_forge_core::numerics::Matrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{detector_json, parse_detector, CiderSettings};
use crate::fsutil::write_atomic;
use crate::{Error, Result};

pub const MAGIC: &[u8; 5] = b"OFT1\n";

pub const KIND_PROBE: &str = "probe";
pub const KIND_CIDER: &str = "cider";
pub const KIND_DETECTOR: &str = "detector";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn matrix(name: impl Into<String>, m: &Matrix) -> Self {
        Self {
            name: name.into(),
            shape: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn vector(name: impl Into<String>, v: &[f64]) -> Self {
        Self {
            name: name.into(),
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorInfo {
    name: String,
    shape: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    dtype: Dtype,
    meta: Value,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub dtype: Dtype,
    pub meta: Value,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            dtype: self.dtype,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorInfo {
                    name: t.name.clone(),
                    shape: t.shape.iter().map(|&s| s as u64).collect(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&header).map_err(|e| Error::format(e.to_string()))?;
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::format(format!("tensor {} does not match its shape", t.name)));
            }
            for &v in &t.data {
                match self.dtype {
                    Dtype::F32 => {
                        let x = v as f32;
                        if !x.is_finite() {
                            return Err(Error::format(format!(
                                "tensor {}: {v} is not representable as f32",
                                t.name
                            )));
                        }
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| Error::format("bad magic, expected OFT1"))?;
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("unterminated header line"))?;
        let header: Header = serde_json::from_slice(&rest[..end])
            .map_err(|e| Error::format(format!("header: {e}")))?;
        let body = &rest[end + 1..];
        let width = header.dtype.width() as u64;
        let mut expected = 0u64;
        for t in &header.tensors {
            let count = t
                .shape
                .iter()
                .try_fold(1u64, |acc, &s| acc.checked_mul(s))
                .and_then(|c| c.checked_mul(width))
                .ok_or_else(|| Error::format(format!("tensor {} is too large", t.name)))?;
            expected = expected
                .checked_add(count)
                .ok_or_else(|| Error::format("tensors are too large"))?;
        }
        if body.len() as u64 != expected {
            return Err(Error::Length {
                expected,
                found: body.len() as u64,
            });
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let shape: Vec<usize> = info.shape.iter().map(|&s| s as usize).collect();
            let count: usize = shape.iter().product();
            let raw = &body[offset..offset + count * width as usize];
            offset += raw.len();
            let data: Vec<f64> = match header.dtype {
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                    .collect(),
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
                    .collect(),
            };
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(format!("tensor {} has non-finite values", info.name)));
            }
            tensors.push(Tensor {
                name: info.name,
                shape,
                data,
            });
        }
        Ok(Self {
            kind: header.kind,
            dtype: header.dtype,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode().map_err(|e| e.in_file(path))?;
        write_atomic(path, &bytes)
    }

    /// Reads a container and checks its kind.
    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let c = Self::decode(&bytes).map_err(|e| e.in_file(path))?;
        if c.kind != kind {
            return Err(Error::format(format!("expected a {kind} container, found {:?}", c.kind))
                .in_file(path));
        }
        Ok(c)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(format!("missing tensor {name}")))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let t = self.tensor(name)?;
        match t.shape[..] {
            [r, c] => Ok(Matrix::new(r, c, t.data.clone())?),
            _ => Err(Error::format(format!("tensor {name} is not a matrix"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let t = self.tensor(name)?;
        match t.shape[..] {
            [_] => Ok(t.data.clone()),
            _ => Err(Error::format(format!("tensor {name} is not a vector"))),
        }
    }

    fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| Error::format(format!("meta.{key} missing or not an integer")))
    }
}

fn push_mlp(tensors: &mut Vec<Tensor>, prefix: &str, mlp: &Mlp) {
    for (i, layer) in mlp.layers().iter().enumerate() {
        tensors.push(Tensor::matrix(format!("{prefix}.{i}.weight"), &layer.weights));
        tensors.push(Tensor::vector(format!("{prefix}.{i}.bias"), &layer.bias));
    }
}

fn read_mlp(c: &Container, prefix: &str, layers: usize) -> Result<Mlp> {
    let dense = (0..layers)
        .map(|i| {
            Ok(Dense::new(
                c.matrix(&format!("{prefix}.{i}.weight"))?,
                c.vector(&format!("{prefix}.{i}.bias"))?,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mlp::from_layers(dense)?)
}

pub fn probe_container(probe: &LinearProbe) -> Container {
    Container {
        kind: KIND_PROBE.to_string(),
        dtype: Dtype::F32,
        meta: json!({}),
        tensors: vec![
            Tensor::matrix("probe.weight", probe.weights()),
            Tensor::vector("probe.bias", probe.bias()),
        ],
    }
}

pub fn probe_from(c: &Container) -> Result<LinearProbe> {
    Ok(LinearProbe::new(c.matrix("probe.weight")?, c.vector("probe.bias")?)?)
}

pub fn cider_container(model: &CiderModel, cfg: &CiderConfig) -> Result<Container> {
    let mut tensors = Vec::new();
    push_mlp(&mut tensors, "head", &model.head);
    if let Some(a) = &model.adapter {
        push_mlp(&mut tensors, "adapter", a);
    }
    tensors.push(Tensor::matrix("prototypes", model.bank.prototypes()));
    let config = serde_json::to_value(CiderSettings::from(cfg.clone()))
        .map_err(|e| Error::format(e.to_string()))?;
    Ok(Container {
        kind: KIND_CIDER.to_string(),
        dtype: Dtype::F32,
        meta: json!({
            "config": config,
            "head_layers": model.head.layers().len(),
            "adapter_layers": model.adapter.as_ref().map_or(0, |a| a.layers().len()),
        }),
        tensors,
    })
}

pub fn cider_from(c: &Container) -> Result<(CiderModel, CiderConfig)> {
    let settings: CiderSettings = c
        .meta
        .get("config")
        .cloned()
        .ok_or_else(|| Error::format("meta.config missing"))
        .and_then(|v| serde_json::from_value(v).map_err(|e| Error::format(format!("meta.config: {e}"))))?;
    let cfg = CiderConfig::from(settings);
    let head = read_mlp(c, "head", c.meta_usize("head_layers")?)?;
    let adapter = match c.meta_usize("adapter_layers")? {
        0 => None,
        n => Some(read_mlp(c, "adapter", n)?),
    };
    let bank = PrototypeBank::new(c.matrix("prototypes")?, cfg.prototype_momentum, cfg.temperature)?;
    if bank.dim() != head.output_dim() {
        return Err(Error::format("prototype width differs from the head output"));
    }
    if let Some(a) = &adapter {
        if a.output_dim() != head.input_dim() {
            return Err(Error::format("adapter output differs from the head input"));
        }
    }
    Ok((CiderModel { head, adapter, bank }, cfg))
}

/// Hyperparameters that produced a fitted state.
pub fn fitted_spec(det: &FittedDetector) -> Option<DetectorSpec> {
    Some(match det {
        FittedDetector::MaxSoftmax => DetectorSpec::MaxSoftmax,
        FittedDetector::MaxLogit => DetectorSpec::MaxLogit,
        FittedDetector::Mahalanobis(_) => DetectorSpec::Mahalanobis,
        FittedDetector::Energy { temperature } => DetectorSpec::Energy {
            temperature: *temperature,
        },
        FittedDetector::Odin(cfg) => DetectorSpec::Odin(*cfg),
        FittedDetector::OpenMax(st) => DetectorSpec::OpenMax {
            tail: st.tail,
            alpha: Some(st.alpha),
            rank_weight: st.rank_weight,
        },
        FittedDetector::KlMatching(_) => return None,
    })
}

pub fn detector_container(det: &FittedDetector) -> Container {
    let meta = fitted_spec(det)
        .map(|s| detector_json(&s))
        .unwrap_or_else(|| json!({ "name": det.kind().key() }));
    let tensors = match det {
        FittedDetector::Mahalanobis(st) => vec![
            Tensor::matrix("class_means", &st.class_means),
            Tensor::matrix("covariance_chol", &st.covariance_chol),
        ],
        FittedDetector::KlMatching(st) => vec![Tensor::matrix("typical", &st.typical)],
        FittedDetector::OpenMax(st) => {
            let weibull: Vec<[f64; 3]> = st.weibulls.iter().map(|w| [w.shape, w.scale, w.shift]).collect();
            vec![
                Tensor::matrix("mavs", &st.mavs),
                Tensor::matrix("weibull", &Matrix::from_rows(&weibull).expect("three columns")),
            ]
        }
        _ => Vec::new(),
    };
    Container {
        kind: KIND_DETECTOR.to_string(),
        dtype: Dtype::F64,
        meta,
        tensors,
    }
}

pub fn detector_from(c: &Container) -> Result<FittedDetector> {
    let name = c
        .meta
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::format("meta.name missing"))?;
    let kind: DetectorKind = name
        .parse()
        .map_err(|_| Error::format(format!("unknown detector {name:?}")))?;
    let spec = || parse_detector(&c.meta).map_err(|e| Error::format(e.to_string()));
    Ok(match kind {
        DetectorKind::MaxSoftmax => FittedDetector::MaxSoftmax,
        DetectorKind::MaxLogit => FittedDetector::MaxLogit,
        DetectorKind::Energy | DetectorKind::Odin => match spec()? {
            DetectorSpec::Energy { temperature } => FittedDetector::Energy { temperature },
            DetectorSpec::Odin(cfg) => FittedDetector::Odin(cfg),
            _ => unreachable!("kind checked above"),
        },
        DetectorKind::Mahalanobis => {
            let class_means = c.matrix("class_means")?;
            let covariance_chol = c.matrix("covariance_chol")?;
            let d = class_means.cols();
            if covariance_chol.rows() != d || covariance_chol.cols() != d {
                return Err(Error::format("covariance factor does not match the class means"));
            }
            FittedDetector::Mahalanobis(MahalanobisState {
                class_means,
                covariance_chol,
            })
        }
        DetectorKind::KlMatching => FittedDetector::KlMatching(KlMatchingState {
            typical: c.matrix("typical")?,
        }),
        DetectorKind::OpenMax => {
            let DetectorSpec::OpenMax {
                tail,
                alpha,
                rank_weight,
            } = spec()?
            else {
                unreachable!("kind checked above")
            };
            let mavs = c.matrix("mavs")?;
            let w = c.matrix("weibull")?;
            if w.cols() != 3 || w.rows() != mavs.rows() || mavs.rows() != mavs.cols() {
                return Err(Error::format("OpenMax tensors have inconsistent shapes"));
            }
            let weibulls = w
                .iter_rows()
                .map(|r| WeibullModel::new(r[0], r[1], r[2]))
                .collect::<ood_forge_core::Result<Vec<_>>>()?;
            FittedDetector::OpenMax(OpenMaxState {
                alpha: alpha.unwrap_or(mavs.rows()),
                mavs,
                weibulls,
                tail,
                rank_weight,
            })
        }
    })
}
