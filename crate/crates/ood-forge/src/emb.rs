//! EMB1 embedding files.
//!
//! Layout: the five bytes `EMB1\n`, one JSON header line
//! `{"dtype":"f32","n":N,"d":D,"has_labels":B,"name":S,"split":S}\n`,
//! `N·D` little-endian `f32` values row-major, then `N` little-endian `i32`
//! labels when `has_labels` is true. A label of `-1` marks an unlabeled
//! row; a file must be either fully labeled or fully unlabeled.

use std::fs;
use std::path::Path;

use ood_forge_core::dataset::{LabeledEmbeddings, Split};
use ood_forge_core::numerics::Matrix;
use serde::{Deserialize, Serialize};

use crate::fsutil::write_atomic;
use crate::{Error, Result};

pub const MAGIC: &[u8; 5] = b"EMB1\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub dtype: String,
    pub n: u64,
    pub d: u64,
    pub has_labels: bool,
    pub name: String,
    pub split: String,
}

impl Header {
    pub fn for_dataset(ds: &LabeledEmbeddings) -> Self {
        Self {
            dtype: "f32".to_string(),
            n: ds.len() as u64,
            d: ds.dim() as u64,
            has_labels: ds.labels().is_some(),
            name: ds.name().to_string(),
            split: ds.split().as_str().to_string(),
        }
    }

    /// Body size in bytes, `None` on overflow.
    pub fn body_len(&self) -> Option<u64> {
        let values = self.n.checked_mul(self.d)?.checked_mul(4)?;
        let labels = if self.has_labels { self.n.checked_mul(4)? } else { 0 };
        values.checked_add(labels)
    }
}

pub fn encode(ds: &LabeledEmbeddings) -> Result<Vec<u8>> {
    let header = serde_json::to_string(&Header::for_dataset(ds))
        .map_err(|e| Error::format(format!("header: {e}")))?;
    let mut out = Vec::with_capacity(MAGIC.len() + header.len() + 1 + 4 * ds.len() * (ds.dim() + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for &v in ds.features().as_slice() {
        let x = v as f32;
        if !x.is_finite() {
            return Err(Error::format(format!("value {v} is not representable as f32")));
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    if let Some(labels) = ds.labels() {
        for &l in labels {
            let l = i32::try_from(l)
                .map_err(|_| Error::format(format!("label {l} does not fit in i32")))?;
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

/// Splits off and parses the header, returning it with the body bytes.
pub fn decode_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let rest = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| Error::format("bad magic, expected EMB1"))?;
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("unterminated header line"))?;
    let header: Header = serde_json::from_slice(&rest[..end])
        .map_err(|e| Error::format(format!("header: {e}")))?;
    if header.dtype != "f32" {
        return Err(Error::format(format!("unsupported dtype {:?}", header.dtype)));
    }
    Ok((header, &rest[end + 1..]))
}

pub fn decode(bytes: &[u8]) -> Result<LabeledEmbeddings> {
    let (header, body) = decode_header(bytes)?;
    let expected = header
        .body_len()
        .ok_or_else(|| Error::format("header dimensions overflow"))?;
    if body.len() as u64 != expected {
        return Err(Error::Length {
            expected,
            found: body.len() as u64,
        });
    }
    let split: Split = header
        .split
        .parse()
        .map_err(|_| Error::format(format!("unknown split {:?}", header.split)))?;
    let n = header.n as usize;
    let d = header.d as usize;
    let (values, label_bytes) = body.split_at(n * d * 4);
    let data = values
        .chunks_exact(4)
        .map(|c| {
            let x = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if x.is_finite() {
                Ok(f64::from(x))
            } else {
                Err(Error::format("non-finite feature value"))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = if header.has_labels {
        decode_labels(label_bytes)?
    } else {
        None
    };
    Ok(LabeledEmbeddings::new(
        Matrix::new(n, d, data)?,
        labels,
        header.name,
        split,
    )?)
}

fn decode_labels(bytes: &[u8]) -> Result<Option<Vec<usize>>> {
    let raw: Vec<i32> = bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let unlabeled = raw.iter().filter(|&&l| l == -1).count();
    if unlabeled == raw.len() {
        return Ok(None);
    }
    if unlabeled > 0 {
        return Err(Error::format("file mixes labeled and unlabeled rows"));
    }
    raw.into_iter()
        .map(|l| usize::try_from(l).map_err(|_| Error::format(format!("negative label {l}"))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn write_emb(ds: &LabeledEmbeddings, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ds).map_err(|e| e.in_file(path))?;
    write_atomic(path, &bytes)
}

pub fn read_emb(path: impl AsRef<Path>) -> Result<LabeledEmbeddings> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}
