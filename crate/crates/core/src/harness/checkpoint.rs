use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::autodiff::{ParamSet, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Planner parameters, their inner-loop rates and the training-stage counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: usize,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Row-major little-endian f64, base64.
    values: String,
    rates: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u32,
    kind: String,
    stage: usize,
    /// Hex SHA-256 over the stage counter and every entry.
    digest: String,
    params: Vec<Entry>,
}

fn le_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn from_le_bytes(bytes: &[u8], shape: &[usize], name: &str) -> Result<Tensor, HarnessError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(HarnessError::Checkpoint(format!(
            "`{name}`: byte length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape.to_vec(), data)
        .map_err(|e| HarnessError::Checkpoint(format!("`{name}`: {e}")))
}

/// Name, shape, value bytes and rate bytes of one stored tensor.
type EncodedEntry = (String, Vec<usize>, Vec<u8>, Vec<u8>);

fn digest(stage: usize, entries: &[EncodedEntry]) -> String {
    let mut h = Sha256::new();
    h.update((stage as u64).to_le_bytes());
    for (name, shape, values, rates) in entries {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((shape.len() as u64).to_le_bytes());
        for &d in shape {
            h.update((d as u64).to_le_bytes());
        }
        h.update(values);
        h.update(rates);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(stage: usize, params: ParamSet) -> Self {
        Self { stage, params }
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<_> = self
            .params
            .iter()
            .map(|(name, v, r)| {
                (
                    name.to_string(),
                    v.shape().to_vec(),
                    le_bytes(v),
                    le_bytes(r),
                )
            })
            .collect();
        let doc = Document {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: "checkpoint".into(),
            stage: self.stage,
            digest: digest(self.stage, &raw),
            params: raw
                .into_iter()
                .map(|(name, shape, v, r)| Entry {
                    name,
                    shape,
                    values: B64.encode(v),
                    rates: B64.encode(r),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("checkpoint serializes")
    }

    /// Parses a checkpoint, verifying its version and digest.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let doc: Document =
            serde_json::from_str(text).map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
        if doc.format_version != CHECKPOINT_FORMAT_VERSION || doc.kind != "checkpoint" {
            return Err(HarnessError::Checkpoint(format!(
                "unsupported checkpoint format_version {} kind `{}`",
                doc.format_version, doc.kind
            )));
        }
        let mut raw = Vec::with_capacity(doc.params.len());
        for e in doc.params {
            let decode = |s: &str| {
                B64.decode(s)
                    .map_err(|err| HarnessError::Checkpoint(format!("`{}`: {err}", e.name)))
            };
            let (v, r) = (decode(&e.values)?, decode(&e.rates)?);
            raw.push((e.name, e.shape, v, r));
        }
        let actual = digest(doc.stage, &raw);
        if actual != doc.digest {
            return Err(HarnessError::Checkpoint(format!(
                "digest mismatch: file says {}, content hashes to {actual}",
                doc.digest
            )));
        }
        let mut params = ParamSet::new();
        for (name, shape, v, r) in raw {
            let value = from_le_bytes(&v, &shape, &name)?;
            let rates = from_le_bytes(&r, &shape, &name)?;
            params
                .insert_with_rates(&name, value, rates)
                .map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
        }
        Ok(Self {
            stage: doc.stage,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json()).map_err(|e| HarnessError::io(path, e))
    }

    /// Loads `path`, naming the file when it does not exist.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        if !path.exists() {
            return Err(HarnessError::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }
}
