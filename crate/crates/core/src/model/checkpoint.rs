//! Single-file checkpoint archive.
//!
//! Layout: the 8-byte magic, a little-endian `u64` header length, the JSON
//! header, then a blob of little-endian `f64` values. The header carries the
//! model config, the run manifest, and for every tensor its name, shape and
//! element offset into the blob: parameters, batch-norm running statistics
//! and (optionally) the Adam moments.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::params::ParamStore;

use super::{Model, ModelConfig, RunningNorm, NORM_LAYERS};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VSTCKPT1";
const DTYPE: &str = "f64-le";

/// Adam state aligned with the parameter order of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Array2<f64>>,
    pub second: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    pub manifest: Option<RunManifest>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    first: Vec<TensorEntry>,
    second: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    #[serde(default)]
    manifest: Option<RunManifest>,
    params: Vec<TensorEntry>,
    norms: Vec<TensorEntry>,
    #[serde(default)]
    optimizer: Option<OptimizerHeader>,
}

struct BlobWriter {
    values: Vec<f64>,
}

impl BlobWriter {
    fn put(&mut self, name: &str, t: &Array2<f64>) -> TensorEntry {
        let offset = self.values.len();
        self.values.extend(t.iter());
        TensorEntry {
            name: name.to_string(),
            shape: [t.nrows(), t.ncols()],
            offset,
        }
    }
}

fn take(blob: &[f64], e: &TensorEntry) -> Result<Array2<f64>> {
    let len = e.shape[0] * e.shape[1];
    let slice = blob
        .get(e.offset..e.offset + len)
        .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the data blob", e.name)))?;
    Array2::from_shape_vec((e.shape[0], e.shape[1]), slice.to_vec())
        .map_err(|err| Error::Checkpoint(format!("{}: {err}", e.name)))
}

/// Content hash of a model's config, parameters and running statistics.
pub fn model_id(model: &Model) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model.config()).expect("config serializes"));
    for id in model.params().ids() {
        h.update(model.params().name(id).as_bytes());
        for v in model.params().get(id) {
            h.update(v.to_le_bytes());
        }
    }
    for norm in model.norms() {
        for v in norm.mean.iter().chain(norm.var.iter()) {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..12])
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            optimizer: None,
            manifest: None,
        }
    }

    pub fn id(&self) -> String {
        model_id(&self.model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let store = self.model.params();
        let mut blob = BlobWriter { values: Vec::new() };
        let params = store
            .ids()
            .map(|id| blob.put(store.name(id), store.get(id)))
            .collect();
        let norms = self
            .model
            .norms()
            .iter()
            .zip(NORM_LAYERS)
            .flat_map(|(n, name)| {
                [
                    (format!("{name}.running_mean"), &n.mean),
                    (format!("{name}.running_var"), &n.var),
                ]
            })
            .map(|(name, v)| blob.put(&name, &v.clone().insert_axis(ndarray::Axis(0))))
            .collect();
        let optimizer = self.optimizer.as_ref().map(|opt| OptimizerHeader {
            step: opt.step,
            first: store
                .ids()
                .zip(&opt.first)
                .map(|(id, m)| blob.put(&format!("{}.adam_m", store.name(id)), m))
                .collect(),
            second: store
                .ids()
                .zip(&opt.second)
                .map(|(id, v)| blob.put(&format!("{}.adam_v", store.name(id)), v))
                .collect(),
        });
        let header = Header {
            dtype: DTYPE.into(),
            config: self.model.config().clone(),
            manifest: self.manifest.clone(),
            params,
            norms,
            optimizer,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * blob.values.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in blob.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic header"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.dtype != DTYPE {
            return Err(Error::Checkpoint(format!("unsupported dtype {}", header.dtype)));
        }
        let data = &bytes[header_end..];
        if data.len() % 8 != 0 {
            return Err(bad("data blob is not a whole number of f64 values"));
        }
        let blob: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut store = ParamStore::default();
        for e in &header.params {
            store.insert(e.name.clone(), take(&blob, e)?);
        }
        if header.norms.len() != 2 * NORM_LAYERS.len() {
            return Err(bad("wrong number of batch-norm statistics"));
        }
        let norms = header
            .norms
            .chunks(2)
            .map(|pair| {
                Ok(RunningNorm {
                    mean: take(&blob, &pair[0])?.into_shape_with_order(pair[0].shape[1]).map_err(|e| Error::Checkpoint(e.to_string()))?,
                    var: take(&blob, &pair[1])?.into_shape_with_order(pair[1].shape[1]).map_err(|e| Error::Checkpoint(e.to_string()))?,
                })
            })
            .collect::<Result<Vec<RunningNorm>>>()?;
        let model = Model::from_parts(header.config, store, Some(norms))?;

        let optimizer = header
            .optimizer
            .map(|o| -> Result<OptimizerState> {
                let load = |entries: &[TensorEntry]| -> Result<Vec<Array2<f64>>> {
                    if entries.len() != model.params().len() {
                        return Err(bad("optimizer state does not match parameters"));
                    }
                    entries
                        .iter()
                        .zip(model.params().ids())
                        .map(|(e, id)| {
                            let t = take(&blob, e)?;
                            if t.dim() != model.params().get(id).dim() {
                                return Err(Error::Checkpoint(format!("{}: wrong shape", e.name)));
                            }
                            Ok(t)
                        })
                        .collect()
                };
                Ok(OptimizerState {
                    step: o.step,
                    first: load(&o.first)?,
                    second: load(&o.second)?,
                })
            })
            .transpose()?;
        Ok(Self {
            model,
            optimizer,
            manifest: header.manifest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
