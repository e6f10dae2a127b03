//! Image features. Real data is read from a precomputed store written by an
//! external extraction tool; the synthetic backbone derives vectors from the
//! image id itself.
//!
//! Store layout: `features.bin` holds one record per image,
//! `[u32 id_len][id utf-8][u32 dim][dim x f32]`, all little-endian, and
//! `features.json` maps each id to the byte offset of its record.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const STORE_DATA: &str = "features.bin";
pub const STORE_INDEX: &str = "features.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    #[serde(rename = "resnet152-like")]
    Resnet152Like,
    #[serde(rename = "vgg19-like")]
    Vgg19Like,
    Synthetic,
}

impl Backbone {
    /// Output width of the pooled backbone features, if fixed.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            Backbone::Resnet152Like => Some(2048),
            Backbone::Vgg19Like => Some(4096),
            Backbone::Synthetic => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backbone::Resnet152Like => "resnet152-like",
            Backbone::Vgg19Like => "vgg19-like",
            Backbone::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "resnet152-like" | "resnet152" => Ok(Backbone::Resnet152Like),
            "vgg19-like" | "vgg19" => Ok(Backbone::Vgg19Like),
            "synthetic" => Ok(Backbone::Synthetic),
            other => Err(format!(
                "unknown backbone {other:?} (expected resnet152-like, vgg19-like or synthetic)"
            )),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreIndex {
    backbone: Backbone,
    dim: usize,
    records: BTreeMap<String, u64>,
}

/// How to reconstruct a provider; stored alongside cached examples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub backbone: Backbone,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
}

enum Source {
    Store {
        data: Mutex<File>,
        records: BTreeMap<String, u64>,
        dir: PathBuf,
    },
    Synthetic {
        seed: u64,
    },
}

pub struct FeatureProvider {
    backbone: Backbone,
    dim: usize,
    source: Source,
}

impl fmt::Debug for FeatureProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureProvider")
            .field("backbone", &self.backbone)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

fn seed_from(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn gaussian(seed: u64, key: &str, dim: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[&seed.to_le_bytes(), key.as_bytes()]));
    Array1::from_iter((0..dim).map(|_| StandardNormal.sample(&mut rng)))
}

impl FeatureProvider {
    /// Synthetic vectors: the part of the id before `#` is split on `.` into
    /// concept tags, each tag contributes a fixed random prototype, and the
    /// full id adds a small per-image perturbation.
    pub fn synthetic(seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("synthetic feature dimension must be >= 1".into()));
        }
        Ok(Self {
            backbone: Backbone::Synthetic,
            dim,
            source: Source::Synthetic { seed },
        })
    }

    /// Relabels a synthetic provider as standing in for `backbone`; the
    /// dimension must match the backbone's fixed width.
    pub fn with_backbone(mut self, backbone: Backbone) -> Result<Self> {
        if !matches!(self.source, Source::Synthetic { .. }) {
            return Err(Error::Config("only synthetic providers can be relabelled".into()));
        }
        if let Some(expected) = backbone.fixed_dim() {
            if expected != self.dim {
                return Err(Error::Config(format!(
                    "{backbone} features have dimension {expected}, not {}",
                    self.dim
                )));
            }
        }
        self.backbone = backbone;
        Ok(self)
    }

    pub fn open_store(dir: &Path) -> Result<Self> {
        let index_path = dir.join(STORE_INDEX);
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: StoreIndex =
            serde_json::from_str(&text).map_err(|e| Error::json(&index_path, e))?;
        if let Some(expected) = index.backbone.fixed_dim() {
            if expected != index.dim {
                return Err(Error::FeatureStore(format!(
                    "{} features must have dimension {expected}, store declares {}",
                    index.backbone, index.dim
                )));
            }
        }
        let data_path = dir.join(STORE_DATA);
        let data = File::open(&data_path).map_err(|e| Error::io(&data_path, e))?;
        Ok(Self {
            backbone: index.backbone,
            dim: index.dim,
            source: Source::Store {
                data: Mutex::new(data),
                records: index.records,
                dir: dir.to_path_buf(),
            },
        })
    }

    pub fn from_spec(spec: &ProviderSpec, base: &Path) -> Result<Self> {
        let provider = match (&spec.store, spec.seed) {
            (Some(store), _) => Self::open_store(&base.join(store))?,
            (None, Some(seed)) => Self::synthetic(seed, spec.dim)?.with_backbone(spec.backbone)?,
            (None, None) => {
                return Err(Error::Config(
                    "feature spec needs either a store path or a synthetic seed".into(),
                ))
            }
        };
        if provider.backbone != spec.backbone || provider.dim != spec.dim {
            return Err(Error::FeatureStore(format!(
                "expected {} features of dim {}, found {} of dim {}",
                spec.backbone, spec.dim, provider.backbone, provider.dim
            )));
        }
        Ok(provider)
    }

    pub fn spec(&self) -> ProviderSpec {
        match &self.source {
            Source::Synthetic { seed } => ProviderSpec {
                backbone: self.backbone,
                dim: self.dim,
                seed: Some(*seed),
                store: None,
            },
            Source::Store { dir, .. } => ProviderSpec {
                backbone: self.backbone,
                dim: self.dim,
                seed: None,
                store: Some(dir.clone()),
            },
        }
    }

    pub fn backbone(&self) -> Backbone {
        self.backbone
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, image_id: &str) -> bool {
        match &self.source {
            Source::Synthetic { .. } => true,
            Source::Store { records, .. } => records.contains_key(image_id),
        }
    }

    pub fn get_features(&self, image_id: &str) -> Result<Array1<f64>> {
        match &self.source {
            Source::Synthetic { seed } => Ok(self.synthetic_features(*seed, image_id)),
            Source::Store { data, records, .. } => {
                let offset = *records
                    .get(image_id)
                    .ok_or_else(|| Error::UnknownImage(image_id.to_string()))?;
                let mut file = data.lock().expect("feature store lock poisoned");
                read_record(&mut file, offset, image_id, self.dim)
            }
        }
    }

    fn synthetic_features(&self, seed: u64, image_id: &str) -> Array1<f64> {
        let concepts = image_id.split('#').next().unwrap_or(image_id);
        let tags: Vec<&str> = concepts.split('.').filter(|t| !t.is_empty()).collect();
        let mut v = Array1::zeros(self.dim);
        let scale = 1.0 / (tags.len().max(1) as f64).sqrt();
        for tag in &tags {
            v.scaled_add(scale, &gaussian(seed, tag, self.dim));
        }
        v.scaled_add(0.1, &gaussian(seed ^ 0x9e37_79b9_7f4a_7c15, image_id, self.dim));
        v
    }
}

fn read_u32(file: &mut File) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    file.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_record(file: &mut File, offset: u64, image_id: &str, dim: usize) -> Result<Array1<f64>> {
    let bad = |msg: String| Error::FeatureStore(format!("record for {image_id:?}: {msg}"));
    let io = |e: std::io::Error| bad(e.to_string());
    file.seek(SeekFrom::Start(offset)).map_err(io)?;
    let id_len = read_u32(file).map_err(io)? as usize;
    let mut id = vec![0u8; id_len];
    file.read_exact(&mut id).map_err(io)?;
    if id != image_id.as_bytes() {
        return Err(bad(format!("index points at {:?}", String::from_utf8_lossy(&id))));
    }
    let record_dim = read_u32(file).map_err(io)? as usize;
    if record_dim != dim {
        return Err(bad(format!("dimension {record_dim}, expected {dim}")));
    }
    let mut raw = vec![0u8; dim * 4];
    file.read_exact(&mut raw).map_err(io)?;
    let values: Array1<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    Ok(values)
}

/// Writes a feature store in the on-disk format read by
/// [`FeatureProvider::open_store`].
pub struct FeatureStoreWriter {
    dir: PathBuf,
    out: BufWriter<File>,
    backbone: Backbone,
    dim: usize,
    offset: u64,
    records: BTreeMap<String, u64>,
}

impl FeatureStoreWriter {
    pub fn create(dir: &Path, backbone: Backbone, dim: usize) -> Result<Self> {
        if backbone.fixed_dim().is_some_and(|d| d != dim) || dim == 0 {
            return Err(Error::FeatureStore(format!(
                "dimension {dim} is not valid for {backbone}"
            )));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(STORE_DATA);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            out: BufWriter::new(file),
            backbone,
            dim,
            offset: 0,
            records: BTreeMap::new(),
        })
    }

    pub fn add(&mut self, image_id: &str, features: &[f32]) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::Shape(format!(
                "feature for {image_id:?} has length {}, store dimension is {}",
                features.len(),
                self.dim
            )));
        }
        if self.records.contains_key(image_id) {
            return Err(Error::FeatureStore(format!("duplicate image id {image_id:?}")));
        }
        let path = self.dir.join(STORE_DATA);
        let io = |e| Error::io(&path, e);
        let id = image_id.as_bytes();
        self.out.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
        self.out.write_all(id).map_err(io)?;
        self.out.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        for v in features {
            self.out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        self.records.insert(image_id.to_string(), self.offset);
        self.offset += 8 + id.len() as u64 + 4 * self.dim as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        let data_path = self.dir.join(STORE_DATA);
        self.out.flush().map_err(|e| Error::io(&data_path, e))?;
        let index = StoreIndex {
            backbone: self.backbone,
            dim: self.dim,
            records: self.records,
        };
        let index_path = self.dir.join(STORE_INDEX);
        let text = serde_json::to_string(&index).expect("index serializes");
        fs::write(&index_path, text).map_err(|e| Error::io(&index_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_store(dir: &Path, backbone: Backbone, dim: usize, ids: &[&str]) {
        let mut w = FeatureStoreWriter::create(dir, backbone, dim).unwrap();
        for (k, id) in ids.iter().enumerate() {
            let v: Vec<f32> = (0..dim).map(|i| (k * dim + i) as f32 * 0.25).collect();
            w.add(id, &v).unwrap();
        }
        w.finish().unwrap();
    }

    #[test]
    fn backbone_dimensions() {
        for (backbone, dim) in [(Backbone::Resnet152Like, 2048), (Backbone::Vgg19Like, 4096)] {
            let dir = tempfile::tempdir().unwrap();
            write_store(dir.path(), backbone, dim, &["a", "b"]);
            let p = FeatureProvider::open_store(dir.path()).unwrap();
            assert_eq!(p.backbone(), backbone);
            let f = p.get_features("b").unwrap();
            assert_eq!(f.len(), dim);
            assert_eq!(f[0], dim as f64 * 0.25);
            assert!(f.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn store_rejects_bad_dimensions_and_unknown_ids() {
        let dir = tempfile::tempdir().unwrap();
        assert!(FeatureStoreWriter::create(dir.path(), Backbone::Resnet152Like, 10).is_err());
        write_store(dir.path(), Backbone::Synthetic, 3, &["x"]);
        let p = FeatureProvider::open_store(dir.path()).unwrap();
        assert!(matches!(p.get_features("y"), Err(Error::UnknownImage(id)) if id == "y"));
        let mut w = FeatureStoreWriter::create(dir.path(), Backbone::Synthetic, 3).unwrap();
        assert!(w.add("short", &[1.0]).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let p = FeatureProvider::synthetic(7, 16).unwrap();
        let a = p.get_features("x").unwrap();
        assert_eq!(a, p.get_features("x").unwrap());
        assert_eq!(a.len(), 16);
        assert_ne!(a, p.get_features("y").unwrap());
        assert_ne!(a, FeatureProvider::synthetic(8, 16).unwrap().get_features("x").unwrap());
    }

    #[test]
    fn synthetic_shared_concepts_correlate() {
        let p = FeatureProvider::synthetic(1, 64).unwrap();
        let cos = |a: &Array1<f64>, b: &Array1<f64>| a.dot(b) / (a.dot(a) * b.dot(b)).sqrt();
        let a = p.get_features("beach.dog#1").unwrap();
        let b = p.get_features("beach.dog#2").unwrap();
        let c = p.get_features("city.cat#3").unwrap();
        assert!(cos(&a, &b) > 0.9);
        assert!(cos(&a, &c) < 0.6);
    }

    #[test]
    fn spec_round_trip() {
        let p = FeatureProvider::synthetic(3, 5).unwrap();
        let q = FeatureProvider::from_spec(&p.spec(), Path::new(".")).unwrap();
        assert_eq!(p.get_features("z").unwrap(), q.get_features("z").unwrap());
    }

    #[test]
    fn relabelled_synthetic_provider() {
        let p = FeatureProvider::synthetic(3, 4096).unwrap().with_backbone(Backbone::Vgg19Like).unwrap();
        let q = FeatureProvider::from_spec(&p.spec(), Path::new(".")).unwrap();
        assert_eq!(q.backbone(), Backbone::Vgg19Like);
        assert!(FeatureProvider::synthetic(3, 16).unwrap().with_backbone(Backbone::Resnet152Like).is_err());
    }
}
