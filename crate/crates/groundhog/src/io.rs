//! Persistent formats: the GHT1 tensor container and model checkpoints.
//!
//! GHT1 is a flat little-endian container: the magic `GHT1`, a `u32`
//! tensor count, then per tensor a `u32` name length, the UTF-8 name, a
//! `u32` rank, `u64` dimensions, and the row-major `f32` payload. All
//! integers are little-endian. Tensor names are unique and declared
//! sizes must match the payload exactly; round trips are bit-exact.
//!
//! A checkpoint is a GHT1 file holding one tensor per parameter, plus a
//! JSON manifest (same stem, `.json`) recording the training config, the
//! vocabulary, the parameter order, the seed, and the step counter.
//! Optimizer moments are not persisted: resuming restarts them at zero.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::TrainConfig;
use crate::model::params::ParamStore;
use crate::model::vocab::Vocabulary;

pub const GHT1_MAGIC: &[u8; 4] = b"GHT1";
pub const MANIFEST_FORMAT: &str = "groundhog-checkpoint/1";

/// One named tensor in a GHT1 container.
#[derive(Debug, Clone, PartialEq)]
pub struct Ght1Tensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

impl Ght1Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        let t = Self { name: name.into(), dims, data };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<()> {
        let declared = self.dims.iter().try_fold(1u64, |a, &d| a.checked_mul(d));
        match declared {
            Some(n) if n == self.data.len() as u64 => Ok(()),
            _ => Err(Error::Schema(format!(
                "tensor {:?}: dims {:?} do not describe {} values",
                self.name,
                self.dims,
                self.data.len()
            ))),
        }
    }
}

fn check_unique_names(tensors: &[Ght1Tensor]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::Schema(format!("duplicate tensor name {:?}", t.name)));
        }
    }
    Ok(())
}

/// Serialize tensors into the GHT1 byte layout.
pub fn ght1_to_bytes(tensors: &[Ght1Tensor]) -> Result<Vec<u8>> {
    check_unique_names(tensors)?;
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::InvalidArgument("too many tensors".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(GHT1_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        t.check()?;
        let name_len = u32::try_from(t.name.len())
            .map_err(|_| Error::InvalidArgument(format!("tensor name {:?} too long", t.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        let ndim = u32::try_from(t.dims.len())
            .map_err(|_| Error::InvalidArgument("tensor rank too large".into()))?;
        out.extend_from_slice(&ndim.to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Schema(format!("truncated GHT1 payload at byte {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse a GHT1 byte stream; trailing bytes are a schema error.
pub fn ght1_from_bytes(bytes: &[u8]) -> Result<Vec<Ght1Tensor>> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4)? != GHT1_MAGIC {
        return Err(Error::Schema("bad magic, not a GHT1 container".into()));
    }
    let count = c.u32()?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| Error::Schema(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let ndim = c.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(c.u64()?);
        }
        let n = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Schema(format!("tensor {name:?}: dims overflow")))?;
        let raw = c.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Ght1Tensor { name, dims, data });
    }
    if c.at != bytes.len() {
        return Err(Error::Schema(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - c.at
        )));
    }
    check_unique_names(&tensors)?;
    Ok(tensors)
}

pub fn write_ght1(path: &Path, tensors: &[Ght1Tensor]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&ght1_to_bytes(tensors)?)?;
    Ok(())
}

pub fn read_ght1(path: &Path) -> Result<Vec<Ght1Tensor>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    ght1_from_bytes(&bytes)
}

/// Checkpoint sidecar: everything needed to rebuild the model around the
/// tensor file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: TrainConfig,
    pub vocabulary: Vocabulary,
    pub parameter_order: Vec<String>,
    pub seed: u64,
    pub step: usize,
}

/// A loaded checkpoint, ready to evaluate or resume.
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub step: usize,
}

/// The two files a checkpoint stem maps to: `<stem>.ght1` and
/// `<stem>.json`. A stem given with either extension is normalized.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let stem = match stem.extension().and_then(|e| e.to_str()) {
        Some("ght1") | Some("json") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    (stem.with_extension("ght1"), stem.with_extension("json"))
}

/// Write the parameter store and its manifest.
pub fn save_checkpoint(
    stem: &Path,
    config: &TrainConfig,
    vocab: &Vocabulary,
    store: &ParamStore,
    step: usize,
) -> Result<()> {
    let (tensor_path, manifest_path) = checkpoint_paths(stem);
    let mut tensors = Vec::new();
    for spec in &store.layout.specs {
        let dims = spec.shape.iter().map(|&d| d as u64).collect();
        let data = store.data[spec.range()].to_vec();
        tensors.push(Ght1Tensor::new(spec.name.clone(), dims, data)?);
    }
    write_ght1(&tensor_path, &tensors)?;
    let manifest = CheckpointManifest {
        format: MANIFEST_FORMAT.into(),
        config: config.clone(),
        vocabulary: vocab.clone(),
        parameter_order: store.layout.specs.iter().map(|s| s.name.clone()).collect(),
        seed: config.seed,
        step,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(manifest_path, json)?;
    Ok(())
}

/// Load a checkpoint stem back into a ready parameter store, verifying
/// the manifest format, the parameter order, and every tensor shape.
pub fn load_checkpoint(stem: &Path) -> Result<Checkpoint> {
    let (tensor_path, manifest_path) = checkpoint_paths(stem);
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Schema(format!(
            "manifest format {:?}, expected {MANIFEST_FORMAT:?}",
            manifest.format
        )));
    }
    manifest.config.validate()?;
    let mut store = ParamStore::init(&manifest.config.model, manifest.vocabulary.len(), 0);
    let expected: Vec<String> = store.layout.specs.iter().map(|s| s.name.clone()).collect();
    if manifest.parameter_order != expected {
        return Err(Error::Schema("manifest parameter order differs from layout".into()));
    }
    let tensors = read_ght1(&tensor_path)?;
    if tensors.len() != store.layout.specs.len() {
        return Err(Error::Schema(format!(
            "{} tensors for {} parameters",
            tensors.len(),
            store.layout.specs.len()
        )));
    }
    for (tensor, spec) in tensors.iter().zip(&store.layout.specs) {
        if tensor.name != spec.name {
            return Err(Error::Schema(format!(
                "tensor {:?} where {:?} was expected",
                tensor.name, spec.name
            )));
        }
        let dims: Vec<u64> = spec.shape.iter().map(|&d| d as u64).collect();
        if tensor.dims != dims {
            return Err(Error::Schema(format!(
                "tensor {:?}: shape {:?}, expected {:?}",
                tensor.name, tensor.dims, dims
            )));
        }
        store.data[spec.range()].copy_from_slice(&tensor.data);
    }
    Ok(Checkpoint {
        config: manifest.config,
        vocab: manifest.vocabulary,
        store,
        step: manifest.step,
    })
}
