//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `SIMEXCKP` |
//! | 4     | format version (`u32`) |
//! | 1     | precision: 0 = f32, 1 = f64 |
//! | 1     | model kind: 0 = autoencoder, 1 = classifier |
//! | 4     | metadata length `M` (`u32`) |
//! | M     | metadata, UTF-8 JSON |
//! | 4     | CRC-32 of metadata followed by payload |
//! | rest  | payload: `u32` tensor count, then per tensor `u32` rank, `rank` x `u32` dims, values |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimexError};
use crate::tensor::{Precision, Scalar, Sequential, Tensor};

use super::architecture::{build_autoencoder, build_classifier, AutoencoderModel, ClassifierModel, ModelMeta};

pub const MAGIC: &[u8; 8] = b"SIMEXCKP";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 1 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Autoencoder,
    Classifier,
}

impl ModelKind {
    fn byte(self) -> u8 {
        match self {
            ModelKind::Autoencoder => 0,
            ModelKind::Classifier => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(ModelKind::Autoencoder),
            1 => Some(ModelKind::Classifier),
            _ => None,
        }
    }
}

fn precision_byte(p: Precision) -> u8 {
    match p {
        Precision::F32 => 0,
        Precision::F64 => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Architecture {
    height: usize,
    width: usize,
    #[serde(default)]
    num_classes: Option<usize>,
    meta: ModelMeta,
}

/// Models with a checkpoint representation.
pub trait Checkpointable<T: Scalar>: Sized {
    const KIND: ModelKind;
    fn network(&self) -> &Sequential<T>;
    fn architecture(&self) -> (usize, usize, Option<usize>, &ModelMeta);
    /// Rebuild an empty model of the recorded architecture.
    fn rebuild(height: usize, width: usize, num_classes: Option<usize>, meta: ModelMeta) -> Result<Self>;
    fn network_mut(&mut self) -> &mut Sequential<T>;
}

impl<T: Scalar> Checkpointable<T> for AutoencoderModel<T> {
    const KIND: ModelKind = ModelKind::Autoencoder;

    fn network(&self) -> &Sequential<T> {
        &self.net
    }

    fn architecture(&self) -> (usize, usize, Option<usize>, &ModelMeta) {
        (self.height, self.width, None, &self.meta)
    }

    fn rebuild(height: usize, width: usize, _: Option<usize>, meta: ModelMeta) -> Result<Self> {
        let mut m = build_autoencoder(height, width, meta.seed)?;
        m.meta = meta;
        Ok(m)
    }

    fn network_mut(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }
}

impl<T: Scalar> Checkpointable<T> for ClassifierModel<T> {
    const KIND: ModelKind = ModelKind::Classifier;

    fn network(&self) -> &Sequential<T> {
        &self.net
    }

    fn architecture(&self) -> (usize, usize, Option<usize>, &ModelMeta) {
        (self.height, self.width, Some(self.num_classes), &self.meta)
    }

    fn rebuild(height: usize, width: usize, num_classes: Option<usize>, meta: ModelMeta) -> Result<Self> {
        let k = num_classes.ok_or_else(|| SimexError::invalid("classifier checkpoint lacks a class count"))?;
        let mut m = build_classifier(height, width, k, meta.seed)?;
        m.meta = meta;
        Ok(m)
    }

    fn network_mut(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }
}

/// Serialise `model` to checkpoint bytes.
pub fn encode_checkpoint<T: Scalar, M: Checkpointable<T>>(model: &M) -> Result<Vec<u8>> {
    let (height, width, num_classes, meta) = model.architecture();
    let metadata = serde_json::to_vec(&Architecture {
        height,
        width,
        num_classes,
        meta: meta.clone(),
    })?;
    let params = model.network().params();
    let mut payload = Vec::new();
    payload.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        payload.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &d in p.shape() {
            payload.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.data() {
            v.write_le(&mut payload);
        }
    }
    let mut crc = crc32fast::Hasher::new();
    crc.update(&metadata);
    crc.update(&payload);

    let mut out = Vec::with_capacity(HEADER_LEN + metadata.len() + 4 + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(precision_byte(T::PRECISION));
    out.push(M::KIND.byte());
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(&metadata);
    out.extend_from_slice(&crc.finalize().to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ckpt_err(self.path, "truncated file")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> SimexError {
    SimexError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Model kind recorded in checkpoint bytes, after validating the header.
pub fn checkpoint_kind(bytes: &[u8], path: &Path) -> Result<ModelKind> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(ckpt_err(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ckpt_err(
            path,
            format!("format version {version}, this build reads {FORMAT_VERSION}"),
        ));
    }
    r.take(1)?;
    let kind = r.take(1)?[0];
    ModelKind::from_byte(kind).ok_or_else(|| ckpt_err(path, format!("unknown model kind {kind}")))
}

/// Parse checkpoint bytes; `path` is used only in error messages.
pub fn decode_checkpoint<T: Scalar, M: Checkpointable<T>>(bytes: &[u8], path: &Path) -> Result<M> {
    let kind = checkpoint_kind(bytes, path)?;
    let mut r = Reader {
        bytes,
        pos: 12,
        path,
    };
    let precision = r.take(1)?[0];
    if precision != precision_byte(T::PRECISION) {
        return Err(ckpt_err(
            path,
            format!("stored precision byte {precision} does not match requested {:?}", T::PRECISION),
        ));
    }
    r.take(1)?;
    if kind != M::KIND {
        return Err(ckpt_err(path, format!("holds a {kind:?}, expected {:?}", M::KIND)));
    }
    let meta_len = r.u32()? as usize;
    let metadata = r.take(meta_len)?;
    let stored_crc = r.u32()?;
    let payload = &bytes[r.pos..];
    let mut crc = crc32fast::Hasher::new();
    crc.update(metadata);
    crc.update(payload);
    if crc.finalize() != stored_crc {
        return Err(ckpt_err(path, "checksum mismatch"));
    }
    let arch: Architecture =
        serde_json::from_slice(metadata).map_err(|e| ckpt_err(path, format!("metadata: {e}")))?;
    let mut model = M::rebuild(arch.height, arch.width, arch.num_classes, arch.meta)?;

    let count = r.u32()? as usize;
    let width = T::PRECISION.byte_width() as usize;
    let mut params = model.network_mut().params_mut_from(0);
    if count != params.len() {
        return Err(ckpt_err(
            path,
            format!("{count} tensors stored, architecture has {}", params.len()),
        ));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let rank = r.u32()? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        if dims != p.shape() {
            return Err(ckpt_err(
                path,
                format!("tensor {i} has shape {dims:?}, architecture expects {:?}", p.shape()),
            ));
        }
        let raw = r.take(p.len() * width)?;
        let values: Vec<T> = raw.chunks_exact(width).map(T::read_le).collect();
        **p = Tensor::from_vec(&dims, values)?;
    }
    if r.pos != bytes.len() {
        return Err(ckpt_err(path, "trailing bytes after payload"));
    }
    Ok(model)
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

/// Write `bytes` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn save_checkpoint<T: Scalar, M: Checkpointable<T>>(model: &M, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint<T: Scalar, M: Checkpointable<T>>(path: &Path) -> Result<M> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes, path)
}
