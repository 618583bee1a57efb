//! IDX container files as used by the MNIST family.
//!
//! Images: `0x00000803`, then big-endian `u32` count, rows, cols, then one
//! `u8` per pixel. Labels: `0x00000801`, `u32` count, one `u8` per label.

use std::fs;
use std::path::Path;

use crate::error::{Result, SimexError};

use super::Dataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn idx_err(path: &Path, reason: impl Into<String>) -> SimexError {
    SimexError::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// `(count, rows, cols, pixel bytes)` from an image file's contents.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0).ok_or_else(|| idx_err(path, "truncated header"))?;
    if magic != IMAGE_MAGIC {
        return Err(idx_err(path, format!("bad image magic {magic:#010x}")));
    }
    let dims: Option<Vec<u32>> = (1..4).map(|i| be_u32(bytes, 4 * i)).collect();
    let dims = dims.ok_or_else(|| idx_err(path, "truncated header"))?;
    let (n, rows, cols) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    if rows == 0 || cols == 0 {
        return Err(idx_err(path, "zero image dimension"));
    }
    let expected = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| idx_err(path, "dimension overflow"))?;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(idx_err(
            path,
            format!("payload has {} bytes, header implies {expected}", payload.len()),
        ));
    }
    Ok((n, rows, cols, payload.to_vec()))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0).ok_or_else(|| idx_err(path, "truncated header"))?;
    if magic != LABEL_MAGIC {
        return Err(idx_err(path, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4).ok_or_else(|| idx_err(path, "truncated header"))? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(idx_err(
            path,
            format!("payload has {} bytes, header implies {n}", payload.len()),
        ));
    }
    Ok(payload.to_vec())
}

/// Byte to pixel: `b / 255`.
pub fn byte_to_pixel(b: u8) -> f32 {
    b as f32 / 255.0
}

/// Pixel to byte, rounding half up: `floor(v * 255 + 0.5)`, clamped.
pub fn pixel_to_byte(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Build a dataset from in-memory IDX contents.
pub fn dataset_from_bytes(
    id: &str,
    images: &[u8],
    labels: Option<&[u8]>,
    images_path: &Path,
    labels_path: Option<&Path>,
) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_images(images, images_path)?;
    let labels = match (labels, labels_path) {
        (Some(bytes), lp) => {
            let lp = lp.unwrap_or(images_path);
            let l = parse_labels(bytes, lp)?;
            if l.len() != n {
                return Err(idx_err(lp, format!("{} labels for {n} images", l.len())));
            }
            Some(l.into_iter().map(usize::from).collect())
        }
        (None, _) => None,
    };
    Dataset::new(
        id,
        rows,
        cols,
        pixels.into_iter().map(byte_to_pixel).collect(),
        labels,
        None,
        images_path.display().to_string(),
    )
}

/// Load an image file and optional label file. The dataset id is the image
/// file stem.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = labels_path.map(fs::read).transpose()?;
    let id = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    dataset_from_bytes(&id, &images, labels.as_deref(), images_path, labels_path)
}

pub fn encode_images(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + dataset.pixels().len());
    for v in [IMAGE_MAGIC, dataset.len() as u32, dataset.height() as u32, dataset.width() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(dataset.pixels().iter().map(|&v| pixel_to_byte(v)));
    out
}

pub fn encode_labels(dataset: &Dataset) -> Result<Vec<u8>> {
    let labels = dataset
        .labels()
        .ok_or_else(|| SimexError::invalid(format!("dataset `{}` has no labels to write", dataset.id())))?;
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| SimexError::invalid(format!("label {l} does not fit in a byte")))?;
        out.push(b);
    }
    Ok(out)
}

/// Write images (and labels, when both the dataset and a path are present).
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: Option<&Path>) -> Result<()> {
    fs::write(images_path, encode_images(dataset))?;
    if let Some(lp) = labels_path {
        fs::write(lp, encode_labels(dataset)?)?;
    }
    Ok(())
}
