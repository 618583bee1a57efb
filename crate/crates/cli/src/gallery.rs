//! Input/reconstruction image pairs as binary PGM.

use std::fs;
use std::path::{Path, PathBuf};

use simex_core::data::idx::pixel_to_byte;
use simex_core::data::Dataset;
use simex_core::models::AutoencoderModel;
use simex_core::tensor::Scalar;

use crate::error::{CliError, Context};

/// 8-bit binary PGM, pixels quantized like IDX output.
pub fn encode_pgm(pixels: impl IntoIterator<Item = f32>, height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P5 {width} {height} 255\n").into_bytes();
    out.extend(pixels.into_iter().map(pixel_to_byte));
    debug_assert_eq!(out.len(), out.iter().position(|&b| b == b'\n').unwrap() + 1 + height * width);
    out
}

/// Write `input_NNN.pgm` and `recon_NNN.pgm` for every sample.
pub fn emit_reconstruction_gallery<T: Scalar>(
    model: &AutoencoderModel<T>,
    samples: &Dataset,
    dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    let recon = model
        .reconstruct(&samples.to_tensor::<T>())
        .context(|| format!("reconstructing `{}`", samples.id()))?;
    let (h, w) = (samples.height(), samples.width());
    let mut written = Vec::with_capacity(2 * samples.len());
    for i in 0..samples.len() {
        let pairs = [
            (format!("input_{i:03}.pgm"), encode_pgm(samples.sample(i).iter().copied(), h, w)),
            (
                format!("recon_{i:03}.pgm"),
                encode_pgm(recon.sample(i).iter().map(|v| v.as_f64() as f32), h, w),
            ),
        ];
        for (name, bytes) in pairs {
            let path = dir.join(name);
            fs::write(&path, bytes).context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_payload() {
        let bytes = encode_pgm(vec![0.0; 28 * 28], 28, 28);
        assert!(bytes.starts_with(b"P5 28 28 255\n"));
        assert_eq!(bytes.len(), b"P5 28 28 255\n".len() + 784);
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        let bytes = encode_pgm(vec![0.0, 1.0, 0.5, -1.0, 2.0, 0.2], 2, 3);
        let body = &bytes[bytes.len() - 6..];
        assert_eq!(body, &[0, 255, 128, 0, 255, 51]);
    }
}
