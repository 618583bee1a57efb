//! Reconstruction differences: per-sample MSE and inverted SSIM.
//!
//! Both are used as the autoencoder training loss and as the per-sample
//! difference whose mean over an unknown set is the similarity score.
//! Values are accumulated in `f64` regardless of the tensor precision.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimexError};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    /// Side of the square Gaussian window; odd.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of pixel values.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(SimexError::invalid(format!("SSIM window must be odd, got {}", self.window)));
        }
        if self.window > height.min(width) {
            return Err(SimexError::invalid(format!(
                "SSIM window {} larger than image {}x{}",
                self.window, height, width
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0 && self.sigma > 0.0) {
            return Err(SimexError::invalid("SSIM constants must be positive"));
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let c = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
    Issim(SsimParams),
}

impl LossKind {
    pub fn issim() -> Self {
        LossKind::Issim(SsimParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Issim(_) => "issim",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One reconstruction difference value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDelta {
    pub value: f64,
    pub loss: LossKind,
}

fn same_shape<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, context: &'static str) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(SimexError::shape(context, x.shape(), y.shape()));
    }
    Ok(())
}

/// Height and width of a single-channel image tensor shaped `(H, W)`,
/// `(1, H, W)` or `(1, 1, H, W)`.
fn image_dims(shape: &[usize]) -> Result<(usize, usize)> {
    let n = shape.len();
    if n < 2 || shape[..n - 2].iter().any(|&d| d != 1) {
        return Err(SimexError::shape("single-channel image", &[1, 1, 0, 0], shape));
    }
    Ok((shape[n - 2], shape[n - 1]))
}

pub fn mse_slice<T: Scalar>(x: &[T], xhat: &[T]) -> f64 {
    let n = x.len().max(1) as f64;
    x.iter()
        .zip(xhat)
        .map(|(&a, &b)| {
            let d = b.as_f64() - a.as_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

/// Mean of squared differences over all elements.
pub fn mse<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>) -> Result<SampleDelta> {
    same_shape(x, xhat, "mse")?;
    Ok(SampleDelta {
        value: mse_slice(x.data(), xhat.data()),
        loss: LossKind::Mse,
    })
}

/// Valid-mode separable filtering of an `h x w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (hv, wv) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * wv];
    for r in 0..h {
        let row = &img[r * w..(r + 1) * w];
        for c in 0..wv {
            tmp[r * wv + c] = g.iter().zip(&row[c..c + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; hv * wv];
    for r in 0..hv {
        for (i, gi) in g.iter().enumerate() {
            let src = &tmp[(r + i) * wv..(r + i + 1) * wv];
            let dst = &mut out[r * wv..(r + 1) * wv];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += gi * s;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads an `(h-k+1) x (w-k+1)` map back onto
/// an `h x w` image.
fn filter_adjoint(map: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (hv, wv) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * wv];
    for r in 0..hv {
        let src = &map[r * wv..(r + 1) * wv];
        for (i, gi) in g.iter().enumerate() {
            let dst = &mut tmp[(r + i) * wv..(r + i + 1) * wv];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += gi * s;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let src = &tmp[r * wv..(r + 1) * wv];
        let dst = &mut out[r * w..(r + 1) * w];
        for (c, s) in src.iter().enumerate() {
            for (j, gj) in g.iter().enumerate() {
                dst[c + j] += gj * s;
            }
        }
    }
    out
}

struct SsimMaps {
    mean: f64,
    /// Per-position partials used by the gradient, when requested.
    partials: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

fn ssim_core(x: &[f64], y: &[f64], h: usize, w: usize, p: &SsimParams, with_grad: bool) -> SsimMaps {
    let g = p.kernel();
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, h, w, &g);
    let mu_y = filter_valid(y, h, w, &g);
    let e_xx = filter_valid(&xx, h, w, &g);
    let e_yy = filter_valid(&yy, h, w, &g);
    let e_xy = filter_valid(&xy, h, w, &g);
    let npos = mu_x.len();
    let mut sum = 0.0;
    let mut partials = with_grad.then(|| (vec![0.0; npos], vec![0.0; npos], vec![0.0; npos]));
    for i in 0..npos {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let a1 = 2.0 * (mx * my) + c1;
        let a2 = 2.0 * sxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = sxx + syy + c2;
        let s = (a1 * a2) / (b1 * b2);
        sum += s;
        if let Some((alpha, beta, gamma)) = partials.as_mut() {
            let d_mu_y = 2.0 * mx * a2 / (b1 * b2) - 2.0 * my * s / b1;
            let d_sxy = 2.0 * a1 / (b1 * b2);
            let d_syy = -s / b2;
            beta[i] = d_sxy;
            gamma[i] = 2.0 * d_syy;
            alpha[i] = d_mu_y - beta[i] * mx - gamma[i] * my;
        }
    }
    SsimMaps {
        mean: sum / npos as f64,
        partials,
    }
}

/// Mean SSIM over all valid window positions of two `h x w` images.
pub fn ssim_slice<T: Scalar>(x: &[T], y: &[T], h: usize, w: usize, params: &SsimParams) -> f64 {
    let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let yf: Vec<f64> = y.iter().map(|v| v.as_f64()).collect();
    ssim_core(&xf, &yf, h, w, params, false).mean
}

/// SSIM and its gradient w.r.t. `y`.
fn ssim_with_grad(x: &[f64], y: &[f64], h: usize, w: usize, params: &SsimParams) -> (f64, Vec<f64>) {
    let maps = ssim_core(x, y, h, w, params, true);
    let (alpha, beta, gamma) = maps.partials.expect("partials requested");
    let g = params.kernel();
    let npos = alpha.len() as f64;
    let ga = filter_adjoint(&alpha, h, w, &g);
    let gb = filter_adjoint(&beta, h, w, &g);
    let gc = filter_adjoint(&gamma, h, w, &g);
    let grad = (0..h * w)
        .map(|j| (ga[j] + x[j] * gb[j] + y[j] * gc[j]) / npos)
        .collect();
    (maps.mean, grad)
}

/// Mean SSIM map value between two single-channel images.
pub fn ssim_index<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>, params: &SsimParams) -> Result<f64> {
    same_shape(x, xhat, "ssim")?;
    let (h, w) = image_dims(x.shape())?;
    params.validate(h, w)?;
    Ok(ssim_slice(x.data(), xhat.data(), h, w, params))
}

/// Per-sample difference of two `h x w` images.
pub fn delta_slice<T: Scalar>(x: &[T], xhat: &[T], h: usize, w: usize, kind: &LossKind) -> f64 {
    match kind {
        LossKind::Mse => mse_slice(x, xhat),
        LossKind::Issim(p) => 1.0 - ssim_slice(x, xhat, h, w, p),
    }
}

/// Difference value and its gradient w.r.t. `xhat` for two `h x w` images.
pub fn loss_and_grad_slice<T: Scalar>(x: &[T], xhat: &[T], h: usize, w: usize, kind: &LossKind) -> (f64, Vec<f64>) {
    match kind {
        LossKind::Mse => {
            let n = x.len() as f64;
            let grad = x
                .iter()
                .zip(xhat)
                .map(|(&a, &b)| 2.0 * (b.as_f64() - a.as_f64()) / n)
                .collect();
            (mse_slice(x, xhat), grad)
        }
        LossKind::Issim(p) => {
            let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
            let yf: Vec<f64> = xhat.iter().map(|v| v.as_f64()).collect();
            let (s, g) = ssim_with_grad(&xf, &yf, h, w, p);
            (1.0 - s, g.into_iter().map(|v| -v).collect())
        }
    }
}

/// Single-image difference and gradient w.r.t. `xhat`.
pub fn loss_and_grad<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>, kind: &LossKind) -> Result<(SampleDelta, Tensor<T>)> {
    same_shape(x, xhat, "loss")?;
    let (h, w) = match kind {
        LossKind::Mse => (1, x.len()),
        LossKind::Issim(p) => {
            let (h, w) = image_dims(x.shape())?;
            p.validate(h, w)?;
            (h, w)
        }
    };
    let (value, grad) = loss_and_grad_slice(x.data(), xhat.data(), h, w, kind);
    Ok((SampleDelta { value, loss: *kind }, Tensor::from_f64(x.shape(), &grad)?))
}

/// Image height and width of a batch `(N, 1, H, W)` or `(N, H, W)`.
pub(crate) fn batch_image_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [_, 1, h, w] | [_, h, w] => Ok((*h, *w)),
        _ => Err(SimexError::shape("image batch", &[0, 1, 0, 0], shape)),
    }
}

/// Per-sample extent used by `kind`: flat for MSE, `(H, W)` for iSSIM.
fn batch_dims<T: Scalar>(x: &Tensor<T>, kind: &LossKind) -> Result<(usize, usize)> {
    match kind {
        LossKind::Mse => Ok((1, x.per_sample())),
        LossKind::Issim(p) => {
            let (h, w) = batch_image_dims(x.shape())?;
            p.validate(h, w)?;
            Ok((h, w))
        }
    }
}

/// Per-sample differences over a batch, in batch order.
pub fn batch_deltas<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>, kind: &LossKind) -> Result<Vec<f64>> {
    same_shape(x, xhat, "batch loss")?;
    let (h, w) = batch_dims(x, kind)?;
    Ok((0..x.batch())
        .map(|i| delta_slice(x.sample(i), xhat.sample(i), h, w, kind))
        .collect())
}

/// Batch-mean loss, per-sample values, and the gradient of the batch mean
/// w.r.t. `xhat`.
pub fn batch_loss_and_grad<T: Scalar>(
    x: &Tensor<T>,
    xhat: &Tensor<T>,
    kind: &LossKind,
) -> Result<(Vec<f64>, Tensor<T>)> {
    same_shape(x, xhat, "batch loss")?;
    let (h, w) = batch_dims(x, kind)?;
    let n = x.batch();
    let scale = 1.0 / n as f64;
    let mut values = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..n {
        let (v, g) = loss_and_grad_slice(x.sample(i), xhat.sample(i), h, w, kind);
        values.push(v);
        grad.extend(g.into_iter().map(|v| T::from_f64_lossy(v * scale)));
    }
    Ok((values, Tensor::from_vec(x.shape(), grad)?))
}
