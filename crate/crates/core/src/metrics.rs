//! Image and video quality metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, SoftMask};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn gray(img: &Image) -> Result<Vec<f64>> {
    match img.channels() {
        1 => Ok(img.data().iter().map(|v| *v as f64).collect()),
        3 => Ok(img.luma()?.data().iter().map(|v| *v as f64).collect()),
        c => Err(Error::invalid(format!("SSIM needs 1 or 3 channels, got {c}"))),
    }
}

/// Valid-mode separable filter of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..k).map(|i| taps[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..k).map(|i| taps[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    (out, oh, ow)
}

/// Windowed SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over all
/// fully contained windows. Color images are compared on luma.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::invalid(format!(
            "SSIM inputs differ: {}x{:?} vs {}x{:?}",
            a.channels(),
            a.dims(),
            b.channels(),
            b.dims()
        )));
    }
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let (x, y) = (gray(a)?, gray(b)?);
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let (mx, oh, ow) = filter_valid(&x, h, w, &taps);
    let (my, _, _) = filter_valid(&y, h, w, &taps);
    let (sxx, _, _) = filter_valid(&prod(&x, &x), h, w, &taps);
    let (syy, _, _) = filter_valid(&prod(&y, &y), h, w, &taps);
    let (sxy, _, _) = filter_valid(&prod(&x, &y), h, w, &taps);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / (oh * ow) as f64)
}

/// Mean absolute difference weighted by `mask` and normalized by the mask sum
/// (times channel count); 0 for an empty mask.
pub fn masked_l1(pred: &Image, target: &Image, mask: &SoftMask) -> Result<f64> {
    if pred.dims() != target.dims() || pred.channels() != target.channels() || pred.dims() != mask.dims() {
        return Err(Error::invalid("masked_l1 inputs must share dimensions"));
    }
    let msum = mask.sum();
    if msum == 0.0 {
        return Ok(0.0);
    }
    let c = pred.channels();
    let n = mask.data().len();
    let mut acc = 0.0;
    for ch in 0..c {
        let (p, t) = (pred.plane(ch), target.plane(ch));
        for i in 0..n {
            acc += mask.data()[i] as f64 * (p[i] as f64 - t[i] as f64).abs();
        }
    }
    Ok(acc / (msum * c as f64))
}

/// Gaussian moments of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Squared Fréchet distance `|mu1-mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`.
pub fn frechet_distance(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    let d = a.mean.len();
    if b.mean.len() != d || a.cov.shape() != (d, d) || b.cov.shape() != (d, d) {
        return Err(Error::invalid("moment dimensions disagree"));
    }
    // tr((S1 S2)^1/2) = tr((S1^1/2 S2 S1^1/2)^1/2), and the inner matrix is symmetric PSD
    let e1 = a.cov.clone().symmetric_eigen();
    let s1h = &e1.eigenvectors
        * DMatrix::from_diagonal(&e1.eigenvalues.map(|v| v.max(0.0).sqrt()))
        * e1.eigenvectors.transpose();
    let inner = &s1h * &b.cov * &s1h;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = inner.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = &a.mean - &b.mean;
    Ok((diff.dot(&diff) + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Feature backbone for a distribution-level video metric.
pub trait DistributionBackend: Send + Sync {
    fn name(&self) -> &str;
    fn moments(&self, frames: &[Image]) -> Result<GaussianMoments>;
}

pub fn video_metric(a: &[Image], b: &[Image], backend: Option<&dyn DistributionBackend>) -> Result<f64> {
    let backend = backend.ok_or_else(|| Error::config("video metric needs a feature backend; none is configured"))?;
    frechet_distance(&backend.moments(a)?, &backend.moments(b)?)
}

/// Per-frame values of one metric with their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub params: serde_json::Value,
    pub per_frame: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
}

impl MetricReport {
    pub fn new(name: &str, params: serde_json::Value, per_frame: Vec<f64>) -> Self {
        let (mean, stddev) = mean_std(&per_frame);
        Self {
            name: name.to_string(),
            params,
            per_frame,
            mean,
            stddev,
        }
    }

    /// Whether the stored aggregate agrees with the per-frame values.
    pub fn is_consistent(&self) -> bool {
        let (m, s) = mean_std(&self.per_frame);
        (m - self.mean).abs() <= 1e-12 && (s - self.stddev).abs() <= 1e-12
    }
}

/// Population mean and standard deviation; zeros for an empty slice.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn ssim_params() -> serde_json::Value {
    serde_json::json!({"window": SSIM_WINDOW, "sigma": SSIM_SIGMA, "c1": SSIM_C1, "c2": SSIM_C2, "color": "luma"})
}
