//! Image quality, dispersion statistics and model size.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{dim_err, Error, Result};
use crate::search_space::ArchEncoding;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Evaluation scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    InDistribution,
    MaskShift,
    AccelerationShift,
    ContrastShift,
    UnseenCenter,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::InDistribution,
        Scenario::MaskShift,
        Scenario::AccelerationShift,
        Scenario::ContrastShift,
        Scenario::UnseenCenter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::InDistribution => "in_distribution",
            Scenario::MaskShift => "mask_shift",
            Scenario::AccelerationShift => "acceleration_shift",
            Scenario::ContrastShift => "contrast_shift",
            Scenario::UnseenCenter => "unseen_center",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown scenario `{s}`")))
    }
}

/// Scores of one client under one scenario (averaged over its test images).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scenario: Scenario,
    pub client_id: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub loss: f64,
    /// Zero-filled baseline on the same measurements.
    pub zf_psnr: f64,
    pub zf_ssim: f64,
    pub samples: usize,
}

impl MetricRecord {
    pub const CSV_HEADER: &'static str = "scenario,client_id,psnr,ssim,loss,zf_psnr,zf_ssim,samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.9e},{:.6},{:.6},{}",
            self.scenario, self.client_id, self.psnr, self.ssim, self.loss, self.zf_psnr, self.zf_ssim, self.samples
        )
    }
}

/// Modulus of a `[2, H, W]` complex image, as an `H x W` buffer.
pub fn magnitude(x: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let s = x.shape();
    match s {
        [2, h, w] => {
            let plane = h * w;
            let d = x.data();
            let m = (0..plane).map(|i| d[i].hypot(d[plane + i])).collect();
            Ok((*h, *w, m))
        }
        [h, w] => Ok((*h, *w, x.data().to_vec())),
        _ => dim_err(format!("expected [2, H, W] or [H, W] image, got {s:?}")),
    }
}

/// PSNR in dB with peak `max(|ref|)`; identical images give `+inf`.
pub fn psnr(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    pred.check_same_shape(reference, "psnr")?;
    let (_, _, p) = magnitude(pred)?;
    let (_, _, r) = magnitude(reference)?;
    let mse = p.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = r.iter().copied().fold(0.0, f64::max);
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over "valid" window positions.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| g[t] * img[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| g[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained 11x11 windows (Gaussian, sigma 1.5)
/// with dynamic range `data_range`.
pub fn ssim_with_range(pred: &Tensor, reference: &Tensor, data_range: f64) -> Result<f64> {
    pred.check_same_shape(reference, "ssim")?;
    let (h, w, x) = magnitude(pred)?;
    let (_, _, y) = magnitude(reference)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &g);
    let my = filter_valid(&y, h, w, &g);
    let mxx = filter_valid(&prod(&x, &x), h, w, &g);
    let myy = filter_valid(&prod(&y, &y), h, w, &g);
    let mxy = filter_valid(&prod(&x, &y), h, w, &g);
    let n = mx.len() as f64;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n)
}

/// SSIM with dynamic range `max(|ref|)`.
pub fn ssim(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    let (_, _, r) = magnitude(reference)?;
    let range = r.iter().copied().fold(0.0, f64::max);
    ssim_with_range(pred, reference, range)
}

/// Arithmetic mean and population standard deviation.
pub fn fairness_stats(errors: &[f64]) -> Result<(f64, f64)> {
    if errors.is_empty() {
        return Err(Error::Contract("fairness statistics of an empty vector".into()));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Trainable scalars: all of `theta`, plus the logits when present.
pub fn param_count(theta: &ParamSet, alpha: Option<&ArchEncoding>) -> usize {
    theta.num_scalars() + alpha.map_or(0, |a| a.logits.len())
}
