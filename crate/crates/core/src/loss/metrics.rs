//! PSNR and SSIM over light fields, per view and averaged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::filter::gaussian_taps;
use crate::lightfield::LightField;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScores {
    /// Row-major over the angular grid.
    pub per_view: Vec<f64>,
    pub mean: f64,
}

impl ViewScores {
    fn new(per_view: Vec<f64>) -> Self {
        let mean = per_view.iter().sum::<f64>() / per_view.len() as f64;
        Self { per_view, mean }
    }
}

fn check_pair(a: &LightField, b: &LightField) -> Result<()> {
    if a.views().dim() != b.views().dim() {
        return Err(Error::Shape(format!(
            "metric inputs differ: {:?} vs {:?}",
            a.views().dim(),
            b.views().dim()
        )));
    }
    Ok(())
}

/// Iterates `(view, plane data)` with planes as contiguous `h·w` slices.
fn view_planes(lf: &LightField) -> Vec<Vec<Vec<f64>>> {
    let (u, v, c, _, _) = lf.views().dim();
    let mut out = Vec::with_capacity(u * v);
    for a in 0..u {
        for b in 0..v {
            out.push(
                (0..c)
                    .map(|ch| {
                        lf.views()
                            .slice(ndarray::s![a, b, ch, .., ..])
                            .iter()
                            .copied()
                            .collect()
                    })
                    .collect(),
            );
        }
    }
    out
}

pub fn psnr_value(mse: f64, peak: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
    }
}

/// `10 log10(peak² / MSE)` per view, capped at 100 dB.
pub fn psnr(a: &LightField, b: &LightField, peak: f64) -> Result<ViewScores> {
    check_pair(a, b)?;
    let per_view = view_planes(a)
        .iter()
        .zip(view_planes(b))
        .map(|(pa, pb)| {
            let (mut se, mut n) = (0.0, 0usize);
            for (x, y) in pa.iter().zip(&pb) {
                se += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
                n += x.len();
            }
            psnr_value(se / n as f64, peak)
        })
        .collect();
    Ok(ViewScores::new(per_view))
}

/// Valid-mode separable filtering: `(h - k + 1) × (w - k + 1)` output.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            tmp[y * wo + x] = taps.iter().enumerate().map(|(t, &c)| c * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for (t, &c) in taps.iter().enumerate() {
            for x in 0..wo {
                out[y * wo + x] += c * tmp[(y + t) * wo + x];
            }
        }
    }
    out
}

/// Mean SSIM of two `h × w` planes with dynamic range 1.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let f = |v: &[f64]| filter_valid(v, h, w, &taps);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (ma, mb) = (f(a), f(b));
    let (saa, sbb, sab) = (f(&prod(a, a)), f(&prod(b, b)), f(&prod(a, b)));
    let n = ma.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (mu_a, mu_b) = (ma[i], mb[i]);
        let va = saa[i] - mu_a * mu_a;
        let vb = sbb[i] - mu_b * mu_b;
        let cov = sab[i] - mu_a * mu_b;
        acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
    }
    Ok(acc / n as f64)
}

/// SSIM per view (mean over channels and valid pixels).
pub fn ssim(a: &LightField, b: &LightField) -> Result<ViewScores> {
    check_pair(a, b)?;
    let (h, w) = a.spatial_dims();
    let per_view = view_planes(a)
        .iter()
        .zip(view_planes(b))
        .map(|(pa, pb)| {
            let mut s = 0.0;
            for (x, y) in pa.iter().zip(&pb) {
                s += ssim_plane(x, y, h, w)?;
            }
            Ok(s / pa.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewScores::new(per_view))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub name: String,
    pub psnr: ViewScores,
    pub ssim: ViewScores,
}

impl SceneMetrics {
    pub fn compute(name: impl Into<String>, restored: &LightField, reference: &LightField) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            psnr: psnr(restored, reference, 1.0)?,
            ssim: ssim(restored, reference)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenes: Vec<SceneMetrics>,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
}

impl MetricsReport {
    pub fn new(scenes: Vec<SceneMetrics>) -> Self {
        let n = scenes.len().max(1) as f64;
        let psnr_mean = scenes.iter().map(|s| s.psnr.mean).sum::<f64>() / n;
        let ssim_mean = scenes.iter().map(|s| s.ssim.mean).sum::<f64>() / n;
        Self {
            scenes,
            psnr_mean,
            ssim_mean,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::ColorSpace;
    use ndarray::Array5;

    fn lf(f: impl Fn(usize, usize, usize) -> f64) -> LightField {
        LightField::new(
            Array5::from_shape_fn((2, 2, 3, 16, 16), |(a, b, c, y, x)| f(a * 2 + b, c, y * 16 + x)),
            ColorSpace::Rgb,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn psnr_cap_and_constant_offset() {
        let a = lf(|v, c, i| ((v + c + i) % 13) as f64 / 20.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap().mean, PSNR_CAP);
        let b = LightField::new(a.views() + 0.1, ColorSpace::Rgb, 1.0).unwrap();
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p.mean - 20.0).abs() < 1e-9);
        let avg = p.per_view.iter().sum::<f64>() / 4.0;
        assert_eq!(avg, p.mean);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = lf(|v, c, i| ((v * 7 + c * 3 + i * 5) % 17) as f64 / 17.0);
        let b = lf(|v, c, i| ((v * 5 + c + i * 3) % 11) as f64 / 11.0);
        assert!((ssim(&a, &a).unwrap().mean - 1.0).abs() < 1e-9);
        let (ab, ba) = (ssim(&a, &b).unwrap().mean, ssim(&b, &a).unwrap().mean);
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0);
    }

    #[test]
    fn ssim_rejects_small_views() {
        let t = LightField::new(Array5::zeros((1, 1, 1, 8, 8)), ColorSpace::Y, 1.0).unwrap();
        assert!(ssim(&t, &t).is_err());
    }
}
