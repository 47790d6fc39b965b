//! Photon-transfer and dark-frame calibration in raw DN units.

use std::path::{Path, PathBuf};

use ndarray::{s, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{inject_noise, LogLinearModel, NoiseParams, SynthesisConfig};
use crate::error::{Error, Result};
use crate::lightfield::io::{read_json, read_raw_png};
use crate::lightfield::PlenopticImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationKind {
    GrayChart,
    DarkFrame,
}

/// Axis-aligned region of interest; serialized as `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl From<[usize; 4]> for Region {
    fn from([x, y, w, h]: [usize; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<Region> for [usize; 4] {
    fn from(r: Region) -> Self {
        [r.x, r.y, r.w, r.h]
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationSet {
    pub frames: Vec<PlenopticImage>,
    pub iso: u32,
    pub exposure: f64,
    pub kind: CalibrationKind,
    pub regions: Vec<Region>,
}

impl CalibrationSet {
    pub fn new(
        frames: Vec<PlenopticImage>,
        iso: u32,
        exposure: f64,
        kind: CalibrationKind,
        regions: Vec<Region>,
    ) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("calibration set has no frames".into()))?;
        let dim = first.pixels.dim();
        if let Some(f) = frames.iter().find(|f| f.pixels.dim() != dim) {
            return Err(Error::Shape(format!("frame dims {:?} differ from {:?}", f.pixels.dim(), dim)));
        }
        if kind == CalibrationKind::GrayChart {
            if regions.len() < 2 {
                return Err(Error::InvalidArgument("gray-chart sets need at least 2 regions".into()));
            }
            let (_, rows, cols) = dim;
            for r in &regions {
                if r.w == 0 || r.h == 0 || r.x + r.w > cols || r.y + r.h > rows {
                    return Err(Error::IndexOutOfRange(format!("region {r:?} outside {rows}x{cols} frame")));
                }
            }
        }
        if !(exposure.is_finite() && exposure > 0.0) {
            return Err(Error::InvalidArgument(format!("exposure must be positive, got {exposure}")));
        }
        Ok(Self {
            frames,
            iso,
            exposure,
            kind,
            regions,
        })
    }

    /// Loads a manifest; frame paths are relative to the manifest's directory.
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let m: CalibrationManifest = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let frames = m
            .frames
            .iter()
            .map(|f| {
                let p = base.join(f);
                PlenopticImage::new(read_raw_png(&p)?, (1, 1), m.white_level)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, m.iso, m.exposure_s, m.kind, m.regions)
    }

    pub fn white_level(&self) -> f64 {
        self.frames[0].white_level
    }
}

fn default_white_level() -> f64 {
    1023.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationManifest {
    pub kind: CalibrationKind,
    pub iso: u32,
    pub exposure_s: f64,
    pub frames: Vec<PathBuf>,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default = "default_white_level")]
    pub white_level: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonTransferFit {
    pub k: f64,
    pub var_additive: f64,
    pub residual_rms: f64,
}

/// Ordinary least squares of variance against mean: `Var = k · E + Var_add`.
pub fn fit_photon_transfer(points: &[(f64, f64)]) -> Result<PhotonTransferFit> {
    let (slope, intercept, residuals) = ols(points)?;
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(PhotonTransferFit {
        k: slope,
        var_additive: intercept,
        residual_rms: rms,
    })
}

fn ols(points: &[(f64, f64)]) -> Result<(f64, f64, Vec<f64>)> {
    if points.len() < 2 {
        return Err(Error::Degenerate(format!("line fit needs at least 2 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 || !sxx.is_finite() {
        return Err(Error::Degenerate("all abscissae are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = points.iter().map(|p| p.1 - (slope * p.0 + intercept)).collect();
    Ok((slope, intercept, residuals))
}

/// One `(mean, variance)` point per region. Frames are taken in consecutive
/// pairs; each pair contributes its mean level and half the variance of its
/// difference, which cancels fixed-pattern structure. Pair statistics are
/// averaged per region.
pub fn gray_chart_points(set: &CalibrationSet) -> Result<Vec<(f64, f64)>> {
    if set.kind != CalibrationKind::GrayChart {
        return Err(Error::InvalidArgument("expected a gray_chart calibration set".into()));
    }
    let pairs = set.frames.len() / 2;
    if pairs == 0 {
        return Err(Error::InvalidArgument("gray-chart sets need at least 2 frames".into()));
    }
    let mut points = Vec::with_capacity(set.regions.len());
    for r in &set.regions {
        let (mut mean_acc, mut var_acc) = (0.0, 0.0);
        for p in 0..pairs {
            let a = set.frames[2 * p].pixels.slice(s![.., r.y..r.y + r.h, r.x..r.x + r.w]);
            let b = set.frames[2 * p + 1].pixels.slice(s![.., r.y..r.y + r.h, r.x..r.x + r.w]);
            let n = a.len() as f64;
            let mean = (a.sum() + b.sum()) / (2.0 * n);
            let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
            let dm = diffs.iter().sum::<f64>() / n;
            let dvar = diffs.iter().map(|d| (d - dm).powi(2)).sum::<f64>() / (n - 1.0);
            mean_acc += mean;
            var_acc += dvar / 2.0;
        }
        points.push((mean_acc / pairs as f64, var_acc / pairs as f64));
    }
    Ok(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DarkAnalysis {
    pub dark_rate: f64,
    pub sigma_row: f64,
    pub sigma_read: f64,
}

/// Splits dark-frame variation into a per-row offset and per-pixel read noise.
///
/// Rows of every frame are averaged over all channels and columns. The read
/// noise is the spread of pixels around their row mean, corrected for the
/// degree of freedom the row mean absorbs; the row noise is the spread of row
/// means minus the read-noise share a finite row mean still carries.
pub fn analyze_dark_frames(set: &CalibrationSet, k: f64) -> Result<DarkAnalysis> {
    if set.kind != CalibrationKind::DarkFrame {
        return Err(Error::InvalidArgument("expected a dark_frame calibration set".into()));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidArgument(format!("gain k must be positive, got {k}")));
    }
    let (c, rows, cols) = set.frames[0].pixels.dim();
    let row_len = (c * cols) as f64;
    if row_len < 2.0 {
        return Err(Error::Degenerate("rows need at least 2 samples".into()));
    }
    let mut row_means = Vec::with_capacity(set.frames.len() * rows);
    let mut resid_ss = 0.0;
    for f in &set.frames {
        for y in 0..rows {
            let row = f.pixels.slice(s![.., y, ..]);
            let m = row.sum() / row_len;
            resid_ss += row.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            row_means.push(m);
        }
    }
    let n_rows = row_means.len() as f64;
    let global = row_means.iter().sum::<f64>() / n_rows;
    let read_var = resid_ss / (n_rows * (row_len - 1.0));
    let row_mean_var = if n_rows > 1.0 {
        row_means.iter().map(|m| (m - global).powi(2)).sum::<f64>() / (n_rows - 1.0)
    } else {
        0.0
    };
    let row_var = (row_mean_var - read_var / row_len).max(0.0);
    Ok(DarkAnalysis {
        dark_rate: (global / k).max(0.0),
        sigma_row: row_var.sqrt(),
        sigma_read: read_var.sqrt(),
    })
}

/// Calibrates one ISO from its gray-chart and dark-frame sets. `q` is the
/// quantization step in DN.
pub fn calibrate_iso(gray: &CalibrationSet, dark: &CalibrationSet, q: f64) -> Result<NoiseParams> {
    if gray.iso != dark.iso {
        return Err(Error::InvalidArgument(format!("ISO mismatch: gray chart {} vs dark frames {}", gray.iso, dark.iso)));
    }
    let fit = fit_photon_transfer(&gray_chart_points(gray)?)?;
    if !(fit.k > 0.0) {
        return Err(Error::Degenerate(format!("photon-transfer slope {} is not positive", fit.k)));
    }
    let d = analyze_dark_frames(dark, fit.k)?;
    let p = NoiseParams {
        iso: gray.iso,
        k: fit.k,
        sigma_read: d.sigma_read,
        sigma_row: d.sigma_row,
        dark_rate: d.dark_rate,
        q,
    };
    p.validate()?;
    Ok(p)
}

/// OLS of `log σ` on `log k`; `residual_std` is the sample standard deviation
/// of the log residuals.
pub fn fit_iso_log_model(pairs: &[(f64, f64)]) -> Result<LogLinearModel> {
    if let Some(p) = pairs.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return Err(Error::InvalidArgument(format!("log model needs positive (k, sigma), got {p:?}")));
    }
    let logs: Vec<(f64, f64)> = pairs.iter().map(|&(k, s)| (k.ln(), s.ln())).collect();
    let (slope, intercept, residuals) = ols(&logs)?;
    let n = residuals.len() as f64;
    let rm = residuals.iter().sum::<f64>() / n;
    let std = (residuals.iter().map(|r| (r - rm).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(LogLinearModel {
        slope,
        intercept,
        residual_std: std,
    })
}

/// Builds a normalized-unit synthesis config from per-ISO calibrations in DN.
pub fn synthesis_config_from(params: &[NoiseParams], white_level: f64, seed: u64) -> Result<SynthesisConfig> {
    let read = fit_iso_log_model(&params.iter().map(|p| (p.k, p.sigma_read)).collect::<Vec<_>>())?;
    let row = fit_iso_log_model(&params.iter().map(|p| (p.k, p.sigma_row)).collect::<Vec<_>>())?;
    let k_min = params.iter().map(|p| p.k).fold(f64::INFINITY, f64::min);
    let k_max = params.iter().map(|p| p.k).fold(0.0, f64::max);
    let n = params.len() as f64;
    let cfg = SynthesisConfig {
        k_range: [k_min / white_level, k_max / white_level],
        read_model: read.rescaled(white_level),
        row_model: row.rescaled(white_level),
        dark_rate: params.iter().map(|p| p.dark_rate).sum::<f64>() / n,
        q: params.iter().map(|p| p.q).sum::<f64>() / n / white_level,
        seed,
        ..SynthesisConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Simulated gray-chart capture: one `roi × roi` patch per level (in DN),
/// laid side by side on a single sensor row band.
pub fn simulate_gray_chart<R: Rng + ?Sized>(
    params: &NoiseParams,
    levels: &[f64],
    roi: usize,
    frames: usize,
    rng: &mut R,
) -> Result<CalibrationSet> {
    params.validate()?;
    let cols = roi * levels.len();
    let clean = Array3::from_shape_fn((1, roi, cols), |(_, _, x)| levels[x / roi]);
    let frames = (0..frames)
        .map(|_| {
            let mut px = clean.clone();
            inject_noise(&mut px, params, rng);
            PlenopticImage::new(px, (1, 1), 1023.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let regions = (0..levels.len())
        .map(|i| Region {
            x: i * roi,
            y: 0,
            w: roi,
            h: roi,
        })
        .collect();
    CalibrationSet::new(frames, params.iso, 1.0, CalibrationKind::GrayChart, regions)
}

/// Simulated dark frames (no incident light) of `rows × cols` pixels.
pub fn simulate_dark_frames<R: Rng + ?Sized>(
    params: &NoiseParams,
    frames: usize,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<CalibrationSet> {
    params.validate()?;
    let frames = (0..frames)
        .map(|_| {
            let mut px = Array3::zeros((1, rows, cols));
            inject_noise(&mut px, params, rng);
            PlenopticImage::new(px, (1, 1), 1023.0)
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationSet::new(frames, params.iso, 1.0, CalibrationKind::DarkFrame, Vec::new())
}
