//! Sensor noise model: calibration fitters and dark light-field synthesis.
//!
//! A noisy reading of an expected signal `x` (same units as the parameters) is
//!
//! ```text
//! k · Poisson(x / k + dark_rate) + N(0, σ_read) + r_row + U(-q/2, q/2)
//! ```
//!
//! where `r_row ~ N(0, σ_row)` is drawn once per sensor row and shared by
//! every channel of that row.

pub mod calibrate;
pub mod pair;

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::LightField;

/// Quantization step of a 10-bit converter in normalized units.
pub const DEFAULT_Q: f64 = 1.0 / 1023.0;
pub const DEFAULT_DARK_RATE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub iso: u32,
    /// System gain: output units per electron.
    pub k: f64,
    pub sigma_read: f64,
    pub sigma_row: f64,
    /// Expected dark electrons per exposure.
    pub dark_rate: f64,
    pub q: f64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::InvalidArgument(format!("gain k must be positive, got {}", self.k)));
        }
        if !(self.q.is_finite() && self.q > 0.0) {
            return Err(Error::InvalidArgument(format!("quantization step must be positive, got {}", self.q)));
        }
        for (name, v) in [
            ("sigma_read", self.sigma_read),
            ("sigma_row", self.sigma_row),
            ("dark_rate", self.dark_rate),
        ] {
            if !finite_nonneg(v) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Converts DN-valued parameters to units where `white_level` maps to 1.
    pub fn normalized(&self, white_level: f64) -> Self {
        Self {
            iso: self.iso,
            k: self.k / white_level,
            sigma_read: self.sigma_read / white_level,
            sigma_row: self.sigma_row / white_level,
            dark_rate: self.dark_rate,
            q: self.q / white_level,
        }
    }

    /// Variance of one reading of expected signal `x` before clamping.
    pub fn variance(&self, x: f64) -> f64 {
        self.k * x
            + self.k * self.k * self.dark_rate
            + self.sigma_read * self.sigma_read
            + self.sigma_row * self.sigma_row
            + self.q * self.q / 12.0
    }
}

/// `log σ = slope · log k + intercept`, with a sampling band of
/// `± residual_std` around the line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLinearModel {
    pub slope: f64,
    pub intercept: f64,
    pub residual_std: f64,
}

impl LogLinearModel {
    pub fn eval(&self, k: f64) -> f64 {
        k.powf(self.slope) * self.intercept.exp()
    }

    /// Re-expresses a DN model in units where `white_level` maps to 1: both
    /// `k` and `σ` shrink by the same factor.
    pub fn rescaled(&self, white_level: f64) -> Self {
        Self {
            intercept: self.intercept + (self.slope - 1.0) * white_level.ln(),
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub beta_range: [f64; 2],
    pub k_range: [f64; 2],
    pub read_model: LogLinearModel,
    pub row_model: LogLinearModel,
    pub dark_rate: f64,
    pub q: f64,
    pub seed: u64,
    #[serde(default)]
    pub iso: u32,
}

impl Default for SynthesisConfig {
    /// Normalized-unit defaults for a 10-bit sensor at high gain.
    fn default() -> Self {
        Self {
            beta_range: [0.05, 0.2],
            k_range: [5e-4, 4e-3],
            read_model: LogLinearModel {
                slope: 1.0,
                intercept: 1.5f64.ln(),
                residual_std: 0.1,
            },
            row_model: LogLinearModel {
                slope: 1.0,
                intercept: 0.5f64.ln(),
                residual_std: 0.1,
            },
            dark_rate: DEFAULT_DARK_RATE,
            q: DEFAULT_Q,
            seed: 0,
            iso: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let [b0, b1] = self.beta_range;
        if !(b0 > 0.0 && b0 <= b1 && b1 <= 1.0) {
            return Err(Error::InvalidArgument(format!("beta_range must satisfy 0 < min <= max <= 1, got {:?}", self.beta_range)));
        }
        let [k0, k1] = self.k_range;
        if !(k0 > 0.0 && k0 <= k1 && k1.is_finite()) {
            return Err(Error::InvalidArgument(format!("k_range must satisfy 0 < min <= max, got {:?}", self.k_range)));
        }
        for m in [&self.read_model, &self.row_model] {
            if !(m.slope.is_finite() && m.intercept.is_finite() && m.residual_std.is_finite() && m.residual_std >= 0.0) {
                return Err(Error::InvalidArgument(format!("invalid log-linear model {m:?}")));
            }
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!("dark_rate must be >= 0, got {}", self.dark_rate)));
        }
        if !(self.q.is_finite() && self.q > 0.0) {
            return Err(Error::InvalidArgument(format!("q must be positive, got {}", self.q)));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws one parameter set: `k` uniform over its range, each `σ` log-uniform
/// within its model band at that `k`.
pub fn sample_noise_params<R: Rng + ?Sized>(cfg: &SynthesisConfig, rng: &mut R) -> NoiseParams {
    let k = uniform(rng, cfg.k_range[0], cfg.k_range[1]);
    let mut sigma = |m: &LogLinearModel| {
        let off = uniform(rng, -m.residual_std, m.residual_std);
        k.powf(m.slope) * (m.intercept + off).exp()
    };
    let sigma_read = sigma(&cfg.read_model);
    let sigma_row = sigma(&cfg.row_model);
    NoiseParams {
        iso: cfg.iso,
        k,
        sigma_read,
        sigma_row,
        dark_rate: cfg.dark_rate,
        q: cfg.q,
    }
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    // `new` only rejects non-positive or non-finite rates, both excluded here
    Poisson::new(lambda).map_or(lambda, |d| d.sample(rng))
}

/// Replaces every expected signal value of a `(channel, row, col)` sensor
/// array with a noisy reading. Rows are the second axis.
pub fn inject_noise<R: Rng + ?Sized>(signal: &mut Array3<f64>, p: &NoiseParams, rng: &mut R) {
    let (c, rows, cols) = signal.dim();
    for y in 0..rows {
        let row_offset = p.sigma_row * rng.sample::<f64, _>(StandardNormal);
        for ch in 0..c {
            for x in 0..cols {
                let v = &mut signal[[ch, y, x]];
                let electrons = poisson(rng, (*v).max(0.0) / p.k + p.dark_rate);
                let read = p.sigma_read * rng.sample::<f64, _>(StandardNormal);
                let quant = (rng.random::<f64>() - 0.5) * p.q;
                *v = p.k * electrons + read + row_offset + quant;
            }
        }
    }
}

/// A synthesized training pair.
#[derive(Clone, Debug)]
pub struct DarkSample {
    pub l_in: LightField,
    pub l_low: LightField,
    pub params: NoiseParams,
    pub beta: f64,
}

/// Darkens `gt` by `beta` and injects noise on its plenoptic layout, in
/// normalized units.
pub fn synthesize_with<R: Rng + ?Sized>(gt: &LightField, params: &NoiseParams, beta: f64, rng: &mut R) -> Result<DarkSample> {
    params.validate()?;
    if gt.views().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidArgument("ground truth values must lie in [0, 1]".into()));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!("beta must lie in (0, 1], got {beta}")));
    }
    let l_low = gt.scaled(beta)?;
    let mut plen = l_low.to_plenoptic();
    inject_noise(&mut plen.pixels, params, rng);
    plen.pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
    let l_in = plen.to_sai(gt.color())?;
    Ok(DarkSample {
        l_in,
        l_low,
        params: params.clone(),
        beta,
    })
}

/// Samples `beta` and the noise parameters from `cfg`, then synthesizes.
pub fn synthesize_dark<R: Rng + ?Sized>(gt: &LightField, cfg: &SynthesisConfig, rng: &mut R) -> Result<DarkSample> {
    cfg.validate()?;
    let beta = uniform(rng, cfg.beta_range[0], cfg.beta_range[1]);
    let params = sample_noise_params(cfg, rng);
    synthesize_with(gt, &params, beta, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::ColorSpace;
    use ndarray::Array5;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(k: f64, read: f64, row: f64, dark: f64, q: f64) -> NoiseParams {
        NoiseParams {
            iso: 100,
            k,
            sigma_read: read,
            sigma_row: row,
            dark_rate: dark,
            q,
        }
    }

    fn flat_lf(value: f64, h: usize, w: usize) -> LightField {
        LightField::new(Array5::from_elem((1, 1, 1, h, w), value), ColorSpace::Y, 1023.0).unwrap()
    }

    fn moments(lf: &LightField) -> (f64, f64) {
        let n = lf.len() as f64;
        let mean = lf.views().sum() / n;
        let var = lf.views().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn low_light_mean_is_exact() {
        let gt = flat_lf(0.5, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = synthesize_with(&gt, &params(0.01, 0.0, 0.0, 1.0, 1e-9), 0.1, &mut rng).unwrap();
        assert_eq!(s.l_low.mean(), 0.05);
    }

    #[test]
    fn poisson_mean_composition() {
        let gt = flat_lf(1.0, 100, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = params(0.01, 0.0, 0.0, 1.0, 1e-12);
        let (mean, _) = moments(&synthesize_with(&gt, &p, 0.2, &mut rng).unwrap().l_in);
        assert!((mean / 0.21 - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn variance_composition() {
        let gt = flat_lf(1.0, 400, 500);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = params(0.01, 0.005, 0.002, 1.0, 1.0 / 1023.0);
        let (mean, var) = moments(&synthesize_with(&gt, &p, 0.2, &mut rng).unwrap().l_in);
        assert!((mean / 0.21 - 1.0).abs() < 0.01);
        let expected = p.variance(0.2);
        assert!((var / expected - 1.0).abs() < 0.02, "var {var} vs {expected}");
    }

    #[test]
    fn row_offset_is_constant_along_rows() {
        // With only row noise active (and a negligible q), every sensor row is flat.
        let mut sig = Array3::from_elem((3, 20, 30), 0.0);
        let p = params(1e-9, 0.0, 0.5, 0.0, 1e-15);
        inject_noise(&mut sig, &p, &mut ChaCha8Rng::seed_from_u64(4));
        for y in 0..20 {
            let first = sig[[0, y, 0]];
            let spread = sig
                .slice(ndarray::s![.., y, ..])
                .iter()
                .map(|v| (v - first).abs())
                .fold(0.0, f64::max);
            assert!(spread < 1e-12);
        }
        assert!(sig[[0, 0, 0]] != sig[[0, 1, 0]]);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let gt = LightField::new(
            Array5::from_shape_fn((3, 3, 3, 8, 8), |(a, b, c, y, x)| ((a + b + c + y + x) % 7) as f64 / 7.0),
            ColorSpace::Rgb,
            1023.0,
        )
        .unwrap();
        let cfg = SynthesisConfig::default();
        let a = synthesize_dark(&gt, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = synthesize_dark(&gt, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.l_in, b.l_in);
        assert_eq!(a.params, b.params);
        assert!(a.l_in.views().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_out_of_range_ground_truth() {
        let gt = LightField::new(Array5::from_elem((1, 1, 1, 2, 2), 1.5), ColorSpace::Y, 1.0).unwrap();
        let r = synthesize_dark(&gt, &SynthesisConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(r.is_err());
    }

    #[test]
    fn fixed_gain_range_and_collapsed_band() {
        let mut cfg = SynthesisConfig {
            k_range: [0.7, 0.7],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            assert_eq!(sample_noise_params(&cfg, &mut rng).k, 0.7);
        }
        cfg.k_range = [0.2, 1.0];
        cfg.read_model = LogLinearModel {
            slope: 1.0,
            intercept: 0.0,
            residual_std: 0.0,
        };
        for _ in 0..10 {
            let p = sample_noise_params(&cfg, &mut rng);
            assert_eq!(p.sigma_read, p.k);
        }
    }

    #[test]
    fn uniform_gain_mean() {
        let cfg = SynthesisConfig {
            k_range: [0.2, 1.0],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 10_000;
        let mean = (0..n).map(|_| sample_noise_params(&cfg, &mut rng).k).sum::<f64>() / n as f64;
        assert!((mean / 0.6 - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn sampled_sigmas_stay_in_band() {
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let p = sample_noise_params(&cfg, &mut rng);
            let m = cfg.read_model;
            let dev = p.sigma_read.ln() - (m.slope * p.k.ln() + m.intercept);
            assert!(dev.abs() <= m.residual_std + 1e-12);
        }
    }

    #[test]
    fn rescaled_model_matches_unit_change() {
        let m = LogLinearModel {
            slope: 0.6,
            intercept: 0.4,
            residual_std: 0.1,
        };
        let w = 1023.0;
        let k_dn = 2.5;
        let r = m.rescaled(w);
        assert!((r.eval(k_dn / w) - m.eval(k_dn) / w).abs() < 1e-15);
    }
}
