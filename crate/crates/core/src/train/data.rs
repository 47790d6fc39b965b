//! Procedural light fields with layered parallax, used for smoke training.

use ndarray::Array5;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lightfield::{ColorSpace, LightField};

struct Disc {
    cy: f64,
    cx: f64,
    radius: f64,
    disparity: f64,
    color: [f64; 3],
    shade: f64,
}

/// A smooth RGB scene: a textured background plane behind a few soft discs,
/// each at its own disparity (pixels of shift per view step).
pub fn synthetic_scene(seed: u64, angular: (usize, usize), spatial: (usize, usize)) -> Result<LightField> {
    let (u, v) = angular;
    let (h, w) = spatial;
    if u == 0 || v == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("empty scene {u}x{v} views of {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.6));
    let tilt: [f64; 2] = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
    let period = rng.random_range(18.0..32.0) * hf.max(wf) / 64.0;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let bg_disp = rng.random_range(-0.5..0.0);
    let discs: Vec<Disc> = (0..3)
        .map(|_| Disc {
            cy: rng.random_range(0.2..0.8) * hf,
            cx: rng.random_range(0.2..0.8) * wf,
            radius: rng.random_range(0.12..0.25) * hf.min(wf),
            disparity: rng.random_range(0.25..1.5),
            color: std::array::from_fn(|_| rng.random_range(0.15..0.9)),
            shade: rng.random_range(-0.15..0.15),
        })
        .collect();

    let (cu, cv) = ((u as f64 - 1.0) / 2.0, (v as f64 - 1.0) / 2.0);
    let views = Array5::from_shape_fn((u, v, 3, h, w), |(a, b, c, y, x)| {
        let (du, dv) = (a as f64 - cu, b as f64 - cv);
        let (yf, xf) = (y as f64, x as f64);
        let (by, bx) = (yf + du * bg_disp, xf + dv * bg_disp);
        let ripple = 0.12 * ((bx + 0.6 * by) * std::f64::consts::TAU / period + phase + c as f64).sin();
        let mut val = base[c] + tilt[0] * (by / hf - 0.5) + tilt[1] * (bx / wf - 0.5) + ripple;
        // Back to front, each disc over what lies behind it.
        let mut order: Vec<&Disc> = discs.iter().collect();
        order.sort_by(|p, q| p.disparity.total_cmp(&q.disparity));
        for d in order {
            let (py, px) = (yf + du * d.disparity - d.cy, xf + dv * d.disparity - d.cx);
            let r = (py * py + px * px).sqrt();
            let alpha = 1.0 / (1.0 + ((r - d.radius) / 1.5).exp());
            let lit = d.color[c] * (1.0 + d.shade * py / d.radius);
            val = alpha * lit + (1.0 - alpha) * val;
        }
        val.clamp(0.0, 1.0)
    });
    LightField::new(views, ColorSpace::Rgb, 1.0)
}

/// `count` scenes with consecutive seeds starting at `seed`.
pub fn synthetic_scenes(count: usize, seed: u64, angular: (usize, usize), spatial: (usize, usize)) -> Result<Vec<LightField>> {
    (0..count as u64).map(|i| synthetic_scene(seed + i, angular, spatial)).collect()
}
