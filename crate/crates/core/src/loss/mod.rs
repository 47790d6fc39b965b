//! Training losses as graph expressions, plus evaluation metrics.

pub mod metrics;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::filter::{gaussian_taps, reflect_index};
use crate::lightfield::LightField;
use crate::net::ForwardVars;
use crate::tensor::{DiffAxis, Graph, Padding, Tensor, Var};
use metrics::{SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_de: f64,
    pub lambda_rec: f64,
    pub lambda_ssim: f64,
    pub lambda_sm: f64,
    pub lambda_ref: f64,
    pub lambda_hf: f64,
    /// Edge sensitivity of the smoothness term.
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_de: 10.0,
            lambda_rec: 5.0,
            lambda_ssim: 1.0,
            lambda_sm: 0.1,
            lambda_ref: 1.0,
            lambda_hf: 1.0,
            eta: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_de,
            self.lambda_rec,
            self.lambda_ssim,
            self.lambda_sm,
            self.lambda_ref,
            self.lambda_hf,
            self.eta,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub de: f64,
    pub sm: f64,
    #[serde(rename = "ref")]
    pub ref_: f64,
    pub hf: f64,
    pub rec: f64,
    pub ssim: f64,
    pub total: f64,
}

/// Weighted sum of the six components.
pub fn total_loss(de: f64, rec: f64, ssim: f64, sm: f64, ref_: f64, hf: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        de,
        sm,
        ref_,
        hf,
        rec,
        ssim,
        total: w.lambda_de * de
            + w.lambda_rec * rec
            + w.lambda_ssim * ssim
            + w.lambda_sm * sm
            + w.lambda_ref * ref_
            + w.lambda_hf * hf,
    }
}

/// `mean |a - b|`.
pub fn l1(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!("l1 operands {:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    g.mean(d)
}

/// Channel-maximum of `|forward difference|` of a `[B, c, h, w]` tensor,
/// shape `[B, 1, h, w]`.
fn edge_strength(t: &Tensor, axis: DiffAxis) -> Tensor {
    let s = t.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let d = t.data();
    let mut out = vec![0.0f64; b * h * w];
    for bi in 0..b {
        for ch in 0..c {
            let plane = &d[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let (ny, nx) = match axis {
                        DiffAxis::Horizontal => (y, reflect_index(x as isize + 1, w)),
                        DiffAxis::Vertical => (reflect_index(y as isize + 1, h), x),
                    };
                    let g = (plane[ny * w + nx] - plane[y * w + x]).abs();
                    let o = &mut out[bi * h * w + y * w + x];
                    *o = o.max(g);
                }
            }
        }
    }
    Tensor::from_vec(&[b, 1, h, w], out).expect("sized from the input")
}

/// Structure-aware smoothness of the illumination map `illum` (`[B, 1, h, w]`)
/// guided by `gt` (`[B, c, h, w]`): `|∇I| · exp(-η · max_c |∇gt_c|)`, averaged
/// over pixels and both directions.
pub fn smoothness_loss(g: &mut Graph, illum: Var, gt: &Tensor, eta: f64) -> Result<Var> {
    let s = g.shape(illum).to_vec();
    let gs = gt.shape();
    if s.len() != 4 || s[1] != 1 || gs.len() != 4 || gs[0] != s[0] || gs[2..] != s[2..] {
        return Err(Error::Shape(format!("smoothness loss: illumination {s:?} vs guide {gs:?}")));
    }
    let mut terms = Vec::with_capacity(2);
    for axis in [DiffAxis::Horizontal, DiffAxis::Vertical] {
        let weight = edge_strength(gt, axis).map(|e| (-eta * e).exp());
        let wv = g.constant(weight);
        let d = g.forward_diff(illum, axis)?;
        let d = g.abs(d)?;
        let d = g.mul(d, wv)?;
        terms.push(g.mean(d)?);
    }
    let both = g.add(terms[0], terms[1])?;
    g.scale(both, 0.5)
}

/// `mean |norm(I) - norm(Y)|` with per-map min-max normalization.
pub fn reference_loss(g: &mut Graph, illum: Var, y: Var) -> Result<Var> {
    let a = g.normalize_minmax(illum)?;
    let b = g.normalize_minmax(y)?;
    l1(g, a, b)
}

fn ssim_kernels(g: &mut Graph) -> (Var, Var) {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let kv = g.constant(Tensor::from_vec(&[1, 1, SSIM_WINDOW, 1], taps.clone()).expect("window taps"));
    let kh = g.constant(Tensor::from_vec(&[1, 1, 1, SSIM_WINDOW], taps).expect("window taps"));
    (kv, kh)
}

/// Mean SSIM of `[B, c, h, w]` tensors (valid Gaussian windows).
pub fn ssim_graph(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let s = g.shape(a).to_vec();
    if s.len() != 4 || g.shape(b) != s.as_slice() {
        return Err(Error::Shape(format!("ssim operands {s:?} vs {:?}", g.shape(b))));
    }
    if s[2] < SSIM_WINDOW || s[3] < SSIM_WINDOW {
        return Err(Error::Dimension(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}", s[2], s[3])));
    }
    let planes = [s[0] * s[1], 1, s[2], s[3]];
    let a = g.reshape(a, &planes)?;
    let b = g.reshape(b, &planes)?;
    let (kv, kh) = ssim_kernels(g);
    let blur = |g: &mut Graph, x: Var| -> Result<Var> {
        let y = g.conv2d(x, kv, None, 1, Padding::none(), 1)?;
        g.conv2d(y, kh, None, 1, Padding::none(), 1)
    };
    let mu_a = blur(g, a)?;
    let mu_b = blur(g, b)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = blur(g, aa)?;
    let e_bb = blur(g, bb)?;
    let e_ab = blur(g, ab)?;
    let mu_aa = g.mul(mu_a, mu_a)?;
    let mu_bb = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);

    let n1 = g.scale(mu_ab, 2.0)?;
    let n1 = g.add_scalar(n1, c1)?;
    let n2 = g.scale(cov, 2.0)?;
    let n2 = g.add_scalar(n2, c2)?;
    let d1 = g.add(mu_aa, mu_bb)?;
    let d1 = g.add_scalar(d1, c1)?;
    let d2 = g.add(var_a, var_b)?;
    let d2 = g.add_scalar(d2, c2)?;
    let num = g.mul(n1, n2)?;
    let den = g.mul(d1, d2)?;
    let map = g.div(num, den)?;
    g.mean(map)
}

/// `1 - SSIM(a, b)`.
pub fn ssim_loss(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let s = ssim_graph(g, a, b)?;
    let neg = g.scale(s, -1.0)?;
    g.add_scalar(neg, 1.0)
}

/// Supervision for one training pair; light-field tensors are `[uv, c, h, w]`.
#[derive(Clone, Debug)]
pub struct Targets {
    pub gt: Tensor,
    pub gt_half: Tensor,
    pub gt_q: Tensor,
    pub l_low_q: Tensor,
    /// Luma of `l_low_q`, `[uv, 1, h/4, w/4]`.
    pub y_low_q: Tensor,
    /// High-frequency part of `gt`.
    pub f_gt: Tensor,
}

impl Targets {
    pub fn new(gt: &LightField, l_low: &LightField) -> Result<Self> {
        let half = gt.downsample_half()?;
        let low_q = l_low.downsample_half()?.downsample_half()?;
        Ok(Self {
            gt: gt.to_tensor(),
            gt_q: half.downsample_half()?.to_tensor(),
            gt_half: half.to_tensor(),
            y_low_q: low_q.luma()?.to_tensor(),
            l_low_q: low_q.to_tensor(),
            f_gt: gt.highfreq_target()?.to_tensor(),
        })
    }
}

/// Graph handles of each loss component and the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub de: Var,
    pub sm: Var,
    pub ref_: Var,
    pub hf: Var,
    pub rec: Var,
    pub ssim: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let v = |x: Var| g.value(x).data()[0];
        LossBreakdown {
            de: v(self.de),
            sm: v(self.sm),
            ref_: v(self.ref_),
            hf: v(self.hf),
            rec: v(self.rec),
            ssim: v(self.ssim),
            total: v(self.total),
        }
    }
}

/// Builds every loss term of a forward pass against its targets.
pub fn training_losses(g: &mut Graph, out: &ForwardVars, t: &Targets, w: &LossWeights) -> Result<LossVars> {
    let gt = g.constant(t.gt.clone());
    let gt_half = g.constant(t.gt_half.clone());
    let gt_q = g.constant(t.gt_q.clone());
    let low_q = g.constant(t.l_low_q.clone());
    let y_q = g.constant(t.y_low_q.clone());
    let f_gt = g.constant(t.f_gt.clone());

    let de = l1(g, out.l_de_q, low_q)?;
    let sm = smoothness_loss(g, out.illum_q, &t.gt_q, w.eta)?;
    let ref_ = reference_loss(g, out.illum_q, y_q)?;
    let hf = l1(g, out.h_map, f_gt)?;
    let r1 = l1(g, out.l_re_q, gt_q)?;
    let r2 = l1(g, out.l_re_half, gt_half)?;
    let r3 = l1(g, out.l_re, gt)?;
    let r4 = l1(g, out.l_out, gt)?;
    let rec = g.add(r1, r2)?;
    let rec = g.add(rec, r3)?;
    let rec = g.add(rec, r4)?;
    let ssim = ssim_loss(g, out.l_out, gt)?;

    let mut total: Option<Var> = None;
    for (term, lambda) in [
        (de, w.lambda_de),
        (rec, w.lambda_rec),
        (ssim, w.lambda_ssim),
        (sm, w.lambda_sm),
        (ref_, w.lambda_ref),
        (hf, w.lambda_hf),
    ] {
        let s = g.scale(term, lambda)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    Ok(LossVars {
        de,
        sm,
        ref_,
        hf,
        rec,
        ssim,
        total: total.expect("six terms"),
    })
}
