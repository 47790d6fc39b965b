//! The progressive restoration network.
//!
//! A four-scale encoder/decoder runs over `[uv, c, h, w]` features (views as
//! the batch axis). Each scale holds a ResBlock followed by an angular block;
//! spatial transformer blocks sit at 1/8 scale. Heads then produce
//!
//! ```text
//! L_de¼  = L_in¼ + R¼
//! L_re¼  = L_de¼ / I¼
//! L_re½  = up(L_re¼) + R½
//! L_re   = up(L_re½) + R
//! L_out  = L_re + H,      H from concat(α · L_in, full-scale features)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::angular::{AngularBlock, AngularConfig};
use super::blocks::{Aram, AramConfig, ResBlock};
use super::layers::{Bound, Conv, Init, ParamStore};
use super::spatial::{SpatialBlock, SpatialConfig};
use crate::error::{Error, Result};
use crate::lightfield::filter::reflect_index;
use crate::lightfield::{ColorSpace, LightField};
use crate::tensor::{Graph, Padding, PaddingMode, Tensor, Var};

/// Spatial dims must be multiples of this (three halvings, then 8 windows).
pub const SPATIAL_MULTIPLE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Channel widths at full, 1/2, 1/4 and 1/8 scale.
    pub widths: [usize; 4],
    pub angular: AngularConfig,
    pub spatial: SpatialConfig,
    pub spatial_blocks: usize,
    pub aram: AramConfig,
    /// Floor of the illumination map.
    pub illum_floor: f64,
    pub ln_eps: f64,
    /// Seed of the weight initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            widths: [16, 32, 64, 128],
            angular: AngularConfig::default(),
            spatial: SpatialConfig::default(),
            spatial_blocks: 2,
            aram: AramConfig::default(),
            illum_floor: 0.01,
            ln_eps: 1e-5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small widths for desk-scale runs.
    pub fn toy() -> Self {
        Self {
            widths: [8, 16, 32, 32],
            angular: AngularConfig { m: 4, p: 4, d: 8 },
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "toy" => Ok(Self::toy()),
            _ => Err(Error::InvalidArgument(format!("unknown model preset {name:?} (expected default or toy)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub res: ResBlock,
    pub angular: AngularBlock,
}

impl Stage {
    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let x = self.res.forward(g, p, x)?;
        self.angular.forward(g, p, x)
    }
}

#[derive(Clone, Debug)]
pub struct Heads {
    pub denoise: Conv,
    pub illum: Conv,
    pub refine_half: Conv,
    pub refine_full: Conv,
    pub highfreq: Conv,
}

#[derive(Clone, Debug)]
pub struct LRTModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub stem: Conv,
    pub encoder: Vec<Stage>,
    pub downs: Vec<Conv>,
    pub bottleneck: Vec<SpatialBlock>,
    /// Bilinear upsampling followed by these 1×1 convolutions, deepest first.
    pub ups: Vec<Conv>,
    /// Decoder stages at 1/4, 1/2 and full scale.
    pub decoder: Vec<Stage>,
    pub heads: Heads,
    pub aram: Aram,
}

/// Graph handles of every intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub l_in: Var,
    pub l_in_q: Var,
    pub l_de_q: Var,
    pub illum_q: Var,
    pub l_re_q: Var,
    pub r_half: Var,
    pub l_re_half: Var,
    pub r_full: Var,
    pub h_map: Var,
    pub l_adj: Var,
    pub alpha: Var,
    pub l_re: Var,
    pub l_out: Var,
}

/// Values of every intermediate; light-field tensors are `[uv, c, h, w]`.
#[derive(Clone, Debug)]
pub struct RestorationOutputs {
    pub angular: (usize, usize),
    pub color: ColorSpace,
    pub l_de_q: Tensor,
    /// `[uv, 1, h/4, w/4]`.
    pub illum_q: Tensor,
    pub l_re_q: Tensor,
    pub r_half: Tensor,
    pub l_re_half: Tensor,
    pub r_full: Tensor,
    pub h_map: Tensor,
    pub l_adj: Tensor,
    pub alpha: f64,
    pub l_re: Tensor,
    pub l_out: Tensor,
}

impl RestorationOutputs {
    /// Wraps one of the tensors as a light field (values are not clamped).
    pub fn light_field(&self, t: &Tensor) -> Result<LightField> {
        let color = if t.shape()[1] == 1 { ColorSpace::Y } else { self.color };
        LightField::from_tensor(t, self.angular, color, 1.0)
    }
}

fn color_for(channels: usize) -> Result<ColorSpace> {
    match channels {
        1 => Ok(ColorSpace::Y),
        3 => Ok(ColorSpace::Rgb),
        _ => Err(Error::Shape(format!("light fields carry 1 or 3 channels, got {channels}"))),
    }
}

/// Reflect-pads the last two axes of a 4-D tensor at the bottom and right.
pub fn pad_reflect(t: &Tensor, hp: usize, wp: usize) -> Result<Tensor> {
    let s = t.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if hp < h || wp < w {
        return Err(Error::Shape(format!("cannot pad {h}x{w} down to {hp}x{wp}")));
    }
    let src = t.data();
    let mut out = Vec::with_capacity(b * c * hp * wp);
    for plane in 0..b * c {
        let base = plane * h * w;
        for y in 0..hp {
            let sy = reflect_index(y as isize, h);
            for x in 0..wp {
                out.push(src[base + sy * w + reflect_index(x as isize, w)]);
            }
        }
    }
    Tensor::from_vec(&[b, c, hp, wp], out)
}

impl LRTModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let [w0, w1, w2, w3] = config.widths;
        if config.widths.contains(&0) || !(config.illum_floor > 0.0 && config.illum_floor < 1.0) {
            return Err(Error::InvalidArgument("widths must be positive and illum_floor in (0, 1)".into()));
        }
        color_for(config.in_channels)?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut init = Init::new(&mut params, &mut rng);
        let i = &mut init;
        let (cin, eps) = (config.in_channels, config.ln_eps);
        let stage = |i: &mut Init<'_, ChaCha8Rng>, name: &str, c: usize| -> Result<Stage> {
            i.scope(name, |i| {
                Ok(Stage {
                    res: ResBlock::new(i, "res", c),
                    angular: AngularBlock::new(i, "angular", c, config.angular, eps)?,
                })
            })
        };
        let down = Padding::same(3, PaddingMode::Reflect);

        let stem = Conv::new(i, "stem", cin, w0, 3, 1.0);
        let encoder = vec![
            stage(i, "enc0", w0)?,
            stage(i, "enc1", w1)?,
            stage(i, "enc2", w2)?,
            stage(i, "enc3", w3)?,
        ];
        let downs = vec![
            Conv::general(i, "down0", w0, w1, 3, 2, 1, down, 1.0),
            Conv::general(i, "down1", w1, w2, 3, 2, 1, down, 1.0),
            Conv::general(i, "down2", w2, w3, 3, 2, 1, down, 1.0),
        ];
        let bottleneck = (0..config.spatial_blocks)
            .map(|k| SpatialBlock::new(i, &format!("bottleneck{k}"), w3, &config.spatial, eps))
            .collect::<Result<Vec<_>>>()?;
        let ups = vec![
            Conv::general(i, "up2", w3, w2, 1, 1, 1, Padding::none(), 1.0),
            Conv::general(i, "up1", w2, w1, 1, 1, 1, Padding::none(), 1.0),
            Conv::general(i, "up0", w1, w0, 1, 1, 1, Padding::none(), 1.0),
        ];
        let decoder = vec![stage(i, "dec2", w2)?, stage(i, "dec1", w1)?, stage(i, "dec0", w0)?];
        // Zero heads: every stage starts on its identity path.
        let heads = i.scope("head", |i| Heads {
            denoise: Conv::new(i, "denoise", w2, cin, 3, 0.0),
            illum: Conv::new(i, "illum", w2, 1, 3, 0.0),
            refine_half: Conv::new(i, "refine_half", w1, cin, 3, 0.0),
            refine_full: Conv::new(i, "refine_full", w0, cin, 3, 0.0),
            highfreq: Conv::new(i, "highfreq", cin + w0, cin, 3, 0.0),
        });
        let aram = Aram::new(i, "aram", config.aram);
        Ok(Self {
            config,
            params,
            stem,
            encoder,
            downs,
            bottleneck,
            ups,
            decoder,
            heads,
            aram,
        })
    }

    pub fn count_parameters(&self) -> usize {
        self.params.scalar_count()
    }

    /// Builds the forward pass for `l_in` (`[uv, c, h, w]`, spatial dims
    /// multiples of [`SPATIAL_MULTIPLE`]).
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, l_in: &Tensor) -> Result<ForwardVars> {
        let s = l_in.shape().to_vec();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects [uv, {}, h, w] input, got {s:?}",
                self.config.in_channels
            )));
        }
        if s[2] % SPATIAL_MULTIPLE != 0 || s[3] % SPATIAL_MULTIPLE != 0 {
            return Err(Error::Dimension(format!(
                "spatial dims {}x{} must be multiples of {SPATIAL_MULTIPLE}",
                s[2], s[3]
            )));
        }
        let l_in_q = quarter(l_in)?;
        let x0 = g.constant(l_in.clone());
        let xq = g.constant(l_in_q);

        let mut x = self.stem.forward(g, p, x0)?;
        let mut skips = Vec::with_capacity(4);
        for (k, st) in self.encoder.iter().enumerate() {
            if k > 0 {
                x = self.downs[k - 1].forward(g, p, x)?;
            }
            x = st.forward(g, p, x)?;
            skips.push(x);
        }
        for sb in &self.bottleneck {
            x = sb.forward(g, p, x)?;
        }
        let mut dec = Vec::with_capacity(3);
        for (k, (up, st)) in self.ups.iter().zip(&self.decoder).enumerate() {
            let u = g.upsample2x(x)?;
            let u = up.forward(g, p, u)?;
            let u = g.add(u, skips[2 - k])?;
            x = st.forward(g, p, u)?;
            dec.push(x);
        }
        let (d_q, d_half, d_full) = (dec[0], dec[1], dec[2]);

        let hd = &self.heads;
        let r_q = hd.denoise.forward(g, p, d_q)?;
        let r_q = g.tanh(r_q)?;
        let l_de_q = g.add(xq, r_q)?;
        let il = hd.illum.forward(g, p, d_q)?;
        let il = g.sigmoid(il)?;
        let illum_q = g.clamp_min(il, self.config.illum_floor)?;
        let l_re_q = g.div(l_de_q, illum_q)?;

        let r_half = hd.refine_half.forward(g, p, d_half)?;
        let r_half = g.tanh(r_half)?;
        let up_q = g.upsample2x(l_re_q)?;
        let l_re_half = g.add(up_q, r_half)?;

        let r_full = hd.refine_full.forward(g, p, d_full)?;
        let r_full = g.tanh(r_full)?;
        let up_h = g.upsample2x(l_re_half)?;
        let l_re = g.add(up_h, r_full)?;

        let (alpha, l_adj) = self.aram.forward(g, p, illum_q, x0)?;
        let hf_in = g.concat(&[l_adj, d_full], 1)?;
        let h_map = hd.highfreq.forward(g, p, hf_in)?;
        let h_map = g.tanh(h_map)?;
        let l_out = g.add(l_re, h_map)?;

        Ok(ForwardVars {
            l_in: x0,
            l_in_q: xq,
            l_de_q,
            illum_q,
            l_re_q,
            r_half,
            l_re_half,
            r_full,
            h_map,
            l_adj,
            alpha,
            l_re,
            l_out,
        })
    }
}

/// Two anti-aliased halvings of a `[uv, c, h, w]` tensor.
fn quarter(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    let lf = LightField::from_tensor(t, (s[0], 1), color_for(s[1])?, 1.0)?;
    Ok(lf.downsample_half()?.downsample_half()?.to_tensor())
}

/// Restores `l_in`, padding its spatial dims up to multiples of
/// [`SPATIAL_MULTIPLE`] by reflection and cropping every output back.
pub fn lrt_forward(l_in: &LightField, model: &LRTModel) -> Result<RestorationOutputs> {
    let (h, w) = l_in.spatial_dims();
    let up = |n: usize| n.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE;
    let x = pad_reflect(&l_in.to_tensor(), up(h), up(w))?;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let v = model.forward_graph(&mut g, &p, &x)?;
    let crop = |g: &Graph, var: Var, div: usize| -> Result<Tensor> {
        crop_tensor(g.value(var), h.div_ceil(div), w.div_ceil(div))
    };
    Ok(RestorationOutputs {
        angular: l_in.angular_dims(),
        color: l_in.color(),
        l_de_q: crop(&g, v.l_de_q, 4)?,
        illum_q: crop(&g, v.illum_q, 4)?,
        l_re_q: crop(&g, v.l_re_q, 4)?,
        r_half: crop(&g, v.r_half, 2)?,
        l_re_half: crop(&g, v.l_re_half, 2)?,
        r_full: crop(&g, v.r_full, 1)?,
        h_map: crop(&g, v.h_map, 1)?,
        l_adj: crop(&g, v.l_adj, 1)?,
        alpha: g.value(v.alpha).data()[0],
        l_re: crop(&g, v.l_re, 1)?,
        l_out: crop(&g, v.l_out, 1)?,
    })
}

/// Top-left `h × w` corner of the last two axes of a 4-D tensor.
pub fn crop_tensor(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = t.shape();
    let (b, c, th, tw) = (s[0], s[1], s[2], s[3]);
    if h == th && w == tw {
        return Ok(t.clone());
    }
    if h > th || w > tw {
        return Err(Error::Shape(format!("cannot crop {th}x{tw} to {h}x{w}")));
    }
    let mut out = Vec::with_capacity(b * c * h * w);
    for plane in 0..b * c {
        for y in 0..h {
            let row = plane * th * tw + y * tw;
            out.extend_from_slice(&t.data()[row..row + w]);
        }
    }
    Tensor::from_vec(&[b, c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_then_crop_is_identity() {
        let t = Tensor::from_vec(&[1, 2, 3, 5], (0..30).map(f64::from).collect()).unwrap();
        let p = pad_reflect(&t, 7, 9).unwrap();
        assert_eq!(p.get(&[0, 0, 3, 0]), t.get(&[0, 0, 1, 0]));
        assert_eq!(p.get(&[0, 1, 0, 5]), t.get(&[0, 1, 0, 3]));
        assert_eq!(crop_tensor(&p, 3, 5).unwrap(), t);
    }

    #[test]
    fn toy_parameter_names_are_unique() {
        let m = LRTModel::new(ModelConfig::toy()).unwrap();
        let mut names: Vec<_> = m.params.iter().map(|(n, _)| n.to_string()).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
        assert!(m.params.find("head.illum.weight").is_some());
    }

    #[test]
    fn rejects_unaligned_graph_input() {
        let m = LRTModel::new(ModelConfig::toy()).unwrap();
        let mut g = Graph::new();
        let p = m.params.bind(&mut g, false);
        assert!(m.forward_graph(&mut g, &p, &Tensor::zeros(&[1, 3, 32, 64])).is_err());
    }
}
