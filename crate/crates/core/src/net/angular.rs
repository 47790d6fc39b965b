//! Angular transformer block: attention across views with pooled view tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Bound, Conv, Init, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Padding, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngularConfig {
    /// Channel groups.
    pub m: usize,
    /// Pooled view size.
    pub p: usize,
    /// Query/key width.
    pub d: usize,
}

impl Default for AngularConfig {
    fn default() -> Self {
        Self { m: 4, p: 4, d: 32 }
    }
}

#[derive(Clone, Debug)]
pub struct AngularGroup {
    pub norm: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
}

/// Features are `[uv, c, h, w]`: the view index is the batch axis.
#[derive(Clone, Debug)]
pub struct AngularBlock {
    pub cfg: AngularConfig,
    pub channels: usize,
    pub groups: Vec<AngularGroup>,
    /// Per-pixel linear fusion of the concatenated groups.
    pub fuse: Conv,
}

impl AngularBlock {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, channels: usize, cfg: AngularConfig, ln_eps: f64) -> Result<Self> {
        if cfg.m == 0 || channels % cfg.m != 0 || cfg.p == 0 || cfg.d == 0 {
            return Err(Error::InvalidArgument(format!(
                "angular block: c = {channels} must be divisible by m = {}, p and d positive",
                cfg.m
            )));
        }
        let token = channels / cfg.m * cfg.p * cfg.p;
        Ok(init.scope(name, |i| {
            let groups = (0..cfg.m)
                .map(|gi| {
                    i.scope(&format!("group{gi}"), |i| AngularGroup {
                        norm: LayerNorm::new(i, "norm", token, ln_eps),
                        wq: Linear::new(i, "wq", token, cfg.d, false),
                        wk: Linear::new(i, "wk", token, cfg.d, false),
                    })
                })
                .collect();
            let fuse = Conv::general(i, "fuse", channels, channels, 1, 1, 1, Padding::none(), 0.0);
            AngularBlock {
                cfg,
                channels,
                groups,
                fuse,
            }
        }))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::Shape(format!("angular block expects [uv, {}, h, w], got {s:?}", self.channels)));
        }
        let (uv, cg, h, w) = (s[0], self.channels / self.cfg.m, s[2], s[3]);
        let parts = g.split(x, 1, &vec![cg; self.cfg.m])?;
        let mut outs = Vec::with_capacity(self.cfg.m);
        for (fi, grp) in parts.into_iter().zip(&self.groups) {
            let pooled = g.adaptive_avg_pool(fi, self.cfg.p, self.cfg.p)?;
            let tokens = g.reshape(pooled, &[uv, cg * self.cfg.p * self.cfg.p])?;
            let tokens = grp.norm.forward(g, p, tokens)?;
            let q = grp.wq.forward(g, p, tokens)?;
            let k = grp.wk.forward(g, p, tokens)?;
            let v = g.reshape(fi, &[uv, cg * h * w])?;
            let o = g.attention(q, k, v)?;
            outs.push(g.reshape(o, &[uv, cg, h, w])?);
        }
        let cat = g.concat(&outs, 1)?;
        let fused = self.fuse.forward(g, p, cat)?;
        g.add(x, fused)
    }
}
