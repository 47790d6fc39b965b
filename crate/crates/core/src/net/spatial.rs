//! Multi-scale spatial transformer block.
//!
//! Queries come from every pixel. Each channel group attends inside `n × n`
//! windows; its keys and values are summarized by a stride-`t` convolution so
//! a window of `s × s` tokens is attended through `⌈s/t⌉²` summaries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{from_tokens, to_tokens, Bound, Conv, Init, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Padding, PaddingMode, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialConfig {
    /// `(n, t)`: `n × n` windows per map, stride-`t` key/value reduction.
    pub groups: Vec<(usize, usize)>,
    pub ffn_ratio: usize,
    pub dw_kernel: usize,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            groups: vec![(1, 4), (2, 4), (4, 2), (8, 2)],
            ffn_ratio: 2,
            dw_kernel: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpatialGroup {
    pub n: usize,
    pub t: usize,
    pub reduce: Conv,
    pub norm: LayerNorm,
    pub wk: Linear,
    pub wv: Linear,
}

#[derive(Clone, Debug)]
pub struct SpatialBlock {
    pub channels: usize,
    pub norm1: LayerNorm,
    /// `c → 2c`, split evenly across the groups.
    pub wq: Linear,
    pub groups: Vec<SpatialGroup>,
    pub fuse: Linear,
    pub norm2: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_dw: Conv,
    pub ffn_out: Linear,
}

impl SpatialBlock {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, c: usize, cfg: &SpatialConfig, ln_eps: f64) -> Result<Self> {
        let ng = cfg.groups.len();
        if ng == 0 || c % 4 != 0 || (2 * c) % ng != 0 || cfg.groups.iter().any(|&(n, t)| n == 0 || t == 0) {
            return Err(Error::InvalidArgument(format!(
                "spatial block: c = {c} must be divisible by 4, 2c by the group count {ng}, and n, t positive"
            )));
        }
        let (dq, dr) = (2 * c / ng, c / 4);
        let hidden = cfg.ffn_ratio * c;
        Ok(init.scope(name, |i| {
            let norm1 = LayerNorm::new(i, "norm1", c, ln_eps);
            let wq = Linear::new(i, "wq", c, 2 * c, true);
            let groups = cfg
                .groups
                .iter()
                .enumerate()
                .map(|(gi, &(n, t))| {
                    i.scope(&format!("group{gi}"), |i| SpatialGroup {
                        n,
                        t,
                        reduce: Conv::general(i, "reduce", c, dr, t, t, 1, Padding::none(), 1.0),
                        norm: LayerNorm::new(i, "norm", dr, ln_eps),
                        wk: Linear::new(i, "wk", dr, dq, true),
                        wv: Linear::new(i, "wv", dr, dq, true),
                    })
                })
                .collect();
            // Residual outputs start at zero, so the block starts as the identity.
            let fuse = Linear::with_gain(i, "fuse", 2 * c, c, true, 0.0);
            let norm2 = LayerNorm::new(i, "norm2", c, ln_eps);
            let ffn_in = Linear::new(i, "ffn_in", c, hidden, true);
            let k = cfg.dw_kernel;
            let ffn_dw = Conv::general(i, "ffn_dw", hidden, hidden, k, 1, hidden, Padding::same(k, PaddingMode::Reflect), 1.0);
            let ffn_out = Linear::with_gain(i, "ffn_out", hidden, c, true, 0.0);
            SpatialBlock {
                channels: c,
                norm1,
                wq,
                groups,
                fuse,
                norm2,
                ffn_in,
                ffn_dw,
                ffn_out,
            }
        }))
    }

    /// `x` is `[B, c, h, w]` with `h` and `w` divisible by every window count.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::Shape(format!("spatial block expects [B, {}, h, w], got {s:?}", self.channels)));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if let Some(gr) = self.groups.iter().find(|gr| h % gr.n != 0 || w % gr.n != 0) {
            return Err(Error::Dimension(format!("spatial dims {h}x{w} not divisible by window count {}", gr.n)));
        }
        let dq = 2 * c / self.groups.len();

        let tokens = to_tokens(g, x)?;
        let xn = self.norm1.forward(g, p, tokens)?;
        let q_all = self.wq.forward(g, p, xn)?;
        let q_all = from_tokens(g, q_all)?;
        let qs = g.split(q_all, 1, &vec![dq; self.groups.len()])?;
        let xn_maps = from_tokens(g, xn)?;

        let mut outs = Vec::with_capacity(self.groups.len());
        for (grp, q) in self.groups.iter().zip(qs) {
            let (n, t) = (grp.n, grp.t);
            let (hs, ws) = (h / n, w / n);
            let bw = b * n * n;
            let qw = g.window_partition(q, n)?;
            let qw = to_tokens(g, qw)?;
            let qw = g.reshape(qw, &[bw, hs * ws, dq])?;

            let src = g.window_partition(xn_maps, n)?;
            let pad = Padding {
                top: 0,
                bottom: (t - hs % t) % t,
                left: 0,
                right: (t - ws % t) % t,
                mode: PaddingMode::Zero,
            };
            let red = grp.reduce.forward_padded(g, p, src, pad)?;
            let rs = g.shape(red).to_vec();
            let red = to_tokens(g, red)?;
            let red = g.reshape(red, &[bw, rs[2] * rs[3], rs[1]])?;
            let red = grp.norm.forward(g, p, red)?;
            let red = g.gelu(red)?;
            let k = grp.wk.forward(g, p, red)?;
            let v = grp.wv.forward(g, p, red)?;

            let o = g.attention(qw, k, v)?;
            let o = g.reshape(o, &[bw, hs, ws, dq])?;
            let o = from_tokens(g, o)?;
            outs.push(g.window_merge(o, n)?);
        }
        let cat = g.concat(&outs, 1)?;
        let cat = to_tokens(g, cat)?;
        let fused = self.fuse.forward(g, p, cat)?;
        let y = g.add(tokens, fused)?;

        let yn = self.norm2.forward(g, p, y)?;
        let hdn = self.ffn_in.forward(g, p, yn)?;
        let hdn = from_tokens(g, hdn)?;
        let hdn = self.ffn_dw.forward(g, p, hdn)?;
        let hdn = g.gelu(hdn)?;
        let hdn = to_tokens(g, hdn)?;
        let f = self.ffn_out.forward(g, p, hdn)?;
        let y = g.add(y, f)?;
        from_tokens(g, y)
    }
}
