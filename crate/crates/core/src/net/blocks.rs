use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Bound, Conv, Init, Linear};
use crate::error::Result;
use crate::tensor::{Graph, Var};

/// `x + conv(gelu(conv(x)))` with 3×3 kernels.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResBlock {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, c: usize) -> Self {
        init.scope(name, |i| ResBlock {
            conv1: Conv::new(i, "conv1", c, c, 3, 1.0),
            conv2: Conv::new(i, "conv2", c, c, 3, 0.0),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, p, x)?;
        let h = g.gelu(h)?;
        let h = self.conv2.forward(g, p, h)?;
        g.add(x, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AramConfig {
    pub pool: usize,
    pub hidden: usize,
    pub alpha_max: f64,
}

impl Default for AramConfig {
    fn default() -> Self {
        Self {
            pool: 8,
            hidden: 32,
            alpha_max: 40.0,
        }
    }
}

/// Predicts one brightness ratio per light field from its illumination map.
#[derive(Clone, Debug)]
pub struct Aram {
    pub cfg: AramConfig,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Aram {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, cfg: AramConfig) -> Self {
        init.scope(name, |i| Aram {
            cfg,
            fc1: Linear::new(i, "fc1", cfg.pool * cfg.pool, cfg.hidden, true),
            fc2: Linear::new(i, "fc2", cfg.hidden, 1, true),
        })
    }

    /// `illum` is `[uv, 1, h, w]`, `l_in` is `[uv, c, H, W]`. Returns `α` with
    /// shape `[1, 1, 1, 1]` and `α · l_in`.
    ///
    /// The map of every view is pooled to `pool × pool` and the pooled maps
    /// are averaged over views before the two linear layers;
    /// `α = 1 + (α_max − 1) · sigmoid(logit)`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, illum: Var, l_in: Var) -> Result<(Var, Var)> {
        let k = self.cfg.pool;
        let pooled = g.adaptive_avg_pool(illum, k, k)?;
        let pooled = g.mean_axis(pooled, 0)?;
        let flat = g.reshape(pooled, &[1, k * k])?;
        let h = self.fc1.forward(g, p, flat)?;
        let h = g.gelu(h)?;
        let logit = self.fc2.forward(g, p, h)?;
        let s = g.sigmoid(logit)?;
        let a = g.scale(s, self.cfg.alpha_max - 1.0)?;
        let a = g.add_scalar(a, 1.0)?;
        let alpha = g.reshape(a, &[1, 1, 1, 1])?;
        let l_adj = g.mul(l_in, alpha)?;
        Ok((alpha, l_adj))
    }
}
