//! Central-difference gradient checks over every primitive op, every loss,
//! every network block and head, and the toy model end to end.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::loss::{l1, reference_loss, smoothness_loss, ssim_loss, training_losses, LossWeights};
use crate::net::layers::{Conv, Init};
use crate::net::{AngularBlock, AngularConfig, Aram, AramConfig, Bound, LRTModel, ModelConfig, ParamStore, ResBlock, SpatialBlock, SpatialConfig};
use crate::tensor::{grad_check, DiffAxis, GradCheckOptions, GradCheckReport, Graph, Padding, PaddingMode, Tensor, Var};
use crate::train::{make_batch, step_rng, TrainConfig};
use crate::train::data::synthetic_scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Primitive,
    Loss,
    Block,
    Head,
    Model,
}

impl Tier {
    pub fn tolerance(self) -> f64 {
        match self {
            Tier::Primitive | Tier::Loss => 1e-6,
            Tier::Block | Tier::Head | Tier::Model => 1e-4,
        }
    }
}

type Check = Box<dyn Fn(&GradCheckOptions) -> Result<GradCheckReport>>;

pub struct Case {
    pub name: &'static str,
    pub tier: Tier,
    /// Central-difference step.
    pub eps: f64,
    pub coords: usize,
    check: Check,
}

impl Case {
    fn new(name: &'static str, tier: Tier, check: impl Fn(&GradCheckOptions) -> Result<GradCheckReport> + 'static) -> Self {
        Self {
            name,
            tier,
            eps: 1e-6,
            coords: 128,
            check: Box::new(check),
        }
    }

    fn eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    fn coords(mut self, n: usize) -> Self {
        self.coords = n;
        self
    }

    pub fn options(&self) -> GradCheckOptions {
        GradCheckOptions {
            eps: self.eps,
            tol: self.tier.tolerance(),
            coords: self.coords,
            ..GradCheckOptions::default()
        }
    }

    pub fn run(&self) -> Result<GradCheckReport> {
        (self.check)(&self.options())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: &'static str,
    pub tier: Tier,
    pub tol: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub pass: bool,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, &mut rng(seed))
}

/// `Σ y ⊙ r` with fixed random `r`, so every output element matters.
fn project(g: &mut Graph, y: Var) -> Result<Var> {
    let w = g.constant(randn(g.shape(y), 0xface));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn op_case(
    name: &'static str,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case::new(name, Tier::Primitive, move |o| {
        grad_check(
            |g, v| {
                let y = f(g, v)?;
                project(g, y)
            },
            &inputs,
            o,
        )
    })
}

fn loss_case(
    name: &'static str,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case::new(name, Tier::Loss, move |o| grad_check(&f, &inputs, o))
}

/// Checks a module with respect to its inputs and all of its parameters.
fn module_case<M: 'static>(
    name: &'static str,
    tier: Tier,
    build: impl FnOnce(&mut Init<'_, ChaCha8Rng>) -> Result<M>,
    inputs: Vec<Tensor>,
    forward: impl Fn(&M, &mut Graph, &Bound, &[Var]) -> Result<Var> + 'static,
) -> Result<Case> {
    let mut store = ParamStore::new();
    let mut r = rng(7);
    let module = build(&mut Init::new(&mut store, &mut r))?;
    // Zero-initialized biases and unit gains would leave some gradients at
    // exactly symmetric points; nudge every parameter.
    let n_in = inputs.len();
    let mut all = inputs;
    all.extend(store.tensors().iter().enumerate().map(|(i, t)| {
        let noise = Tensor::randn(t.shape(), 0.05, &mut rng(100 + i as u64));
        let data = t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
        Tensor::from_vec(t.shape(), data).expect("same shape")
    }));
    Ok(Case::new(name, tier, move |o| {
        grad_check(
            |g, v| {
                let p = Bound::new(v[n_in..].to_vec());
                let y = forward(&module, g, &p, &v[..n_in])?;
                project(g, y)
            },
            &all,
            o,
        )
    }))
}

fn primitive_cases() -> Vec<Case> {
    let a = || randn(&[2, 3, 4], 1);
    let pos = || uniform(&[3, 1], 0.5, 1.5, 2);
    let img = || randn(&[2, 3, 8, 8], 3);
    vec![
        op_case("add", vec![a(), pos()], |g, v| g.add(v[0], v[1])),
        op_case("sub", vec![a(), pos()], |g, v| g.sub(v[0], v[1])),
        op_case("mul", vec![a(), pos()], |g, v| g.mul(v[0], v[1])),
        op_case("div", vec![a(), pos()], |g, v| g.div(v[0], v[1])),
        op_case("scale", vec![a()], |g, v| g.scale(v[0], -2.5)),
        op_case("add_scalar", vec![a()], |g, v| g.add_scalar(v[0], 0.3)),
        op_case("tanh", vec![a()], |g, v| g.tanh(v[0])),
        op_case("sigmoid", vec![a()], |g, v| g.sigmoid(v[0])),
        op_case("gelu", vec![a()], |g, v| g.gelu(v[0])),
        op_case("exp", vec![a()], |g, v| g.exp(v[0])),
        op_case("abs", vec![uniform(&[4, 5], 0.1, 1.0, 4)], |g, v| {
            let y = g.add_scalar(v[0], -0.55)?;
            g.abs(y)
        }),
        op_case("square", vec![a()], |g, v| g.square(v[0])),
        op_case("clamp_min", vec![a()], |g, v| g.clamp_min(v[0], 0.05)),
        op_case("sum", vec![a()], |g, v| g.sum(v[0])),
        op_case("mean", vec![a()], |g, v| g.mean(v[0])),
        op_case("mean_axis", vec![a()], |g, v| g.mean_axis(v[0], 1)),
        op_case("reshape", vec![a()], |g, v| g.reshape(v[0], &[6, 4])),
        op_case("permute", vec![a()], |g, v| g.permute(v[0], &[2, 0, 1])),
        op_case("concat", vec![a(), randn(&[2, 1, 4], 5)], |g, v| g.concat(&[v[0], v[1]], 1)),
        op_case("narrow", vec![a()], |g, v| g.narrow(v[0], 2, 1, 2)),
        op_case("split", vec![a()], |g, v| {
            let parts = g.split(v[0], 1, &[1, 2])?;
            let s = g.scale(parts[0], 2.0)?;
            g.concat(&[parts[1], s], 1)
        }),
        op_case("matmul", vec![a(), randn(&[2, 4, 5], 6)], |g, v| g.matmul(v[0], v[1])),
        op_case("matmul_nt", vec![a(), randn(&[2, 5, 4], 6)], |g, v| g.matmul_nt(v[0], v[1])),
        op_case("linear", vec![a(), randn(&[4, 5], 7), randn(&[5], 8)], |g, v| g.linear(v[0], v[1], Some(v[2]))),
        op_case("layer_norm", vec![a(), randn(&[4], 9), randn(&[4], 10)], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        op_case("softmax", vec![a()], |g, v| g.softmax(v[0])),
        op_case("attention", vec![randn(&[2, 3, 4], 11), randn(&[2, 5, 4], 12), randn(&[2, 5, 3], 13)], |g, v| {
            g.attention(v[0], v[1], v[2])
        }),
        op_case("window_partition", vec![img()], |g, v| g.window_partition(v[0], 2)),
        op_case("window_merge", vec![randn(&[8, 3, 4, 4], 14)], |g, v| g.window_merge(v[0], 2)),
        op_case("adaptive_avg_pool", vec![randn(&[2, 3, 7, 9], 15)], |g, v| g.adaptive_avg_pool(v[0], 3, 4)),
        op_case("upsample2x", vec![img()], |g, v| g.upsample2x(v[0])),
        op_case("forward_diff_h", vec![img()], |g, v| g.forward_diff(v[0], DiffAxis::Horizontal)),
        op_case("forward_diff_v", vec![img()], |g, v| g.forward_diff(v[0], DiffAxis::Vertical)),
        op_case("normalize_minmax", vec![img()], |g, v| g.normalize_minmax(v[0])),
        op_case("conv2d_reflect", vec![img(), randn(&[4, 3, 3, 3], 16), randn(&[4], 17)], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 1, Padding::same(3, PaddingMode::Reflect), 1)
        }),
        op_case("conv2d_strided_zero", vec![img(), randn(&[6, 3, 3, 3], 18)], |g, v| {
            g.conv2d(v[0], v[1], None, 2, Padding::same(3, PaddingMode::Zero), 1)
        }),
        op_case("conv2d_grouped", vec![randn(&[2, 4, 6, 6], 19), randn(&[4, 2, 3, 3], 20)], |g, v| {
            g.conv2d(v[0], v[1], None, 1, Padding::same(3, PaddingMode::Reflect), 2)
        }),
    ]
    .into_iter()
    // Everything here is linear per coordinate except the smooth ops, whose
    // curvature is mild enough for the default step.
    .map(|c| if matches!(c.name, "conv2d_reflect" | "conv2d_strided_zero" | "conv2d_grouped" | "matmul" | "matmul_nt" | "linear") { c.eps(1e-4) } else { c })
    .collect()
}

fn loss_cases() -> Vec<Case> {
    let pred = || uniform(&[2, 3, 16, 16], 0.0, 1.0, 21);
    let target = uniform(&[2, 3, 16, 16], 0.0, 1.0, 22);
    let guide = uniform(&[2, 3, 16, 16], 0.0, 1.0, 23);
    let y = uniform(&[2, 1, 16, 16], 0.0, 1.0, 24);
    let t1 = target.clone();
    vec![
        loss_case("l1", vec![pred()], move |g, v| {
            let t = g.constant(t1.clone());
            l1(g, v[0], t)
        }),
        loss_case("smoothness", vec![uniform(&[2, 1, 16, 16], 0.0, 1.0, 25)], move |g, v| {
            smoothness_loss(g, v[0], &guide, 10.0)
        }),
        loss_case("reference", vec![uniform(&[2, 1, 16, 16], 0.0, 1.0, 26)], move |g, v| {
            let y = g.constant(y.clone());
            reference_loss(g, v[0], y)
        }),
        loss_case("ssim", vec![pred()], move |g, v| {
            let t = g.constant(target.clone());
            ssim_loss(g, v[0], t)
        })
        // The loss sits near 1, so a wider step keeps rounding below tolerance.
        .eps(1e-4),
    ]
}

fn block_cases() -> Result<Vec<Case>> {
    let eps = 1e-5;
    Ok(vec![
        module_case(
            "res_block",
            Tier::Block,
            |i| Ok(ResBlock::new(i, "res", 4)),
            vec![randn(&[2, 4, 6, 6], 30)],
            |m, g, p, v| m.forward(g, p, v[0]),
        )?,
        module_case(
            "angular_block",
            Tier::Block,
            |i| AngularBlock::new(i, "angular", 8, AngularConfig { m: 2, p: 2, d: 4 }, 1e-5),
            vec![randn(&[4, 8, 4, 4], 31)],
            |m, g, p, v| m.forward(g, p, v[0]),
        )?,
        module_case(
            "spatial_block",
            Tier::Block,
            |i| SpatialBlock::new(i, "spatial", 8, &SpatialConfig::default(), 1e-5),
            vec![randn(&[1, 8, 16, 16], 32)],
            |m, g, p, v| m.forward(g, p, v[0]),
        )?,
        module_case(
            "aram",
            Tier::Block,
            |i| Ok(Aram::new(i, "aram", AramConfig { pool: 4, hidden: 6, alpha_max: 40.0 })),
            vec![uniform(&[4, 1, 8, 8], 0.05, 1.0, 33), uniform(&[4, 3, 32, 32], 0.0, 0.3, 34)],
            |m, g, p, v| {
                let (alpha, adj) = m.forward(g, p, v[0], v[1])?;
                let s = project(g, adj)?;
                let a = g.reshape(alpha, &[1])?;
                g.add(s, a)
            },
        )?,
    ]
    .into_iter()
    // The key/value layer norm spans only c/4 = 2 channels here, which makes
    // it sharply curved; a larger step is dominated by truncation error.
    .map(|c| if c.name == "spatial_block" { c.eps(1e-6) } else { c.eps(eps) })
    .collect())
}

fn head_cases() -> Result<Vec<Case>> {
    let conv = |cin: usize, cout: usize| move |i: &mut Init<'_, ChaCha8Rng>| Ok(Conv::new(i, "head", cin, cout, 3, 0.1));
    Ok(vec![
        module_case(
            "denoise_head",
            Tier::Head,
            conv(4, 3),
            vec![randn(&[2, 4, 8, 8], 40), uniform(&[2, 3, 8, 8], 0.0, 0.2, 41)],
            |m, g, p, v| {
                let r = m.forward(g, p, v[0])?;
                let r = g.tanh(r)?;
                g.add(v[1], r)
            },
        )?,
        module_case(
            "illumination_head",
            Tier::Head,
            conv(4, 1),
            vec![randn(&[2, 4, 8, 8], 42), uniform(&[2, 3, 8, 8], 0.0, 0.2, 43)],
            |m, g, p, v| {
                let il = m.forward(g, p, v[0])?;
                let il = g.sigmoid(il)?;
                let il = g.clamp_min(il, 0.01)?;
                g.div(v[1], il)
            },
        )?,
        module_case(
            "refine_half_head",
            Tier::Head,
            conv(4, 3),
            vec![randn(&[2, 4, 8, 8], 44), uniform(&[2, 3, 4, 4], 0.0, 1.0, 45)],
            |m, g, p, v| {
                let r = m.forward(g, p, v[0])?;
                let r = g.tanh(r)?;
                let up = g.upsample2x(v[1])?;
                g.add(up, r)
            },
        )?,
        module_case(
            "refine_full_head",
            Tier::Head,
            conv(2, 3),
            vec![randn(&[2, 2, 16, 16], 46), uniform(&[2, 3, 8, 8], 0.0, 1.0, 47)],
            |m, g, p, v| {
                let r = m.forward(g, p, v[0])?;
                let r = g.tanh(r)?;
                let up = g.upsample2x(v[1])?;
                g.add(up, r)
            },
        )?,
        module_case(
            "highfreq_head",
            Tier::Head,
            conv(5, 3),
            vec![uniform(&[2, 3, 8, 8], 0.0, 1.0, 48), randn(&[2, 2, 8, 8], 49)],
            |m, g, p, v| {
                let x = g.concat(&[v[0], v[1]], 1)?;
                let h = m.forward(g, p, x)?;
                g.tanh(h)
            },
        )?,
    ]
    .into_iter()
    .map(|c| c.eps(1e-5))
    .collect())
}

/// The toy model's full training loss with respect to all of its parameters.
fn model_case() -> Result<Case> {
    let mut cfg = TrainConfig::toy();
    cfg.views = Some(2);
    cfg.model = ModelConfig::toy();
    let model = LRTModel::new(cfg.model.clone())?;
    let gt = synthetic_scene(11, (2, 2), (64, 64))?;
    let batch = make_batch(&gt, &cfg, &mut step_rng(11, 0))?;
    // Heads start at zero, which would hide the trunk; perturb everything.
    let params: Vec<Tensor> = model
        .params
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let noise = Tensor::randn(t.shape(), 0.02, &mut rng(500 + i as u64));
            let data = t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
            Tensor::from_vec(t.shape(), data).expect("same shape")
        })
        .collect();
    let weights = LossWeights::default();
    Ok(Case::new("toy_model", Tier::Model, move |o| {
        grad_check(
            |g, v| {
                let p = Bound::new(v.to_vec());
                let out = model.forward_graph(g, &p, &batch.l_in)?;
                Ok(training_losses(g, &out, &batch.targets, &weights)?.total)
            },
            &params,
            o,
        )
    })
    .eps(1e-5)
    .coords(48))
}

/// Every case of the suite, cheapest first.
pub fn cases() -> Result<Vec<Case>> {
    let mut all = primitive_cases();
    all.extend(loss_cases());
    all.extend(block_cases()?);
    all.extend(head_cases()?);
    all.push(model_case()?);
    Ok(all)
}

/// Runs the cases whose name or tier passes `select`.
pub fn run(select: impl Fn(&Case) -> bool) -> Result<Vec<CaseResult>> {
    cases()?
        .iter()
        .filter(|c| select(c))
        .map(|c| {
            let r = c.run()?;
            Ok(CaseResult {
                name: c.name,
                tier: c.tier,
                tol: c.tier.tolerance(),
                max_rel_error: r.max_rel_error,
                checked: r.checked,
                pass: r.pass,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_and_losses_pass() {
        for r in run(|c| matches!(c.tier, Tier::Primitive | Tier::Loss)).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn blocks_and_heads_pass() {
        for r in run(|c| matches!(c.tier, Tier::Block | Tier::Head)).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }
}
