//! Training loop: random crops, on-the-fly dark synthesis, Adam with a
//! step-decay schedule, JSON-lines logging and periodic checkpoints.

pub mod data;
mod eval;

pub use eval::{evaluate, evaluate_with, restore, synthesize_pairs, EvalPair, Evaluation};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::io::{write_atomic, write_json};
use crate::lightfield::LightField;
use crate::loss::{training_losses, LossBreakdown, LossWeights, Targets};
use crate::net::model::SPATIAL_MULTIPLE;
use crate::net::{checkpoint, LRTModel, ModelConfig, ParamStore};
use crate::noise::{synthesize_dark, SynthesisConfig};
use crate::tensor::{Graph, Tensor};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "train_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u64,
    pub lr_init: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: u64,
    pub crop: usize,
    /// Train on the central `a × a` views only.
    pub views: Option<usize>,
    pub model: ModelConfig,
    pub synthesis: SynthesisConfig,
    pub weights: LossWeights,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub seed: u64,
    /// Epochs between checkpoints; the last epoch is always saved.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr_init: 5e-4,
            lr_decay: 0.8,
            decay_every: 50,
            crop: 256,
            views: None,
            model: ModelConfig::default(),
            synthesis: SynthesisConfig::default(),
            weights: LossWeights::default(),
            clip_norm: 1.0,
            seed: 0,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    /// 3×3 views, 64×64 crops and toy widths.
    pub fn toy() -> Self {
        Self {
            crop: 64,
            views: Some(3),
            model: ModelConfig::toy(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.crop == 0 || self.crop % SPATIAL_MULTIPLE != 0 {
            return bad(format!("crop must be a positive multiple of {SPATIAL_MULTIPLE}, got {}", self.crop));
        }
        if !(self.lr_init.is_finite() && self.lr_init >= 0.0) {
            return bad(format!("lr_init must be finite and >= 0, got {}", self.lr_init));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.decay_every == 0 {
            return bad(format!("invalid decay {} every {} epochs", self.lr_decay, self.decay_every));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.views == Some(0) {
            return bad("views must be >= 1".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be >= 1".into());
        }
        self.synthesis.validate()?;
        self.weights.validate()
    }

    /// Learning rate of a 1-based epoch.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        let decays = epoch.saturating_sub(1) / self.decay_every;
        self.lr_init * self.lr_decay.powi(decays as i32)
    }
}

/// Adam moments for every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                if lr != 0.0 {
                    pd[i] -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Independent stream of step `step`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// One synthesized training pair with its supervision.
#[derive(Clone, Debug)]
pub struct Batch {
    pub l_in: Tensor,
    pub targets: Targets,
}

/// Random crop (and central view crop) of `gt`, darkened and noised.
pub fn make_batch<R: Rng + ?Sized>(gt: &LightField, cfg: &TrainConfig, rng: &mut R) -> Result<Batch> {
    let gt = match cfg.views {
        Some(a) => gt.central_crop_views(a)?,
        None => gt.clone(),
    };
    let (h, w) = gt.spatial_dims();
    if h < cfg.crop || w < cfg.crop {
        return Err(Error::Dimension(format!("crop {} does not fit {h}x{w} views", cfg.crop)));
    }
    let y = rng.random_range(0..=h - cfg.crop);
    let x = rng.random_range(0..=w - cfg.crop);
    let gt = gt.crop_spatial(y, x, cfg.crop, cfg.crop)?;
    let dark = synthesize_dark(&gt, &cfg.synthesis, rng)?;
    Ok(Batch {
        l_in: dark.l_in.to_tensor(),
        targets: Targets::new(&gt, &dark.l_low)?,
    })
}

/// Loss of `model` on a batch, without gradients.
pub fn batch_loss(model: &LRTModel, batch: &Batch, weights: &LossWeights) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let out = model.forward_graph(&mut g, &p, &batch.l_in)?;
    Ok(training_losses(&mut g, &out, &batch.targets, weights)?.breakdown(&g))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub loss: LossBreakdown,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Forward, backward, clip and one Adam update on a prepared batch.
pub fn step_on_batch(
    model: &mut LRTModel,
    opt: &mut Adam,
    batch: &Batch,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepReport> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let out = model.forward_graph(&mut g, &p, &batch.l_in)?;
    let losses = training_losses(&mut g, &out, &batch.targets, &cfg.weights)?;
    let loss = losses.breakdown(&g);
    if !loss.total.is_finite() {
        return Err(Error::NumericFault(format!("non-finite training loss {}", loss.total)));
    }
    let mut grads_all = g.backward(losses.total)?;
    let mut grads = p
        .vars()
        .iter()
        .map(|&v| grads_all.take(v).ok_or_else(|| Error::NumericFault("missing parameter gradient".into())))
        .collect::<Result<Vec<_>>>()?;
    if !grads.iter().all(Tensor::all_finite) {
        return Err(Error::NumericFault("non-finite gradient".into()));
    }
    let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm);
    opt.update(&mut model.params, &grads, lr)?;
    Ok(StepReport { loss, grad_norm })
}

/// Synthesizes a batch from `gt` and takes one step on it.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut LRTModel,
    opt: &mut Adam,
    gt: &LightField,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut R,
) -> Result<StepReport> {
    let batch = make_batch(gt, cfg, rng)?;
    step_on_batch(model, opt, &batch, cfg, lr)
}

/// Mean losses of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub lr: f64,
    pub steps: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        de: avg(|b| b.de),
        sm: avg(|b| b.sm),
        ref_: avg(|b| b.ref_),
        hf: avg(|b| b.hf),
        rec: avg(|b| b.rec),
        ssim: avg(|b| b.ssim),
        total: avg(|b| b.total),
    }
}

pub struct TrainOutcome {
    pub model: LRTModel,
    pub log: Vec<EpochLog>,
}

pub fn checkpoint_name(epoch: u64) -> String {
    format!("ckpt_{epoch}.lrt")
}

/// Trains from scratch; see [`run_training_with`].
pub fn run_training(cfg: &TrainConfig, scenes: &[LightField], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    run_training_with(cfg, scenes, out_dir, |_| {})
}

/// Trains for `cfg.epochs` passes over `scenes`. Step `i` (0-based, counted
/// across epochs) draws its crop and noise from [`step_rng`]`(cfg.seed, i)`.
///
/// With `out_dir`, the config, the log and checkpoints are written there.
pub fn run_training_with(
    cfg: &TrainConfig,
    scenes: &[LightField],
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one scene".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(CONFIG_FILE), cfg)?;
    }
    let mut model = LRTModel::new(cfg.model.clone())?;
    let mut opt = Adam::new(&model.params);
    let mut log = Vec::with_capacity(cfg.epochs as usize);
    let mut lines = String::new();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut parts = Vec::with_capacity(scenes.len());
        for gt in scenes {
            let mut rng = step_rng(cfg.seed, step);
            parts.push(train_step(&mut model, &mut opt, gt, cfg, lr, &mut rng)?.loss);
            step += 1;
        }
        let entry = EpochLog {
            epoch,
            lr,
            steps: parts.len() as u64,
            loss: mean_breakdown(&parts),
        };
        on_epoch(&entry);
        if let Some(dir) = out_dir {
            lines.push_str(&serde_json::to_string(&entry).map_err(|e| Error::json(LOG_FILE, e))?);
            lines.push('\n');
            write_atomic(&dir.join(LOG_FILE), lines.as_bytes())?;
            if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
                checkpoint::save(&model, &dir.join(checkpoint_name(epoch)), Some(epoch))?;
            }
        }
        log.push(entry);
    }
    Ok(TrainOutcome { model, log })
}
