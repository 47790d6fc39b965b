use crate::error::{Error, Result};
use crate::lightfield::LightField;
use crate::loss::metrics::{MetricsReport, SceneMetrics};
use crate::net::{lrt_forward, LRTModel};
use crate::noise::{synthesize_dark, SynthesisConfig};

use super::step_rng;

/// A low-light input and its reference.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub name: String,
    pub low: LightField,
    pub gt: LightField,
}

impl EvalPair {
    pub fn new(name: impl Into<String>, low: LightField, gt: LightField) -> Result<Self> {
        let name = name.into();
        if low.views().dim() != gt.views().dim() {
            return Err(Error::Shape(format!(
                "pair {name}: low-light {:?} vs reference {:?}",
                low.views().dim(),
                gt.views().dim()
            )));
        }
        Ok(Self { name, low, gt })
    }
}

/// Dark versions of each reference; scene `i` draws from stream `i` of `seed`.
pub fn synthesize_pairs(gts: &[(String, LightField)], cfg: &SynthesisConfig, seed: u64) -> Result<Vec<EvalPair>> {
    gts.iter()
        .enumerate()
        .map(|(i, (name, gt))| {
            let dark = synthesize_dark(gt, cfg, &mut step_rng(seed, i as u64))?;
            EvalPair::new(name.clone(), dark.l_in, gt.clone())
        })
        .collect()
}

/// The network's final output clamped to `[0, 1]`.
pub fn restore(model: &LRTModel, low: &LightField) -> Result<LightField> {
    let out = lrt_forward(low, model)?;
    let views = out.light_field(&out.l_out)?.into_views();
    LightField::ingest(views, low.color(), 1.0)
}

pub struct Evaluation {
    pub report: MetricsReport,
    pub restored: Vec<LightField>,
}

/// Scores `restore_fn(low)` against the reference of every pair.
pub fn evaluate_with(pairs: &[EvalPair], mut restore_fn: impl FnMut(&LightField) -> Result<LightField>) -> Result<Evaluation> {
    let mut scenes = Vec::with_capacity(pairs.len());
    let mut restored = Vec::with_capacity(pairs.len());
    for p in pairs {
        let out = restore_fn(&p.low)?;
        scenes.push(SceneMetrics::compute(p.name.clone(), &out, &p.gt)?);
        restored.push(out);
    }
    Ok(Evaluation {
        report: MetricsReport::new(scenes),
        restored,
    })
}

pub fn evaluate(model: &LRTModel, pairs: &[EvalPair]) -> Result<Evaluation> {
    evaluate_with(pairs, |low| restore(model, low))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::data::synthetic_scene;

    #[test]
    fn identity_on_clean_pairs_hits_the_cap() {
        let gt = synthetic_scene(0, (2, 2), (16, 16)).unwrap();
        let pairs = vec![EvalPair::new("a", gt.clone(), gt).unwrap()];
        let ev = evaluate_with(&pairs, |l| Ok(l.clone())).unwrap();
        assert_eq!(ev.report.psnr_mean, 100.0);
        assert!((ev.report.ssim_mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn aggregate_is_mean_of_views() {
        let gt = synthetic_scene(1, (2, 2), (16, 16)).unwrap();
        let cfg = SynthesisConfig::default();
        let pairs = synthesize_pairs(&[("s".into(), gt)], &cfg, 3).unwrap();
        let ev = evaluate_with(&pairs, |l| Ok(l.clone())).unwrap();
        let s = &ev.report.scenes[0];
        let mean = s.psnr.per_view.iter().sum::<f64>() / s.psnr.per_view.len() as f64;
        assert_eq!(s.psnr.mean, mean);
        assert_eq!(ev.report.psnr_mean, s.psnr.mean);
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let a = synthetic_scene(0, (2, 2), (16, 16)).unwrap();
        let b = synthetic_scene(0, (3, 3), (16, 16)).unwrap();
        assert!(EvalPair::new("x", a, b).is_err());
    }
}
