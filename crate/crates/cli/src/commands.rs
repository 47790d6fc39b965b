use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use lfrt_core::gradsuite::{self, Tier};
use lfrt_core::lightfield::io::{read_json, read_light_field, write_atomic, write_json, write_light_field, write_pfm, ViewFormat};
use lfrt_core::net::checkpoint;
use lfrt_core::net::complexity::{angular_complexity, spatial_complexity, ComplexityReport};
use lfrt_core::noise::calibrate::{calibrate_iso, fit_iso_log_model, synthesis_config_from, CalibrationSet};
use lfrt_core::noise::pair::{load_pair, save_pair};
use lfrt_core::noise::{synthesize_dark, LogLinearModel, SynthesisConfig};
use lfrt_core::train::data::synthetic_scenes;
use lfrt_core::train::{evaluate, run_training_with, step_rng, EvalPair, TrainConfig};
use lfrt_core::{lrt_forward, EpiAxis, LightField, Tensor};

use crate::overrides::{apply, parse_dims, pick};
use crate::{CalibrateArgs, ComplexityArgs, EvalArgs, GradcheckArgs, GradientMismatch, RestoreArgs, SynthesizeArgs, TrainArgs};

fn load_config<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(read_json(p)?),
        None => Ok(T::default()),
    }
}

#[derive(Serialize)]
struct LogModels {
    read: LogLinearModel,
    row: LogLinearModel,
}

pub fn calibrate(a: CalibrateArgs, verbose: u8) -> Result<()> {
    let load = |paths: &[PathBuf]| -> Result<BTreeMap<u32, CalibrationSet>> {
        let mut by_iso = BTreeMap::new();
        for p in paths {
            let set = CalibrationSet::from_manifest(p)?;
            if by_iso.insert(set.iso, set).is_some() {
                bail!("{}: a second manifest for the same ISO", p.display());
            }
        }
        Ok(by_iso)
    };
    let gray = load(&a.gray)?;
    let dark = load(&a.dark)?;
    let mut params = Vec::with_capacity(gray.len());
    let mut white = None;
    for (iso, g) in &gray {
        let d = dark.get(iso).ok_or_else(|| anyhow!("no dark-frame manifest for ISO {iso}"))?;
        let p = calibrate_iso(g, d, a.q).with_context(|| format!("calibrating ISO {iso}"))?;
        if verbose > 0 {
            eprintln!(
                "ISO {iso}: k = {:.5} DN/e, read = {:.4} DN, row = {:.4} DN, dark = {:.4} e",
                p.k, p.sigma_read, p.sigma_row, p.dark_rate
            );
        }
        white.get_or_insert(g.white_level());
        params.push(p);
    }
    if let Some(iso) = dark.keys().find(|i| !gray.contains_key(i)) {
        bail!("no gray-chart manifest for ISO {iso}");
    }
    let fitted = if params.len() >= 2 {
        let read = fit_iso_log_model(&params.iter().map(|p| (p.k, p.sigma_read)).collect::<Vec<_>>())?;
        let row = fit_iso_log_model(&params.iter().map(|p| (p.k, p.sigma_row)).collect::<Vec<_>>())?;
        let synth = synthesis_config_from(&params, white.unwrap_or(1023.0), a.seed)?;
        Some((LogModels { read, row }, synth))
    } else {
        eprintln!("note: one ISO only, so no log-linear model or synthesis config is written");
        None
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("noise_params.json"), &params)?;
    if let Some((models, synth)) = fitted {
        write_json(&a.out.join("log_model.json"), &models)?;
        write_json(&a.out.join("synthesis.json"), &synth)?;
    }
    println!("calibrated {} ISO setting(s) into {}", params.len(), a.out.display());
    Ok(())
}

pub fn synthesize(a: SynthesizeArgs, verbose: u8) -> Result<()> {
    let gt = read_light_field(&a.gt)?;
    let mut cfg: SynthesisConfig = apply(load_config(a.config.as_deref())?, &a.set)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let sample = synthesize_dark(&gt, &cfg, &mut step_rng(cfg.seed, 0))?;
    if verbose > 0 {
        eprintln!("beta = {:.4}, k = {:.3e}", sample.beta, sample.params.k);
    }
    save_pair(&a.out, &sample, &gt, cfg.seed, a.format.into())?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs, verbose: u8) -> Result<()> {
    let base = match (&a.config, &a.preset) {
        (Some(_), Some(_)) => bail!("--config and --preset are exclusive"),
        (Some(p), None) => read_json(p)?,
        (None, Some(name)) if name == "toy" => TrainConfig::toy(),
        (None, _) => TrainConfig::default(),
    };
    let mut cfg: TrainConfig = apply(base, &a.set)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let mut scenes = a
        .scenes
        .iter()
        .map(|p| Ok(read_light_field(p)?))
        .collect::<Result<Vec<LightField>>>()?;
    if a.synthetic > 0 {
        let v = a.scene_views;
        scenes.extend(synthetic_scenes(a.synthetic, cfg.seed, (v, v), (a.scene_size, a.scene_size))?);
    }
    if scenes.is_empty() {
        bail!("no training scenes: pass --scene DIR or --synthetic N");
    }
    let outcome = run_training_with(&cfg, &scenes, Some(&a.out), |e| {
        if verbose > 0 {
            eprintln!("epoch {:4}  lr {:.3e}  loss {:.5}", e.epoch, e.lr, e.loss.total);
        }
    })?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "trained {} epoch(s) on {} scene(s); final loss {:.5}; outputs in {}",
        last.epoch,
        scenes.len(),
        last.loss.total,
        a.out.display()
    );
    Ok(())
}

/// `[uv, c, h, w]` views tiled into `(c, u·h, v·w)`.
fn mosaic(t: &Tensor, angular: (usize, usize)) -> Array3<f64> {
    let s = t.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let (u, v) = angular;
    let d = t.data();
    Array3::from_shape_fn((c, u * h, v * w), |(ch, y, x)| {
        let (a, b) = (y / h, x / w);
        d[(((a * v + b) * c + ch) * h + y % h) * w + x % w]
    })
}

pub fn restore(a: RestoreArgs, verbose: u8) -> Result<()> {
    let low = read_light_field(&a.input)?;
    let (model, epoch) = checkpoint::load(&a.ckpt)?;
    if verbose > 0 {
        eprintln!("checkpoint epoch {epoch:?}, {} parameters", model.count_parameters());
    }
    let out = lrt_forward(&low, &model)?;
    let restored = LightField::ingest(out.light_field(&out.l_out)?.into_views(), low.color(), 1.0)?;
    let dumps = match &a.dump_intermediates {
        Some(_) => {
            let (u, _) = out.angular;
            let (h, _) = restored.spatial_dims();
            let epi = restored.extract_epi(EpiAxis::Horizontal, u / 2, h / 2)?;
            Some((mosaic(&out.illum_q, out.angular), mosaic(&out.h_map, out.angular), epi.values, out.alpha))
        }
        None => None,
    };
    write_light_field(&restored, &a.out, a.format.into())?;
    if let (Some(dir), Some((illum, hf, epi, alpha))) = (&a.dump_intermediates, dumps) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_pfm(&dir.join("illum.pfm"), &illum)?;
        write_pfm(&dir.join("hf.pfm"), &hf)?;
        write_pfm(&dir.join("epi.pfm"), &epi)?;
        write_atomic(&dir.join("alpha.txt"), format!("{alpha}\n").as_bytes())?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PairEntry {
    Dir { name: String, pair: PathBuf },
    Split { name: String, gt: PathBuf, low: Option<PathBuf> },
}

pub fn eval(a: EvalArgs, verbose: u8) -> Result<()> {
    let entries: Vec<PairEntry> = read_json(&a.pairs)?;
    if entries.is_empty() {
        bail!("{}: no pairs listed", a.pairs.display());
    }
    let base = a.pairs.parent().unwrap_or(Path::new("."));
    let synth: SynthesisConfig = load_config(a.config.as_deref())?;
    let pairs = entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| match e {
            PairEntry::Dir { name, pair } => {
                let (low, gt, _) = load_pair(&base.join(pair))?;
                Ok(EvalPair::new(name, low, gt)?)
            }
            PairEntry::Split { name, gt, low } => {
                let gt = read_light_field(&base.join(gt))?;
                let low = match low {
                    Some(p) => read_light_field(&base.join(p))?,
                    None => synthesize_dark(&gt, &synth, &mut step_rng(a.seed, i as u64))?.l_in,
                };
                Ok(EvalPair::new(name, low, gt)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (model, _) = checkpoint::load(&a.ckpt)?;
    let ev = evaluate(&model, &pairs)?;
    if verbose > 0 {
        for s in &ev.report.scenes {
            eprintln!("{}: PSNR {:.3} dB, SSIM {:.4}", s.name, s.psnr.mean, s.ssim.mean);
        }
    }
    if let Some(dir) = &a.restored {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (p, lf) in pairs.iter().zip(&ev.restored) {
            write_light_field(lf, &dir.join(&p.name), ViewFormat::Pfm)?;
        }
    }
    write_json(&a.out, &ev.report)?;
    println!(
        "{} pair(s): PSNR {:.3} dB, SSIM {:.4}; report in {}",
        pairs.len(),
        ev.report.psnr_mean,
        ev.report.ssim_mean,
        a.out.display()
    );
    Ok(())
}

pub fn complexity(a: ComplexityArgs) -> Result<()> {
    let mut reports = Vec::new();
    if let Some(spec) = &a.spatial {
        let d = pick(&parse_dims(spec)?, &["c", "h", "w"], &[])?;
        let s = spatial_complexity(d[0], d[1], d[2]);
        reports.push((format!("spatial c={} h={} w={}", d[0], d[1], d[2]), ComplexityReport::new("spatial", s.total(), s.baseline)));
    }
    if let Some(spec) = &a.angular {
        let d = pick(&parse_dims(spec)?, &["u", "v", "c", "h", "w", "p", "m"], &[("p", 4), ("m", 4)])?;
        if d[6] == 0 {
            bail!("m must be positive");
        }
        let r = angular_complexity(d[0], d[1], d[2], d[3], d[4], d[5], d[6]);
        reports.push((
            format!("angular u={} v={} c={} h={} w={} p={} m={}", d[0], d[1], d[2], d[3], d[4], d[5], d[6]),
            ComplexityReport::new("angular", r.total(), r.baseline),
        ));
    }
    if reports.is_empty() {
        bail!("pass --spatial and/or --angular");
    }
    if a.json {
        let list: Vec<&ComplexityReport> = reports.iter().map(|(_, r)| r).collect();
        println!("{}", serde_json::to_string_pretty(&list)?);
    } else {
        for (label, r) in &reports {
            println!("{label}: {} MACs (baseline {} MACs, ratio {:.4})", r.total, r.baseline, r.ratio);
        }
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let tier_name = |t: Tier| match t {
        Tier::Primitive => "primitive",
        Tier::Loss => "loss",
        Tier::Block => "block",
        Tier::Head => "head",
        Tier::Model => "model",
    };
    let results = gradsuite::run(|c| {
        (a.tier.is_empty() || a.tier.iter().any(|t| t == tier_name(c.tier)))
            && a.name.as_deref().is_none_or(|n| c.name.contains(n))
    })?;
    if results.is_empty() {
        bail!("no gradient case matches the selection");
    }
    let mut failed = 0;
    for r in &results {
        println!(
            "{} {:<22} {:<9} max rel err {:.3e} (tol {:.0e}, {} coords)",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            tier_name(r.tier),
            r.max_rel_error,
            r.tol,
            r.checked
        );
        failed += usize::from(!r.pass);
    }
    if failed > 0 {
        return Err(GradientMismatch(failed).into());
    }
    Ok(())
}
