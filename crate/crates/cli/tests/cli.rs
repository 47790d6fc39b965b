use std::path::Path;
use std::process::{Command, Output};

use lfrt_core::lightfield::io::{write_light_field, ViewFormat};
use lfrt_core::train::data::synthetic_scene;

fn lfrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfrt")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_scene(dir: &Path, seed: u64) {
    let lf = synthetic_scene(seed, (2, 2), (64, 64)).unwrap();
    write_light_field(&lf, dir, ViewFormat::Pfm).unwrap();
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn complexity_prints_exact_counts() {
    let o = lfrt(&["complexity", "--spatial", "c=8,h=16,w=16", "--angular", "u=3,v=3,c=8,h=16,w=16,m=2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("93696 MACs"), "{text}");
    assert!(text.contains("319176 MACs"), "{text}");

    let o = lfrt(&["complexity", "--spatial", "c=32,h=64,w=64", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["total"], "43646976");
    assert_eq!(v[0]["baseline"], "1090519040");
}

#[test]
fn bad_input_exits_one() {
    assert_eq!(lfrt(&["complexity", "--spatial", "c=8,h=16"]).status.code(), Some(1));
    assert_eq!(lfrt(&["complexity", "--spatial", "c=8,h=x,w=16"]).status.code(), Some(1));
    assert_eq!(lfrt(&["synthesize", "--gt", "/nonexistent", "--out", "/tmp/x"]).status.code(), Some(1));
    assert_eq!(lfrt(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(lfrt(&["--help"]).status.code(), Some(0));
}

#[test]
fn gradcheck_filters_and_passes() {
    let o = lfrt(&["gradcheck", "--tier", "loss"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 4, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn synthesize_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt");
    write_scene(&gt, 3);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (out, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let o = lfrt(&["synthesize", "--gt", p(&gt), "--seed", seed, "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn train_restore_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    write_scene(&scene, 1);
    let run = tmp.path().join("run");
    let o = lfrt(&[
        "train", "--preset", "toy", "--scene", p(&scene), "--set", "epochs=1", "--set", "views=2", "--out", p(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = run.join("ckpt_1.lrt");
    assert!(ckpt.exists());
    assert_eq!(std::fs::read_to_string(run.join("train_log.jsonl")).unwrap().lines().count(), 1);

    let pair = tmp.path().join("pair");
    assert!(lfrt(&["synthesize", "--gt", p(&scene), "--out", p(&pair)]).status.success());
    let restored = tmp.path().join("restored");
    let dumps = tmp.path().join("dumps");
    let o = lfrt(&[
        "restore", "--input", p(&pair.join("low")), "--ckpt", p(&ckpt), "--out", p(&restored),
        "--dump-intermediates", p(&dumps),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(restored.join("meta.json").exists());
    for f in ["illum.pfm", "hf.pfm", "epi.pfm", "alpha.txt"] {
        assert!(dumps.join(f).exists(), "{f}");
    }
    let alpha: f64 = std::fs::read_to_string(dumps.join("alpha.txt")).unwrap().trim().parse().unwrap();
    assert!((1.0..=40.0).contains(&alpha));

    let list = tmp.path().join("list.json");
    std::fs::write(&list, r#"[{"name": "paired", "pair": "pair"}, {"name": "fresh", "gt": "scene"}]"#).unwrap();
    let report = tmp.path().join("report.json");
    let o = lfrt(&["eval", "--pairs", p(&list), "--ckpt", p(&ckpt), "--out", p(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["scenes"].as_array().unwrap().len(), 2);
    let psnr = v["psnr_mean"].as_f64().unwrap();
    assert!(psnr.is_finite() && psnr > 0.0);
}

#[test]
fn override_of_unknown_key_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lfrt(&["train", "--preset", "toy", "--synthetic", "1", "--set", "epoch=1", "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown config key"));
}
