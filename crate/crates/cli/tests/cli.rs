use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spixel_core::data::load_superpixels;
use spixel_core::net::{save_checkpoint, EsmNet, NetConfig};
use spixel_core::spix::{init_grid, SuperpixelMap};

fn spixel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spixel")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

/// Writes a small synthetic corpus and returns its manifest path.
fn corpus(dir: &Path, count: usize) -> PathBuf {
    let out = dir.join("corpus");
    assert_ok(&spixel(&["synth", "--count", &count.to_string(), "--out", p(&out)]));
    out.join("manifest.csv")
}

#[test]
fn csf_table_rows() {
    let o = spixel(&["csf", "--max-f", "60", "--step", "0.5"]);
    assert_ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "f,sensitivity");
    assert_eq!(lines.len() - 1, 121);
    let (f, h) = lines[1].split_once(',').unwrap();
    assert_eq!(f.parse::<f64>().unwrap(), 0.0);
    assert!((h.parse::<f64>().unwrap() - 0.4992).abs() < 1e-9);
    let (f, _) = lines[121].split_once(',').unwrap();
    assert_eq!(f.parse::<f64>().unwrap(), 60.0);
}

#[test]
fn csf_file_output_has_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.csv");
    assert_ok(&spixel(&["csf", "--out", p(&out)]));
    assert!(out.is_file());
    assert!(dir.path().join("table.config.json").is_file());
    assert!(dir.path().join("table.invocation.json").is_file());
}

#[test]
fn unknown_flag_is_usage_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = spixel(&["infer", "--bogus", "--out", p(&out), "x.png"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("status=error class=usage"), "{err}");
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn exit_codes_by_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let o = spixel(&["csf", "--set", "loss.nope=1"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = spixel(&["csf", "--step", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let missing = dir.path().join("missing.png");
    let o = spixel(&["infer", "--method", "slic", "--out", p(&dir.path().join("o")), p(&missing)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("class=data"));
    assert!(!dir.path().join("o").exists());
    let o = spixel(&["infer", "--out", p(&dir.path().join("o")), p(&missing)]);
    assert_eq!(o.status.code(), Some(1), "net decoding without a checkpoint: {}", stderr(&o));
}

#[test]
fn zero_weight_checkpoint_decodes_to_grid_tiling() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 1);
    let mut net = EsmNet::<f32>::init_weights(&NetConfig::default(), 0).unwrap();
    net.zero_weights();
    let ckpt = dir.path().join("zero.ckpt");
    save_checkpoint(&ckpt, &net, 0).unwrap();
    let image = dir.path().join("corpus/images/scene_000.png");
    let out = dir.path().join("infer");
    let o = spixel(&["infer", "--checkpoint", p(&ckpt), "--spix-count", "16", "--out", p(&out), p(&image)]);
    assert_ok(&o);
    let got = load_superpixels(&out.join("scene_000.png")).unwrap();
    let grid = init_grid(64, 64, 16).unwrap();
    let want = SuperpixelMap::from_labels(64, 64, &grid.tiling()).unwrap();
    assert_eq!(got, want);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("scene_000.json")).unwrap()).unwrap();
    assert_eq!(side["count"], 16);
    assert_eq!(side["s"], 16);
    assert!(out.join("config.json").is_file());
}

#[test]
fn reruns_from_snapshot_are_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let sets = ["--set", "train.iterations=6", "--set", "loss.crop=32", "--set", "loss.batch=2", "--set", "loss.s=8"];
    let mut args = vec!["train", "--manifest", p(&manifest), "--out", p(&a)];
    args.extend(sets);
    assert_ok(&spixel(&args));
    let snap = a.join("config.json");
    assert_ok(&spixel(&["train", "--config", p(&snap), "--manifest", p(&manifest), "--out", p(&b)]));
    for f in ["loss.csv", "final.ckpt", "config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("loss.csv")).unwrap().lines().count(), 7);

    let image = dir.path().join("corpus/images/scene_001.png");
    let labels = dir.path().join("corpus/labels/scene_001.png");
    for run in ["1", "2"] {
        let ckpt = a.join("final.ckpt");
        let r = dir.path().join(format!("run{run}"));
        assert_ok(&spixel(&["infer", "--checkpoint", p(&ckpt), "--out", p(&r.join("infer")), p(&image)]));
        let sp = r.join("infer/scene_001.png");
        assert_ok(&spixel(&["viz", "--image", p(&image), "--superpixels", p(&sp), "--out", p(&r.join("viz.png"))]));
        assert_ok(&spixel(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--out", p(&r.join("eval"))]));
        assert_ok(&spixel(&["eval", "--method", "slic", "--spix-count", "20", "--manifest", p(&manifest), "--out", p(&r.join("slic"))]));
        assert_ok(&spixel(&["bal", "encode", "--labels", p(&labels), "--out", p(&r.join("bal"))]));
    }
    for f in [
        "infer/scene_001.png",
        "infer/scene_001.json",
        "viz.png",
        "eval/metrics.csv",
        "eval/summary.json",
        "eval/reports/0000_scene_000.json",
        "slic/metrics.csv",
        "bal/target.f32",
        "bal/entropy.png",
    ] {
        let one = fs::read(dir.path().join("run1").join(f)).unwrap();
        let two = fs::read(dir.path().join("run2").join(f)).unwrap();
        assert_eq!(one, two, "{f}");
    }
    let metrics = fs::read_to_string(dir.path().join("run1/eval/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "image,superpixel_count,asa,br,bp,co");
    assert_eq!(metrics.lines().count(), 4);
}

#[test]
fn bal_encode_writes_dense_tensor() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 1);
    let labels = dir.path().join("corpus/labels/scene_000.png");
    let out = dir.path().join("bal");
    assert_ok(&spixel(&["bal", "encode", "--labels", p(&labels), "--out", p(&out), "--set", "bal.categories=8"]));
    let header: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("target.json")).unwrap()).unwrap();
    let shape: Vec<usize> = header["shape"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    assert_eq!(shape, vec![71, 64, 64]);
    let bytes = fs::read(out.join("target.f32")).unwrap();
    assert_eq!(bytes.len(), 71 * 64 * 64 * 4);
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let plane = 64 * 64;
    for px in [0, 1000, plane - 1] {
        let s: f32 = (0..71).map(|k| values[k * plane + px]).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
    assert!(out.join("entropy.png").is_file());
}

#[test]
fn synth_manifest_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    assert_ok(&spixel(&["synth", "--count", "5", "--val-fraction", "0.4", "--out", p(&out)]));
    let text = fs::read_to_string(out.join("manifest.csv")).unwrap();
    let splits: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(splits, vec!["train", "train", "train", "val", "val"]);
}
