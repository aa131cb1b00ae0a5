use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use penh::data::{read_image, write_image, Image};
use penh::enhance::{build_can, CanConfig};
use penh::quality::{build_tiny_nima, NimaConfig};
use penh::train::{Checkpoint, Dtype};
use penh::Tensor;

fn penh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_penh")).args(args).env_remove("PENH_OUT_DIR").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = penh(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_small(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["gen-data", "--seed", "3", "--count", "10", "--size", "24x24", "--can-depth", "3", "--out", s(&data)]);
    data
}

fn save_nima(dir: &Path, uniform_head: bool) -> PathBuf {
    let mut model = build_tiny_nima(NimaConfig::default(), 1).unwrap();
    if uniform_head {
        for (name, t) in model.params.iter_mut() {
            if name.starts_with("nima.head.") {
                t.data_mut().fill(0.0);
            }
        }
    }
    let path = dir.join("nima.ckpt");
    Checkpoint::from_nima(&model, Dtype::F64).save(&path).unwrap();
    path
}

fn save_can(dir: &Path, name: &str, depth: usize) -> PathBuf {
    let model = build_can(CanConfig::with_depth(depth, 8), 2).unwrap();
    let path = dir.join(name);
    Checkpoint::from_can(&model, Dtype::F32).save(&path).unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["rated", "pairs"] {
        for e in fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
        }
    }
    out.push(("manifest.csv".into(), fs::read(dir.join("manifest.csv")).unwrap()));
    out.sort();
    out
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = gen_small(a.path());
    let db = gen_small(b.path());
    let ta = tree(&da);
    assert_eq!(ta.len(), 10 + 2 * 10 + 1);
    assert_eq!(ta, tree(&db));
    let run = fs::read_to_string(da.join("run_manifest.txt")).unwrap();
    assert!(run.contains("command=gen-data") && run.contains("seed=3"));
}

#[test]
fn gen_data_rejects_tiny_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = penh(&["gen-data", "--size", "4x4", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("minimum"));
}

#[test]
fn train_nima_writes_checkpoint_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let out = dir.path().join("nima");
    ok(&["train-nima", "--data", s(&data), "--steps", "3", "--batch-size", "4", "--out", s(&out)]);
    let model = Checkpoint::load(&out.join("nima.ckpt")).unwrap().to_nima().unwrap();
    assert!(model.params.iter().all(|(_, t)| t.all_finite()));
    assert!(!read_csv(&out.join("nima_history.csv")).is_empty());
    assert_eq!(read_csv(&out.join("nima_eval.csv")).len(), 1);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let cfg = dir.path().join("train.cfg");
    fs::write(&cfg, "learning_rate=0.1\n").unwrap();
    let out = penh(&["train-nima", "--data", s(&data), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_can_without_penalty_logs_zero_quality_term() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let nima = save_nima(dir.path(), false);
    let out = dir.path().join("can");
    ok(&[
        "train-can", "--data", s(&data), "--nima", s(&nima), "--gamma", "0", "--steps", "5", "--depth", "3", "--out",
        s(&out),
    ]);
    let rows = read_csv(&out.join("can_history.csv"));
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() == 0.0));
    let can = Checkpoint::load(&out.join("can.ckpt")).unwrap().to_can().unwrap();
    assert_eq!(can.config.depth, 3);
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"NIMAENH1 definitely not a checkpoint").unwrap();
    let img = dir.path().join("a.ppm");
    write_image(&img, &Image::filled(16, 16, 0.5).unwrap()).unwrap();
    let out = penh(&["score", "--nima", s(&bad), "--images", s(&img), "--out", s(&dir.path().join("s.csv"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn uniform_head_scores_midpoint() {
    let dir = tempfile::tempdir().unwrap();
    let nima = save_nima(dir.path(), true);
    let imgs = dir.path().join("imgs");
    fs::create_dir(&imgs).unwrap();
    write_image(&imgs.join("a.ppm"), &Image::filled(16, 20, 0.2).unwrap()).unwrap();
    write_image(&imgs.join("b.ppm"), &Image::filled(24, 24, 0.9).unwrap()).unwrap();
    let csv_path = dir.path().join("scores.csv");
    ok(&["score", "--nima", s(&nima), "--images", s(&imgs), "--out", s(&csv_path)]);
    let rows = read_csv(&csv_path);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!((r[1].parse::<f64>().unwrap() - 5.5).abs() < 1e-12);
        let total: f64 = (2..12).map(|k| r[k].parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    assert!(dir.path().join("scores.manifest.txt").exists());
}

#[test]
fn missing_image_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let nima = save_nima(dir.path(), false);
    let missing = dir.path().join("nope.ppm");
    let out = penh(&["score", "--nima", s(&nima), "--images", s(&missing), "--out", s(&dir.path().join("s.csv"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn enhance_preserves_shape_and_untrained_model_is_near_identity() {
    let dir = tempfile::tempdir().unwrap();
    let can = save_can(dir.path(), "can.ckpt", 7);
    let data: Vec<f64> = (0..37 * 61 * 3).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    let input = Image::new(Tensor::new(&[37, 61, 3], data).unwrap()).unwrap();
    let src = dir.path().join("in.ppm");
    write_image(&src, &input).unwrap();
    let out = dir.path().join("out");
    ok(&["enhance", "--can", s(&can), "--images", s(&src), "--out", s(&out)]);
    let result = read_image(&out.join("in.ppm")).unwrap();
    assert_eq!(result.tensor().shape(), &[37, 61, 3]);
    let before = read_image(&src).unwrap();
    assert!(result.tensor().max_abs_diff(before.tensor()) < 0.05);
}

#[test]
fn enhance_rejects_undersized_image() {
    let dir = tempfile::tempdir().unwrap();
    let can = save_can(dir.path(), "can.ckpt", 7);
    let src = dir.path().join("small.ppm");
    write_image(&src, &Image::filled(8, 8, 0.5).unwrap()).unwrap();
    let out = penh(&["enhance", "--can", s(&can), "--images", s(&src), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_reports_four_methods() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let nima = save_nima(dir.path(), false);
    let can = save_can(dir.path(), "can.ckpt", 3);
    let baseline = save_can(dir.path(), "base.ckpt", 3);
    let out = dir.path().join("eval");
    ok(&[
        "eval", "--nima", s(&nima), "--can", s(&can), "--can-baseline", s(&baseline), "--data", s(&data), "--out",
        s(&out),
    ]);
    let rows = read_csv(&out.join("eval_methods.csv"));
    let methods: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(methods, ["input", "reference", "CAN(L2)", "CAN(L2+NIMA)"]);
    assert_eq!(rows[1][4].parse::<f64>().unwrap(), 99.0);
    assert_eq!(read_csv(&out.join("eval_scores.csv")).len(), 4 * 5);
}
