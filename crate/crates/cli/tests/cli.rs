use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctsr_core::io;
use ctsr_core::phantom::PhantomSpec;
use ctsr_core::train::TrainConfig;

fn ctsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctsr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ctsr(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn diagnostic(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "expected one diagnostic line, got {text:?}");
    serde_json::from_str(lines[0]).expect("diagnostic is JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn edge_roi(n: usize, pixel_size: f64) -> String {
    let spec: PhantomSpec = serde_json::from_str(&format!(
        r#"{{"kind":"bar_pattern","n":{n},"pixel_size":{pixel_size},"frequencies":[0.15,0.2,0.25,0.3]}}"#
    ))
    .unwrap();
    let r = spec.edge_roi().unwrap();
    format!("{},{},{},{}", r.row, r.col, r.rows, r.cols)
}

/// Phantom, HR projection and binned acquisition for a 128² instance.
fn setup(dir: &Path) {
    write(
        dir,
        "phantom.json",
        r#"{"kind":"bar_pattern","n":128,"pixel_size":1.0,"frequencies":[0.15,0.2,0.25,0.3,0.35,0.4]}"#,
    );
    write(dir, "hr_geom.json", r#"{"n_views":60,"n_det":256,"det_spacing":0.75}"#);
    write(dir, "train.json", r#"{"epochs":2,"ssim_window":7}"#);
    ok(dir, &["phantom", "--spec", "phantom.json", "--out", "phantom.ctr"]);
    ok(dir, &["project", "--img", "phantom.ctr", "--geom", "hr_geom.json", "--out", "hr.ctr"]);
    ok(dir, &["bin", "--sino", "hr.ctr", "--out", "y.ctr"]);
}

#[test]
fn toy_pipeline_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(dir, &["fbp", "--sino", "hr.ctr", "--grid", "256,0.5", "--out", "hr_ref.ctr"]);
    ok(dir, &["simulate-lr", "--sino", "y.ctr", "--grid", "128,1", "--out", "ylr.ctr", "--xref-out", "xref.ctr"]);
    let train = ok(
        dir,
        &["train", "--sino", "y.ctr", "--grid", "128,1", "--config", "train.json", "--seed", "3", "--losses", "loss.csv", "--out", "model.ckpt"],
    );
    let summary: serde_json::Value = serde_json::from_slice(&train.stdout).unwrap();
    assert_eq!(summary["epochs"], 2);
    ok(dir, &["reconstruct", "--sino", "y.ctr", "--ckpt", "model.ckpt", "--out", "sr.ctr"]);
    ok(dir, &["baseline-bicubic", "--sino", "y.ctr", "--grid", "128,1", "--out", "bicubic.ctr"]);
    ok(dir, &["baseline-bicubic", "--sino", "y.ctr", "--grid", "128,1", "--method", "nearest", "--out", "nearest.ctr"]);
    let roi = edge_roi(256, 0.5);
    ok(dir, &["eval", "--test", "sr.ctr", "--reference", "hr_ref.ctr", "--report", "metrics.json", "--roi", &roi]);
    ok(dir, &["mtf", "--img", "sr.ctr", "--roi", &roi, "--report", "mtf.csv"]);
    ok(dir, &["export-pgm", "--img", "sr.ctr", "--window", "0,0.06", "--out", "sr.pgm"]);

    let (ylr, g) = io::load_sinogram(&dir.join("ylr.ctr")).unwrap();
    assert_eq!((ylr.n_views, ylr.n_det, ylr.det_spacing), (60, 64, 3.0));
    assert_eq!(g.unwrap().n_det, 64);
    let sr = io::load_image(&dir.join("sr.ctr")).unwrap();
    assert_eq!((sr.n, sr.pixel_size), (256, 0.5));
    assert!(sr.data.iter().all(|&v| v >= 0.0));
    assert_eq!(io::load_image(&dir.join("bicubic.ctr")).unwrap().n, 256);
    let ck = io::load_checkpoint(&dir.join("model.ckpt")).unwrap();
    assert_eq!(ck.losses.len(), 2);
    assert_eq!(ck.config.seed, 3);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    for key in ["rmse", "ssim", "mtf50", "mtf10", "runtime_seconds"] {
        assert!(m.get(key).is_some(), "metrics.json lacks {key}");
    }
    assert!(m["rmse"].as_f64().unwrap() > 0.0);
    assert!(m["mtf50"].as_f64().unwrap() > 0.0);
    assert!(m["runtime_seconds"].is_null());
    let csv = fs::read_to_string(dir.join("mtf.csv")).unwrap();
    assert!(csv.lines().count() > 10);
    assert!(fs::read(dir.join("sr.pgm")).unwrap().starts_with(b"P5\n256 256\n65535\n"));
    let losses = fs::read_to_string(dir.join("loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3);
}

#[test]
fn zero_epochs_stores_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(dir, &["train", "--sino", "y.ctr", "--grid", "128,1", "--config", "train.json", "--epochs", "0", "--seed", "11", "--out", "init.ckpt"]);
    let ck = io::load_checkpoint(&dir.join("init.ckpt")).unwrap();
    let cfg = TrainConfig { epochs: 0, seed: 11, ssim_window: 7, ..TrainConfig::default() };
    assert_eq!(ck.params, cfg.initial_params());
    assert_eq!(ck.config, cfg);
    assert!(ck.losses.is_empty());
}

#[test]
fn eval_of_identical_images() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "disk.json", r#"{"kind":"disk","n":32,"pixel_size":1.0,"radius":9,"mu":0.03,"background":0.01}"#);
    ok(dir, &["phantom", "--spec", "disk.json", "--out", "disk.ctr"]);
    ok(dir, &["eval", "--test", "disk.ctr", "--reference", "disk.ctr", "--report", "m.json", "--runtime-seconds", "1.5"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("m.json")).unwrap()).unwrap();
    assert_eq!(m["rmse"].as_f64(), Some(0.0));
    assert_eq!(m["ssim"].as_f64(), Some(1.0));
    assert!(m["mtf50"].is_null() && m["mtf10"].is_null());
    assert_eq!(m["runtime_seconds"].as_f64(), Some(1.5));
}

#[test]
fn exit_codes_and_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = ctsr(dir, &["fbp", "--grid", "nonsense"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(diagnostic(&out)["error"], "usage");
    assert_eq!(ctsr(dir, &["--help"]).status.code(), Some(0));

    write(dir, "junk.ctr", "not a tensor at all");
    let out = ctsr(dir, &["export-pgm", "--img", "junk.ctr", "--window", "0,1", "--out", "x.pgm"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(diagnostic(&out)["error"], "bad_magic");

    write(dir, "disk.json", r#"{"kind":"disk","n":16,"pixel_size":1.0,"radius":4,"mu":0.03}"#);
    ok(dir, &["phantom", "--spec", "disk.json", "--out", "disk.ctr"]);
    let bytes = fs::read(dir.join("disk.ctr")).unwrap();
    fs::write(dir.join("cut.ctr"), &bytes[..bytes.len() - 8]).unwrap();
    let out = ctsr(dir, &["export-pgm", "--img", "cut.ctr", "--window", "0,1", "--out", "x.pgm"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(diagnostic(&out)["error"], "truncated");

    let out = ctsr(dir, &["export-pgm", "--img", "disk.ctr", "--window", "1,0", "--out", "x.pgm"]);
    assert_eq!(out.status.code(), Some(2));

    // a non-finite sample in the acquired sinogram is a numeric failure
    let geom = ctsr_core::Geometry::half_turn(4, 8, 1.0).unwrap();
    let mut sino = ctsr_core::Sinogram::for_geometry(&geom);
    sino.data[3] = f64::NAN;
    io::save_sinogram(&dir.join("nan.ctr"), &sino, Some(&geom)).unwrap();
    let out = ctsr(dir, &["train", "--sino", "nan.ctr", "--grid", "8,1", "--epochs", "1", "--out", "m.ckpt"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(diagnostic(&out)["code"], 3);
}
