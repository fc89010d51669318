mod common;

use std::path::Path;
use std::process::Command;

use common::{f32_field, write_entry, write_manifest, EntryFiles};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use uqbench::grid::{Field, ValidityMask};
use uqbench::io;

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["uqbench"];
    full.extend_from_slice(args);
    uqbench::cli::run(full)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn ause_of(report: &Value, variant: &str) -> f64 {
    report["ause"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["variant"] == variant)
        .unwrap()["value"]
        .as_f64()
        .unwrap()
}

struct DepthSet {
    pred: Field,
    gt: Field,
    unc: Field,
}

fn depth_set(seed: u64, h: usize, w: usize) -> DepthSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DepthSet {
        pred: f32_field(&mut rng, h, w, 1, 1.0, 60.0),
        gt: f32_field(&mut rng, h, w, 1, 1.0, 60.0),
        unc: f32_field(&mut rng, h, w, 1, 0.0, 1.0),
    }
}

fn lattice(rng: &mut ChaCha8Rng, n: usize, lo: i32, hi: i32) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi) as f64 / 8.0).collect()
}

#[test]
fn uncertainty_equal_to_error_gives_zero_ause() {
    // Lattice values keep every error exactly representable in the f32 files.
    // With a constant ground truth, |pred - gt| ranks pixels exactly like
    // both the squared and the relative error.
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pred = Field::scalar(6, 7, lattice(&mut rng, 42, 8, 480)).unwrap();
    let gt = Field::filled(6, 7, 1, 20.0).unwrap();
    let unc = Field::scalar(6, 7, pred.data().iter().map(|p| (p - 20.0).abs()).collect()).unwrap();
    let mask = ValidityMask::new(6, 7, (0..42).map(|i| i % 7 != 3).collect()).unwrap();
    let e = write_entry(dir.path(), &EntryFiles { stem: "a", prediction: &pred, uncertainty: &unc, ground_truth: &gt, mask: Some(&mask) });
    let manifest = write_manifest(dir.path(), "m.json", "depth", vec![e], json!({}));
    let out = dir.path().join("r.json");
    assert_eq!(run(&["eval", "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let r = read_json(&out);
    assert_eq!(ause_of(&r, "AUSE-RMSE"), 0.0);
    assert_eq!(ause_of(&r, "AUSE-Absrel"), 0.0);
}

#[test]
fn flow_uncertainty_equal_to_epe_gives_zero_ause() {
    // Only the horizontal component differs, so EPE = |du| exactly.
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u_pred = lattice(&mut rng, 40, -32, 32);
    let u_gt = lattice(&mut rng, 40, -32, 32);
    let v = lattice(&mut rng, 40, -32, 32);
    let interleave = |u: &[f64]| -> Vec<f64> { u.iter().zip(&v).flat_map(|(a, b)| [*a, *b]).collect() };
    let pred = Field::new(5, 8, 2, interleave(&u_pred)).unwrap();
    let gt = Field::new(5, 8, 2, interleave(&u_gt)).unwrap();
    let unc = Field::scalar(5, 8, u_pred.iter().zip(&u_gt).map(|(a, b)| (a - b).abs()).collect()).unwrap();
    let e = write_entry(dir.path(), &EntryFiles { stem: "f", prediction: &pred, uncertainty: &unc, ground_truth: &gt, mask: None });
    let manifest = write_manifest(dir.path(), "m.json", "flow", vec![e], json!({"flow_k": 3.0}));
    let out = dir.path().join("r.json");
    assert_eq!(run(&["eval", "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let r = read_json(&out);
    assert_eq!(ause_of(&r, "AUSE-EPE"), 0.0);
    assert_eq!(r["config"]["flow_k"], 3.0);
    assert!(r["metrics"]["epe"].as_f64().unwrap() > 0.0);
    assert!(r["metrics"]["rmse"].is_null());
}

#[test]
fn image_wise_ause_is_mean_of_single_entry_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = depth_set(3, 5, 6);
    let b = depth_set(4, 7, 4);
    let mask_b = ValidityMask::new(7, 4, (0..28).map(|i| i % 5 != 0).collect()).unwrap();
    let ea = write_entry(dir.path(), &EntryFiles { stem: "a", prediction: &a.pred, uncertainty: &a.unc, ground_truth: &a.gt, mask: None });
    let eb = write_entry(dir.path(), &EntryFiles { stem: "b", prediction: &b.pred, uncertainty: &b.unc, ground_truth: &b.gt, mask: Some(&mask_b) });
    let both = write_manifest(dir.path(), "both.json", "depth", vec![ea.clone(), eb.clone()], json!({}));
    let only_a = write_manifest(dir.path(), "a.json", "depth", vec![ea], json!({}));
    let only_b = write_manifest(dir.path(), "b.json", "depth", vec![eb], json!({}));
    let mut reports = Vec::new();
    for m in [&both, &only_a, &only_b] {
        let out = dir.path().join(format!("{}.out.json", m.file_stem().unwrap().to_str().unwrap()));
        assert_eq!(run(&["eval", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
        reports.push(read_json(&out));
    }
    for variant in ["AUSE-RMSE", "AUSE-Absrel"] {
        let expected = 0.5 * (ause_of(&reports[1], variant) + ause_of(&reports[2], variant));
        assert!((ause_of(&reports[0], variant) - expected).abs() < 1e-15, "{variant}");
    }
    let n = reports[0]["metrics"]["n_valid"].as_u64().unwrap();
    assert_eq!(n, 30 + mask_b.count_valid() as u64);
}

#[test]
fn dataset_mode_and_flags_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let a = depth_set(5, 6, 6);
    let e = write_entry(dir.path(), &EntryFiles { stem: "a", prediction: &a.pred, uncertainty: &a.unc, ground_truth: &a.gt, mask: None });
    let m = write_manifest(dir.path(), "m.json", "depth", vec![e], json!({"m": 0.1, "thr": 1.1}));
    let out = dir.path().join("r.json");
    let code = run(&["eval", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap(), "--ause", "dataset", "--m", "0.2", "--no-normalize"]);
    assert_eq!(code, 0);
    let r = read_json(&out);
    assert_eq!(r["config"]["ause_mode"], "dataset");
    assert_eq!(r["config"]["sparsification"]["fraction_step"], 0.2);
    assert_eq!(r["config"]["sparsification"]["normalize"], false);
    assert_eq!(r["config"]["thr"], 1.1);
    assert_eq!(r["tool"], "uqbench");
    assert!(r["version"].is_string());
    for key in ["rmse", "absrel", "sqrel", "rmse_log", "log10", "d1", "d2", "d3"] {
        assert!(r["metrics"][key].is_number(), "{key}");
    }
    assert!(r["auroc"].is_number());
}

#[test]
fn missing_file_exits_with_input_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let a = depth_set(6, 3, 3);
    let mut e = write_entry(dir.path(), &EntryFiles { stem: "a", prediction: &a.pred, uncertainty: &a.unc, ground_truth: &a.gt, mask: None });
    e["ground_truth_path"] = json!("absent_gt.pfm");
    let m = write_manifest(dir.path(), "m.json", "depth", vec![e], json!({}));
    let out = Command::new(env!("CARGO_BIN_EXE_uqbench"))
        .args(["eval", "--manifest", m.to_str().unwrap(), "--out", dir.path().join("r.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("absent_gt.pfm"), "{stderr}");
    assert!(stderr.contains("entry 0") && stderr.contains("ground_truth_path"), "{stderr}");
}

#[test]
fn invalid_depth_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = depth_set(7, 3, 3);
    let mut gt = a.gt.data().to_vec();
    gt[4] = -1.0;
    let gt = Field::scalar(3, 3, gt).unwrap();
    let e = write_entry(dir.path(), &EntryFiles { stem: "a", prediction: &a.pred, uncertainty: &a.unc, ground_truth: &gt, mask: None });
    let m = write_manifest(dir.path(), "m.json", "depth", vec![e], json!({}));
    assert_eq!(run(&["eval", "--manifest", m.to_str().unwrap(), "--out", dir.path().join("r.json").to_str().unwrap()]), 2);
}

#[test]
fn unknown_flags_are_rejected() {
    assert_eq!(run(&["eval", "--manifest", "x", "--out", "y", "--frobnicate"]), 2);
    assert_eq!(run(&["toy", "--out", "y", "--methods", "bayes_by_backprop"]), 2);
    assert_eq!(run(&["nonsense"]), 2);
}

#[test]
fn curves_writes_csv_and_svg_per_entry() {
    let dir = tempfile::tempdir().unwrap();
    let a = depth_set(8, 6, 6);
    let e = write_entry(dir.path(), &EntryFiles { stem: "a", prediction: &a.pred, uncertainty: &a.unc, ground_truth: &a.gt, mask: None });
    let m = write_manifest(dir.path(), "m.json", "depth", vec![e.clone(), e], json!({"m": 0.25}));
    let out = dir.path().join("curves");
    assert_eq!(run(&["curves", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap(), "--svg"]), 0);
    let csv = std::fs::read_to_string(out.join("entry_001_ause_rmse.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "fraction,predicted,oracle");
    assert_eq!(lines.len(), 5);
    assert!(out.join("entry_000_ause_absrel.svg").is_file());
    let rows: Vec<Vec<f64>> = lines[1..].iter().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows[0][1], 1.0);
    assert_eq!(rows[0][2], 1.0);
    assert!(rows.windows(2).all(|w| w[1][2] <= w[0][2]));
}

#[test]
fn gradcheck_and_selftest_pass() {
    assert_eq!(run(&["gradcheck", "--trials", "20"]), 0);
    assert_eq!(run(&["selftest", "--instances", "200"]), 0);
}

#[test]
fn small_toy_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    let code = run(&["toy", "--seed", "3", "--out", out.to_str().unwrap(), "--methods", "mc_dropout,single_pu", "--epochs", "1"]);
    assert_eq!(code, 0);
    for f in ["mc_dropout.csv", "single_pu.csv", "summary.json", "toy.svg"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("slurp_joint.csv").exists());
    let csv = std::fs::read_to_string(out.join("single_pu.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y_true,mean,sigma"));
    assert_eq!(csv.lines().count(), 401);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["config"]["train"]["epochs"], 1);
    assert_eq!(summary["report"]["methods"].as_array().unwrap().len(), 2);
    assert_eq!(summary["main_checksum_before"], summary["main_checksum_after"]);
    let csv_x: f64 = csv.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((-10.0..10.0).contains(&csv_x));
    let _ = io::TOOL_VERSION;
}
