use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use indiff_core::binomial::BinomialModel;
use indiff_core::tree::two_period_counterexample;
use indiff_core::ScenarioTree;
use serde_json::Value;
use tempfile::TempDir;

fn indiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_indiff")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

fn coin_tree() -> ScenarioTree {
    ScenarioTree::single_period(&[0.5, 0.5], &[vec![1.0], vec![-1.0]]).unwrap()
}

fn model_file(dir: &Path, model: &BinomialModel) -> PathBuf {
    write(dir, "model.json", &serde_json::to_string(&model.to_file()).unwrap())
}

const PANEL: &str = "[[makers]]\nkind = \"exponential\"\nalpha = 1.0\n";

#[test]
fn counterexample_reports_cash_limits() {
    let out = indiff(&["counterexample", "--p1", "0.5", "--p2", "0.6", "--p3", "0.4", "--alpha", "1", "--psi-u", "1", "--psi-d", "0"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert!((v["up"]["cash_limit"].as_f64().unwrap() - 0.223144).abs() < 1e-6);
    assert!((v["down"]["cash_limit"].as_f64().unwrap() + 0.182322).abs() < 1e-6);
    assert_eq!(v["attained"], "not-attained-evidence");
}

#[test]
fn completeness_of_counterexample_model() {
    let dir = TempDir::new().unwrap();
    let tree = two_period_counterexample(0.5, 0.6, 0.4, 1.0, 0.0).unwrap();
    let model = model_file(dir.path(), &BinomialModel::unendowed(tree, 1.0).unwrap());
    let out = indiff(&["completeness", "--model", model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["complete"], false);
    assert_eq!(v["violations"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_tree_is_a_config_error() {
    let out = indiff(&["simulate", "--tree", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config error") && err.contains("here.json"), "{err}");
}

#[test]
fn malformed_panel_reports_line() {
    let dir = TempDir::new().unwrap();
    let tree = write(dir.path(), "tree.json", &serde_json::to_string(&coin_tree().to_file()).unwrap());
    let panel = write(dir.path(), "panel.toml", "[[makers]]\nkind = \"exponential\"\nalpha = \n");
    let out = indiff(&["simulate", "--tree", tree.to_str().unwrap(), "--panel", panel.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("panel.toml:3:"), "{err}");
}

#[test]
fn replicate_fair_coin() {
    let dir = TempDir::new().unwrap();
    let model = model_file(dir.path(), &BinomialModel::unendowed(coin_tree(), 1.0).unwrap());
    let claim = write(dir.path(), "claim.json", "[1.0, -1.0]");
    let out_dir = dir.path().join("out");
    let out = indiff(&[
        "replicate",
        "--model",
        model.to_str().unwrap(),
        "--claim",
        claim.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["pi"].as_f64().unwrap(), 0.433780830483027);
    assert!((v["strategy"]["root"][0].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(v["verified"], true);
    let csv = std::fs::read_to_string(out_dir.join("strategy.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("node_id,time,Q1"));
}

#[test]
fn infeasible_claim_exits_two() {
    let dir = TempDir::new().unwrap();
    let tree = two_period_counterexample(0.5, 0.6, 0.4, 1.0, 0.0).unwrap();
    let model = model_file(dir.path(), &BinomialModel::unendowed(tree, 1.0).unwrap());
    let claim = write(dir.path(), "claim.json", r#"{"uu": 10, "ud": 0, "du": 0, "dd": 0}"#);
    let out = indiff(&["replicate", "--model", model.to_str().unwrap(), "--claim", claim.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn claim_with_unknown_leaf_is_rejected() {
    let dir = TempDir::new().unwrap();
    let model = model_file(dir.path(), &BinomialModel::unendowed(coin_tree(), 1.0).unwrap());
    let claim = write(dir.path(), "claim.json", r#"{"nowhere": 1.0}"#);
    let out = indiff(&["replicate", "--model", model.to_str().unwrap(), "--claim", claim.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seeded_simulation_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = indiff(&["simulate", "--seed", "42", "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success());
        (out.stdout, std::fs::read(out_dir.join("path.csv")).unwrap(), std::fs::read(out_dir.join("tree.json")).unwrap())
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let v: Value = serde_json::from_slice(&a.0).unwrap();
    assert_eq!(v["martingale_ok"], true);
}

#[test]
fn superreplicate_writes_price_curve() {
    let dir = TempDir::new().unwrap();
    let tree = write(dir.path(), "tree.json", &serde_json::to_string(&coin_tree().to_file()).unwrap());
    let panel = write(dir.path(), "panel.toml", PANEL);
    let claim = write(dir.path(), "claim.json", "[1.0, -1.0]");
    let out_dir = dir.path().join("out");
    let out = indiff(&[
        "superreplicate",
        "--tree",
        tree.to_str().unwrap(),
        "--panel",
        panel.to_str().unwrap(),
        "--claim",
        claim.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert!((v["price_upper"].as_f64().unwrap() - 1f64.cosh().ln()).abs() < 1e-9);
    let csv = std::fs::read_to_string(out_dir.join("price_curve.csv")).unwrap();
    assert!(csv.starts_with("level,bound,evaluations,price,max_position\n"));
    assert!(std::fs::metadata(out_dir.join("superreplicate.json")).is_ok());
}

#[test]
fn budget_too_small_is_an_error() {
    let dir = TempDir::new().unwrap();
    let tree = write(dir.path(), "tree.json", &serde_json::to_string(&coin_tree().to_file()).unwrap());
    let panel = write(dir.path(), "panel.toml", PANEL);
    let claim = write(dir.path(), "claim.json", "[1.0, -1.0]");
    let out = indiff(&[
        "superreplicate",
        "--tree",
        tree.to_str().unwrap(),
        "--panel",
        panel.to_str().unwrap(),
        "--claim",
        claim.to_str().unwrap(),
        "--budget",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn friction_probe_on_trinomial() {
    let dir = TempDir::new().unwrap();
    let tri = ScenarioTree::single_period(&[0.25, 0.5, 0.25], &[vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
    let tree = write(dir.path(), "tree.json", &serde_json::to_string(&tri.to_file()).unwrap());
    let out = indiff(&["friction-probe", "--tree", tree.to_str().unwrap(), "--t", "1", "--levels", "-1"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["diverges"], true);
}

#[test]
fn tails_tree_trinomial() {
    let dir = TempDir::new().unwrap();
    let tri = ScenarioTree::single_period(&[1.0 / 3.0; 3], &[vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
    let tree = write(dir.path(), "tree.json", &serde_json::to_string(&tri.to_file()).unwrap());
    let out_dir = dir.path().join("out");
    let out = indiff(&["tails-tree", "--tree", tree.to_str().unwrap(), "--t", "1", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert!((v["report"]["min_probability"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-14);
    let csv = std::fs::read_to_string(out_dir.join("ratios.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 4);
}

#[test]
fn tails_levy_brownian() {
    let dir = TempDir::new().unwrap();
    let triplet = write(dir.path(), "levy.toml", "b = 0.0\nc = 1.0\n");
    let samples = write(dir.path(), "s.csv", "delta\n-1\n0\n1\n");
    let out = indiff(&[
        "tails-levy",
        "--triplet",
        triplet.to_str().unwrap(),
        "--h",
        "1",
        "--samples",
        samples.to_str().unwrap(),
        "--q",
        "100",
    ]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["positive_ray"]["behaviour"], "quadratic");
    for s in v["samples"].as_array().unwrap() {
        assert!(s["positive"][0][1].as_f64().unwrap() <= -4.9e3);
    }
}

#[test]
fn tails_bns_generic() {
    let dir = TempDir::new().unwrap();
    let params = write(
        dir.path(),
        "bns.toml",
        "m = 0.0\nbeta = -0.5\nlambda = 1.0\nrho = -0.3\nsigma0_sq = 0.04\n\n[subordinator]\njumps = [[0.1, 1.0]]\n",
    );
    let out = indiff(&["tails-bns", "--params", params.to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["report"]["diverges"], true);
    assert!(v["report"]["q6_coefficient"].as_f64().unwrap() > 0.0);
}
