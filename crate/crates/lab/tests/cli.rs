use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use natural_lab::RunConfig;
use tempfile::TempDir;

fn lab(args: &[&str], dir: &Path, threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_natural-lab"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("NATURAL_LAB_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn summary(dir: &Path, suite: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{suite}.json"))).unwrap()).unwrap()
}

#[test]
fn shipped_config_is_the_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
}

#[test]
fn verify_tree_passes_and_writes_a_summary() {
    let tmp = TempDir::new().unwrap();
    let out = lab(&["verify-tree"], tmp.path(), "1");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let s = summary(tmp.path(), "verify-tree");
    assert_eq!(s["suite"], "verify-tree");
    assert_eq!(s["pass"], true);
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    assert!(s["checks"].as_array().unwrap().len() > 20);
    assert!(tmp.path().join("tree.json").exists());
}

#[test]
fn every_subcommand_runs_on_a_small_budget() {
    for cmd in ["verify-mc", "build-family", "sample-tau", "regularity", "polarize"] {
        let tmp = TempDir::new().unwrap();
        let out = lab(&[cmd, "--paths", "300"], tmp.path(), "1");
        assert!(
            matches!(out.status.code(), Some(0 | 1)),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let s = summary(tmp.path(), cmd);
        assert_eq!(s["suite"], cmd);
        assert_eq!(s["pass"].as_bool(), Some(out.status.code() == Some(0)));
    }
}

#[test]
fn epsilon_of_one_half_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = RunConfig::default();
    cfg.z.epsilon = 0.5;
    let path = write_config(tmp.path(), &cfg);
    let out = lab(&["verify-tree", "--config", &path], tmp.path(), "1");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("z.epsilon"));
}

#[test]
fn malformed_config_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, "{ \"grid\": { \"steps\": \"ten\" } }").unwrap();
    let out = lab(&["verify-tree", "--config", path.to_str().unwrap()], tmp.path(), "1");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_are_distinct() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(lab(&["no-such-command"], tmp.path(), "1").status.code(), Some(64));
    assert_eq!(lab(&["verify-tree", "--bogus"], tmp.path(), "1").status.code(), Some(64));
    assert_eq!(lab(&["--help"], tmp.path(), "1").status.code(), Some(0));
}

#[test]
fn bad_thread_count_is_reported() {
    let tmp = TempDir::new().unwrap();
    let out = lab(&["verify-tree"], tmp.path(), "many");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NATURAL_LAB_THREADS"));
}

#[test]
fn zero_coefficient_with_deterministic_z_freezes_the_family() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = RunConfig::default();
    cfg.z.sigma_n = 0.0;
    cfg.z.jump_scale = 0.0;
    for c in &mut cfg.pair.components {
        c.shapes.clear();
    }
    let path = write_config(tmp.path(), &cfg);
    let out = lab(&["build-family", "--config", &path, "--paths", "20"], tmp.path(), "1");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let z = |t: f64| {
        let hazard = cfg.z.lambda * t + if t >= cfg.z.jump_time - 1e-12 { cfg.z.jump_size } else { 0.0 };
        cfg.z.z0 * (-hazard).exp()
    };
    let mut reader = csv::Reader::from_path(tmp.path().join("family.csv")).unwrap();
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let u: f64 = rec[2].parse().unwrap();
        let value: f64 = rec[5].parse().unwrap();
        assert!((value - (1.0 - z(u))).abs() <= 1e-12, "u = {u}: {value}");
        rows += 1;
    }
    let n = cfg.grid.steps;
    assert_eq!(rows, 20 * (n + 1) * (n + 2) / 2);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["verify-mc", "--paths", "3000", "--seed", "11"];
    assert!(lab(&args, a.path(), "1").status.success());
    assert!(lab(&args, b.path(), "3").status.success());
    for name in ["verify-mc.json", "enlargement.csv", "functional_panel.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}
