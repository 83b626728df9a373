use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maglab_cli::config::{parse_config, parse_str, ExperimentConfig};
use maglab_cli::sha256_hex;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn maglab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maglab")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

const FREE_BANDS: &str = r#"
[experiment]
kind = "bands"
resolution = 64

[model]
background = "free"
"#;

#[test]
fn bands_config_round_trips() {
    let cfg = parse_str(FREE_BANDS).unwrap();
    let again: ExperimentConfig = parse_str(&cfg.canonical().unwrap()).unwrap();
    assert_eq!(cfg, again);
}

#[test]
fn full_config_round_trips() {
    let text = r#"
[experiment]
kind = "wegner"
e0 = -0.5
etas = [0.001, 0.002]
q = 2.0
sides = [16, 24]

[model]
background = "magnetic-lattice"
lambda = [0.1, 0.2]
distribution = { kind = "table", points = [[-1.0, 1.0], [1.0, 1.0]] }
gap_window = [-1.5, 0.0]

[compute]
ensemble_size = 10
master_seed = 42
gap_resolution = 8

[output]
directory = "runs/w"
formats = ["json"]
"#;
    let cfg = parse_str(text).unwrap();
    assert_eq!(parse_str(&cfg.canonical().unwrap()).unwrap(), cfg);
}

#[test]
fn misspelled_key_names_key_and_line() {
    let text = r#"
[experiment]
kind = "ids"
grid = { lo = 0.0, hi = 1.0, points = 3 }

[model]
background = "free"
side = 8
lamda = [0.1]
"#;
    let e = parse_str(text).unwrap_err().to_string();
    assert!(e.contains("unknown field `lamda`"), "{e}");
    assert!(e.contains("line 9"), "{e}");
}

#[test]
fn cell_file_with_wrong_grid_size_names_both_sizes() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.cell", "d 2\nq 2 2\nh 1.0\neps 0\npotential\n 0 1 2\n");
    let cfg = write(
        dir.path(),
        "bands.toml",
        "[experiment]\nkind = \"bands\"\nresolution = 8\n\n[model]\ncell_file = \"bad.cell\"\n",
    );
    let e = parse_config(&cfg).unwrap_err().to_string();
    assert!(e.contains("has 3 values") && e.contains("expects 4"), "{e}");

    let out = maglab(&["bands", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn free_chain_bands_match_cosine_law() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bands.toml", FREE_BANDS);
    let out_dir = dir.path().join("out");
    let out = maglab(&["bands", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("bands.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
        assert!((v[1] - (2.0 - 2.0 * v[0].cos())).abs() <= 1e-10, "{line}");
        assert!(v[0] >= -PI - 1e-11 && v[0] < PI);
        rows += 1;
    }
    assert_eq!(rows, 64);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["outputs"][0]["file"], "bands.csv");
    assert_eq!(manifest["outputs"][0]["sha256"], sha256_hex(csv.as_bytes()));
}

const IDS: &str = r#"
[experiment]
kind = "ids"
grid = { lo = -3.0, hi = 11.0, points = 57 }

[model]
background = "magnetic-lattice"
side = 8
lambda = [0.0, 2.0]
distribution = { kind = "uniform", a = -1.0, b = 1.0 }

[compute]
ensemble_size = 4
master_seed = 9
"#;

fn payload_hashes(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), sha256_hex(&std::fs::read(&p).unwrap())))
        .collect();
    v.sort();
    v
}

#[test]
fn identical_configs_give_identical_payloads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ids.toml", IDS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (d, threads) in [(&a, "1"), (&b, "3")] {
        let out = maglab(&["ids", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap(), "--threads", threads]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ha, hb) = (payload_hashes(&a), payload_hashes(&b));
    assert_eq!(ha.len(), 3);
    assert_eq!(ha, hb);
    assert_ne!(ha[0].1, ha[1].1, "disorder must move the IDS");

    let c = dir.path().join("c");
    let out = maglab(&["ids", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "10"]);
    assert!(out.status.success());
    assert_ne!(payload_hashes(&c), ha);
}

#[test]
fn wegner_outside_gap_surfaces_precondition() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[experiment]
kind = "wegner"
e0 = 3.0
etas = [0.1, 0.6]
sides = [8]

[model]
background = "period-two-chain"
lambda = [0.1]
distribution = { kind = "uniform", a = -1.0, b = 1.0 }
gap_window = [2.5, 3.5]
"#;
    let cfg = write(dir.path(), "w.toml", text);
    let out_dir = dir.path().join("out");
    let out = maglab(&["wegner", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("precondition violated: [E0 - 2η, E0 + 2η] = [1.8, 4.2] leaves the gap"), "{err}");
    let manifest = std::fs::read_to_string(out_dir.join("quarantine").join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"failed\""));
    assert!(!out_dir.join("manifest.json").exists());
}

#[test]
fn subcommand_must_match_experiment_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bands.toml", FREE_BANDS);
    let out = maglab(&["ids", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_distribution_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ids.toml", &IDS.replace("distribution = { kind = \"uniform\", a = -1.0, b = 1.0 }", ""));
    let out = maglab(&["ids", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.distribution"));
}
