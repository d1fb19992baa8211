use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn examples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples")
}

fn hjhom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjhom")).args(args).output().expect("binary runs")
}

fn run_example(cmd: &str, file: &str, out: &Path, extra: &[&str]) -> Vec<PathBuf> {
    let cfg = examples().join(file);
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = hjhom(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap().lines().map(PathBuf::from).collect()
}

fn with_ext(files: &[PathBuf], ext: &str) -> PathBuf {
    files.iter().find(|f| f.extension().is_some_and(|e| e == ext)).cloned().unwrap()
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn w_well_config() -> Value {
    serde_json::from_str(&std::fs::read_to_string(examples().join("effective_w_well.json")).unwrap()).unwrap()
}

fn error_of(o: &Output) -> Value {
    let line = String::from_utf8_lossy(&o.stderr);
    let v: Value = serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"));
    v["error"].clone()
}

#[test]
fn effective_fixture_lists_six_breakpoints() {
    let dir = tempfile::tempdir().unwrap();
    let files = run_example("effective", "effective_w_well.json", dir.path(), &[]);
    assert_eq!(files.len(), 3);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(with_ext(&files, "json")).unwrap()).unwrap();
    let got: Vec<f64> = doc["result"]["breakpoints"].as_array().unwrap().iter().map(|b| b.as_f64().unwrap()).collect();
    let want = [-1.0 / 6.0, 1.0 / 6.0, 5.0 / 6.0, 1.25, 1.75, 2.5];
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-8, "{got:?}");
    }
    let csv = std::fs::read_to_string(with_ext(&files, "csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("# config: {")));
    assert!(csv.lines().any(|l| l == "# seed: 0"));
    let gp = std::fs::read_to_string(with_ext(&files, "gp")).unwrap();
    let csv_name = with_ext(&files, "csv").file_name().unwrap().to_str().unwrap().to_string();
    assert!(gp.contains(&csv_name));
    assert!(csv_name.starts_with("effective_") && csv_name.len() == "effective_".len() + 16 + 4);
}

#[test]
fn malformed_hamiltonian_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();

    let mut cfg = w_well_config();
    cfg["hamiltonian"]["branches"][1]["slope"] = 0.0.into();
    let p = write_config(dir.path(), &cfg);
    let o = hjhom(&["effective", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_of(&o);
    assert_eq!(e["invariant"], "hamiltonian_piecewise_monotone");
    assert_eq!(e["path"], "/hamiltonian");

    let mut cfg = w_well_config();
    cfg["hamiltonian"].as_object_mut().unwrap().remove("tail_slope_right");
    let p = write_config(dir.path(), &cfg);
    let o = hjhom(&["effective", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_of(&o);
    assert_eq!(e["invariant"], "config_schema");
    assert_eq!(e["path"], "/hamiltonian");

    let mut cfg = w_well_config();
    cfg["hamiltonian"]["tail_slope_right"] = (-1.0).into();
    let p = write_config(dir.path(), &cfg);
    let o = hjhom(&["effective", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_of(&o)["path"], "/hamiltonian/tail_slope_right");

    // nothing but the config was written
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 1);
}

#[test]
fn unknown_fields_and_mismatched_commands_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = w_well_config();
    cfg["params"]["colour"] = "red".into();
    let p = write_config(dir.path(), &cfg);
    let o = hjhom(&["effective", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_of(&o)["invariant"], "config_schema");

    let p = examples().join("effective_w_well.json");
    let o = hjhom(&["cell", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_of(&o)["invariant"], "command_matches_config");

    let o = hjhom(&["effective", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_of(&o)["invariant"], "config_readable");
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (cmd, file) in [("effective", "effective_w_well.json"), ("corrector", "corrector_w_well.json"), ("cell", "cell_w_well.json")] {
        let fa = run_example(cmd, file, a.path(), &["--workers", "1"]);
        let fb = run_example(cmd, file, b.path(), &["--workers", "3"]);
        assert_eq!(fa.len(), 3);
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
        }
    }
    // timestamps live in the sidecar only
    let logs: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "log"))
        .collect();
    assert_eq!(logs.len(), 3);
    assert!(std::fs::read_to_string(&logs[0]).unwrap().contains("finished_unix="));
}

#[test]
fn seed_flag_reaches_the_potential_and_the_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "command": "cell",
        "hamiltonian": w_well_config()["hamiltonian"],
        "potential": { "variant": "random_phase", "base": { "variant": "cosine", "mbar": 1 }, "seed": 5 },
        "params": { "momenta": [3.0], "lambdas": [0.1, 0.05] }
    });
    let p = write_config(dir.path(), &cfg);
    let run = |seed: &str| {
        let o = hjhom(&["cell", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let json = String::from_utf8(o.stdout).unwrap().lines().find(|l| l.ends_with(".json")).unwrap().to_string();
        serde_json::from_str::<Value>(&std::fs::read_to_string(json).unwrap()).unwrap()
    };
    let (d7, d8) = (run("7"), run("8"));
    assert_eq!(d7["seed"], 7);
    assert_eq!(d7["config"]["potential"]["seed"], 7);
    assert_eq!(d8["config"]["potential"]["seed"], 8);
    assert_ne!(d7["result"], d8["result"]);
}

#[test]
fn compare_reports_triples() {
    let dir = tempfile::tempdir().unwrap();
    let files = run_example("compare", "compare_w_well.json", dir.path(), &[]);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(with_ext(&files, "json")).unwrap()).unwrap();
    let rows = doc["result"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let (f, c, cell) = (r["formula"].as_f64().unwrap(), r["curve"].as_f64().unwrap(), r["cell"]["value"].as_f64().unwrap());
        assert!((f - c).abs() < 1e-8, "{r}");
        assert!((cell - c).abs() < 0.05, "{r}");
    }
    assert_eq!(doc["result"]["formula"]["route"], "small_osc");
}

#[test]
fn corrector_field_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let files = run_example("corrector", "corrector_w_well.json", dir.path(), &[]);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(with_ext(&files, "json")).unwrap()).unwrap();
    assert_eq!(doc["result"]["verify"]["passed"], true);
    let flat = &doc["result"]["flat_interval"];
    let slope = doc["result"]["expected_slope"]["mean"].as_f64().unwrap();
    let (lo, hi) = (flat["lo"].as_f64().unwrap(), flat["hi"].as_f64().unwrap());
    assert!((slope - (lo + hi) / 2.0).abs() < 1e-6);
}

#[test]
fn shipped_examples_pass_the_schema() {
    for entry in std::fs::read_dir(examples()).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let cfg = hjhom_cli::RunConfig::load(&text, &Default::default());
        assert!(cfg.is_ok(), "{}: {:?}", path.display(), cfg.err());
    }
}

#[test]
fn missing_config_or_zero_workers_fail_cleanly() {
    let o = hjhom(&["effective"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_of(&o)["invariant"], "config_present");
    let p = examples().join("effective_w_well.json");
    let o = hjhom(&["effective", "--config", p.to_str().unwrap(), "--workers", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_of(&o)["invariant"], "workers_positive");
}
