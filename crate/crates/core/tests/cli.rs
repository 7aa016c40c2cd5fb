// The gmfg binary: exit codes, error reporting and output files.

use std::path::Path;
use std::process::{Command, Output};

fn scenarios() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn gmfg(args: &[&str], config: &Path, out: &Path, env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gmfg"));
    c.args(&args[..1]).arg("--config").arg(config).arg("--out").arg(out).args(&args[1..]);
    c.env_remove("GMFG_SEED").env_remove("GMFG_TIMING");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const GMFG: &str = r#"{
    "seed": 4,
    "graphon": {"kind": "uniform_attachment"},
    "problem": {"type": "gmfg",
        "couplings": {"form": "structured", "f0": 1, "f": 0.5, "l1": {"sq_diff": 1},
                      "l2": 0.5, "l3": 0, "l4": 0.5},
        "control": {"a": -1, "b": 1}, "sigma": 0.3, "horizon": 0.5,
        "initial": {"kind": "normal", "mean": 0.2, "std": 0.3}},
    "grids": {"m": 2, "k": 32, "n_x": 101, "particles": 400},
    "tolerances": {"picard": {"tol": 0.26}}
}"#;

#[test]
fn negative_sigma_is_an_input_error_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", &GMFG.replace("\"sigma\": 0.3", "\"sigma\": -0.3"));
    let o = gmfg(&["solve-gmfg"], &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("problem.sigma"), "{err}");
}

#[test]
fn all_schema_errors_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let text = GMFG.replace("\"sigma\": 0.3", "\"sigma\": -0.3").replace("\"m\": 2", "\"m\": 0");
    let cfg = write(dir.path(), "s.json", &text);
    let o = gmfg(&["solve-gmfg"], &cfg, &dir.path().join("out"), &[]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("problem.sigma") && err.contains("grids.m"), "{err}");
}

#[test]
fn unknown_graphon_and_missing_file_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", &GMFG.replace("uniform_attachment", "small_world"));
    assert_eq!(gmfg(&["solve-gmfg"], &cfg, &dir.path().join("o"), &[]).status.code(), Some(1));
    let missing = dir.path().join("nope.json");
    assert_eq!(gmfg(&["solve-gmfg"], &missing, &dir.path().join("o"), &[]).status.code(), Some(1));
}

#[test]
fn wrong_problem_type_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", GMFG);
    assert_eq!(gmfg(&["solve-lq"], &cfg, &dir.path().join("o"), &[]).status.code(), Some(1));
}

#[test]
fn non_contracting_instance_exits_2_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = gmfg(&["solve-gmfg"], &scenarios().join("gmfg_noncontracting.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["converged"], false);
    assert_eq!(trace["entries"].as_array().unwrap().len(), 8);
}

#[test]
fn solve_gmfg_outputs_and_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", GMFG);
    let out = dir.path().join("out");
    let o = gmfg(&["solve-gmfg", "--dump-paths", "--threads", "1"], &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.json", "ensemble.csv", "diagnostics.json", "policy_v000.csv", "value_v001.csv", "paths.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("policy_v000.csv")).unwrap();
    assert!(csv.starts_with("# gmfg "));
    assert!(csv.lines().nth(1).unwrap().starts_with("t_index,x_index,value"));
    let trace = std::fs::read_to_string(out.join("trace.json")).unwrap();
    assert!(trace.contains("\"wall_time\": null"));
}

#[test]
fn timing_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", GMFG);
    let out = dir.path().join("out");
    gmfg(&["solve-gmfg"], &cfg, &out, &[("GMFG_TIMING", "1")]);
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("trace.json")).unwrap()).unwrap();
    assert!(trace["entries"][0]["wall_time"].is_f64());
}

#[test]
fn seed_override_changes_particles_but_not_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", GMFG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gmfg(&["solve-gmfg"], &cfg, &a, &[]);
    gmfg(&["solve-gmfg"], &cfg, &b, &[("GMFG_SEED", "12345")]);
    let ea = std::fs::read_to_string(a.join("ensemble.csv")).unwrap();
    let eb = std::fs::read_to_string(b.join("ensemble.csv")).unwrap();
    assert_ne!(ea, eb);
    assert_eq!(ea.lines().count(), eb.lines().count());
    let bad = gmfg(&["solve-gmfg"], &cfg, &b, &[("GMFG_SEED", "minus one")]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn graphon_diag_column_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = gmfg(&["graphon-diag"], &scenarios().join("graphon_diag.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("h11.csv")).unwrap();
    let h: Vec<f64> = csv.lines().skip(2).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(h.len(), 4);
    assert!(h.windows(2).all(|w| w[1] < w[0]), "{h:?}");
    assert!(out.join("step_m004.csv").exists());
}

#[test]
fn ladder_flag_overrides_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let text = GMFG.replace("\"tolerances\"", "\"enash\": {\"replications\": 3},\n    \"tolerances\"");
    let cfg = write(dir.path(), "s.json", &text);
    let out = dir.path().join("out");
    let o = gmfg(&["simulate-enash", "--ladder", "1x4,2x4", "--dump-paths"], &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let rungs = r["rungs"].as_array().unwrap();
    assert_eq!(rungs.len(), 2);
    assert_eq!(rungs[1]["n"], 8);
    assert!(r["gap_is_lower_bound"].as_bool().unwrap());
    assert!(out.join("trajectories.csv").exists());
    let bad = gmfg(&["simulate-enash", "--ladder", "2x"], &cfg, &out, &[]);
    assert_eq!(bad.status.code(), Some(1));
}
