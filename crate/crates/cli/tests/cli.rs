use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use levyfbsde_cli::commands::read_results;
use levyfbsde_cli::criteria::Status;

fn levyfbsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levyfbsde")).args(args).env_remove("LEVYFBSDE_THREADS").output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn check_measure_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cases = [
        (r#"{"schema_version": 1, "seed": 1}"#, 0),
        (r#"{"schema_version": 1, "seed": 1, "measure": {"beta": 2.5}}"#, 2),
        (r#"{"schema_version": 1, "seed": 1, "measure": {"amplitude": {"kind": "tilted", "kappa": 0.5}}}"#, 1),
    ];
    for (i, (text, code)) in cases.iter().enumerate() {
        let cfg = write_config(dir, &format!("c{i}.json"), text);
        let out = dir.join(format!("out{i}"));
        let o = levyfbsde(&["check-measure", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(*code), "{text}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(dir.join("out0/check_measure.json").exists());
    assert!(dir.join("out0/manifest.json").exists());
}

#[test]
fn corrupted_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    for (i, text) in ["{ not json", r#"{"schema_version": 1}"#, r#"{"schema_version": 1, "seed": 1, "paths": 5}"#].iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), text);
        let o = levyfbsde(&["verify", "--config", &cfg, "--out", tmp.path().join("v").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
    }
    let o = levyfbsde(&["report", "--out", tmp.path().join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reduced_paths_are_underpowered() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = levyfbsde(&["verify", "--paths", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stdout));
    let results = read_results(&out).unwrap();
    assert_eq!(results.criteria.len(), 10);
    for r in &results.criteria {
        let expected = if (3..=9).contains(&r.id) { Status::Underpowered } else { Status::Pass };
        assert_eq!(r.status, expected, "criterion {}", r.id);
    }
    let o = levyfbsde(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("UNDERPOWERED"));
}

/// Criterion 10 end to end: two `verify` runs with the same seed, one of
/// them on a single worker, write byte-identical CSV files.
#[test]
fn verify_twice_gives_identical_csv_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = levyfbsde(&["verify", "--paths", "2000", "--seed", "11", "--out", a.to_str().unwrap()]);
    let second = levyfbsde(&["verify", "--paths", "2000", "--seed", "11", "--threads", "1", "--out", b.to_str().unwrap()]);
    assert_eq!(first.status.code(), second.status.code());
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert!(fa.len() >= 10);
    assert_eq!(fa, fb);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert!(manifest["artifacts"].as_array().unwrap().len() > fa.len());
    let other = levyfbsde(&["verify", "--paths", "2000", "--seed", "12", "--out", tmp.path().join("c").to_str().unwrap()]);
    assert!(other.status.code().is_some());
    assert_ne!(csv_files(&tmp.path().join("c")), fa);
}

#[test]
fn gradient_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let zero = write_config(dir, "zero.json", r#"{"schema_version": 1, "seed": 2, "x": [0.3], "h": [0.0], "estimator": {"n_paths": 200}}"#);
    let o = levyfbsde(&["estimate-gradient", "--config", &zero, "--out", dir.join("zero").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let rows = fs::read_to_string(dir.join("zero/gradients.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(rows.as_bytes());
    let values: Vec<f64> = reader.records().map(|r| r.unwrap()[4].parse().unwrap()).collect();
    assert_eq!(values, vec![0.0; 3]);

    let kinked = write_config(dir, "kinked.json", r#"{"schema_version": 1, "seed": 2, "model": "kinked-terminal", "x": [0.3], "estimator": {"n_paths": 400}}"#);
    let o = levyfbsde(&["estimate-gradient", "--config", &kinked, "--out", dir.join("kinked").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let report = fs::read_to_string(dir.join("kinked/gradient_report.json")).unwrap();
    assert!(report.contains("capability error") || report.contains("differentiable"));
    assert_eq!(fs::read_to_string(dir.join("kinked/gradients.csv")).unwrap().lines().count(), 3);
}

#[test]
fn solve_and_simulate_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(
        dir,
        "pde.json",
        r#"{"schema_version": 1, "seed": 4, "model": "additive+linear-driver:0.5+smooth-terminal",
            "grid": {"half_width": 3.0, "nodes_per_axis": 13, "slices": 4, "paths_per_node": 100, "deterministic_nodes": 81}}"#,
    );
    let o = levyfbsde(&["solve-pde", "--config", &cfg, "--out", dir.join("pde").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.join("pde/value_function.csv")).unwrap();
    let v = levyfbsde_core::bsde_engine::ValueFunction::<1>::read(text.as_bytes()).unwrap();
    assert_eq!(v.times.len(), 5);

    let o = levyfbsde(&["simulate-forward", "--config", &cfg, "--paths", "100", "--out", dir.join("sim").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(dir.join("sim/path_0.csv").exists());
    assert_eq!(fs::read_to_string(dir.join("sim/moments.csv")).unwrap().lines().count(), 4);
}
