use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const MINIMAL: &str = r#"
[spectrum]
exponent = 0.0
amplitude = 1.0
cut_hz = 10.0

[schedule]
n_cycles = 10
ramsey = 0.5
dead_time = 0.5

[[controllers]]
kind = "free_run"

[ensemble]
size = 10
seed = 1
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn hffclock(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hffclock"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("HFFCLOCK_SEED")
        .env_remove("HFFCLOCK_WORKERS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// JSON payload of an output file, without the manifest wrapper.
fn data(path: &Path) -> Value {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["data"].clone()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn minimal_simulate_writes_ten_realization_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let out = tmp.path().join("out");
    let o = hffclock(&cfg, &out, &["simulate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let curve = std::fs::read_to_string(out.join("curve_free_run.csv")).unwrap();
    let mut lines = curve.lines();
    assert!(lines.next().unwrap().starts_with("# manifest=manifest.json config_sha256="));
    assert_eq!(lines.next().unwrap(), "N,mean,std_error");
    assert_eq!(lines.count(), 9);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["ensemble_size"], 10);
    assert_eq!(manifest["command"], "simulate");
}

#[test]
fn same_config_and_seed_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(hffclock(&cfg, &a, &["simulate"]).status.code(), Some(0));
    assert_eq!(hffclock(&cfg, &b, &["--workers", "1", "simulate"]).status.code(), Some(0));
    assert_eq!(files(&a), files(&b));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    hffclock(&cfg, &a, &["simulate"]);
    hffclock(&cfg, &b, &["--seed", "2", "simulate"]);
    let curve = |d: &Path| std::fs::read(d.join("curve_free_run.csv")).unwrap();
    assert_ne!(curve(&a), curve(&b));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 2);
}

#[test]
fn duty_factor_above_one_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("ramsey = 0.5\ndead_time = 0.5", "ramsey = 0.5\nduty_factor = 1.5\ncycle_time = 1.0");
    let cfg = write_config(tmp.path(), &text);
    let o = hffclock(&cfg, &tmp.path().join("out"), &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schedule.duty_factor"), "{}", stderr(&o));
}

#[test]
fn unknown_axis_lists_valid_axes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let o = hffclock(&cfg, &tmp.path().join("out"), &["sweep", "--axis", "temperature", "--values", "1,2"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    for axis in hffclock::cli::valid_axes() {
        assert!(msg.contains(axis), "{msg}");
    }
}

#[test]
fn missing_seed_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &MINIMAL.replace("seed = 1\n", ""));
    let o = hffclock(&cfg, &tmp.path().join("out"), &["simulate"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn zero_spectrum_is_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &MINIMAL.replace("amplitude = 1.0", "amplitude = 0.0"));
    let o = hffclock(&cfg, &tmp.path().join("out"), &["covariance"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("degenerate spectrum"), "{}", stderr(&o));
}

#[test]
fn white_disjoint_windows_are_nearly_uncorrelated() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("cut_hz = 10.0", "cut_hz = 1000.0")
        + "\n[covariance]\nwindows = [[0.0, 1.0], [1.5, 2.5]]\nt_c = 3.0\n";
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = hffclock(&cfg, &out, &["covariance"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = &data(&out.join("covariance.json"))["blocks"]["m"];
    let at = |i: usize, j: usize| m[i][j].as_f64().unwrap();
    let r = at(0, 1) / (at(0, 0) * at(1, 1)).sqrt();
    assert!(r.abs() < 0.05, "correlation {r}");
    assert!(out.join("pair_tf.csv").exists());
}

#[test]
fn spur_only_pair_reports_vanishing_min_eigenvalue() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("amplitude = 1.0", "amplitude = 0.0")
        + "\n[[spectrum.spurs]]\nhz = 0.3\npower = 1.0\n\n[covariance]\nwindows = [[0.0, 1.0], [2.0, 3.0]]\nt_c = 4.0\n";
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = hffclock(&cfg, &out, &["covariance"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let blocks = &data(&out.join("covariance.json"))["blocks"];
    let trace = blocks["m"][0][0].as_f64().unwrap() + blocks["m"][1][1].as_f64().unwrap();
    assert!(blocks["min_eigenvalue"].as_f64().unwrap().abs() < 1e-9 * trace);
}

#[test]
fn accuracy_reports_free_run_as_one() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("size = 10", "size = 200") + "\n[[controllers]]\nkind = \"feedback\"\n";
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = hffclock(&cfg, &out, &["accuracy"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mc = &data(&out.join("accuracy.json"))["monte_carlo"];
    assert_eq!(mc["free_run"]["accuracy"], 1.0);
    assert!(mc["feedback"]["accuracy"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_from_flags_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("size = 10", "size = 200").replace("kind = \"free_run\"", "kind = \"feedback\"");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = hffclock(&cfg, &out, &["--format", "json", "sweep", "--axis", "duty_factor", "--values", "0.5,1.0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = data(&out.join("sweep.json"));
    assert_eq!(table["axis"], "duty_factor");
    assert!(!table["rows"].as_array().unwrap().is_empty());
    let listed = hffclock::cli::manifest_outputs(&out.join("manifest.json")).unwrap();
    assert_eq!(listed, vec!["sweep.json".to_string()]);
}

#[test]
fn unknown_subcommand_exits_two() {
    let o = Command::new(env!("CARGO_BIN_EXE_hffclock")).arg("plot").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
