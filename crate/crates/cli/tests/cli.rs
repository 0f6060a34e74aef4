use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.toml"))
}

fn twomode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twomode")).args(args).output().expect("binary runs")
}

fn run_into(name: &str, dir: &Path, extra: &[&str]) -> Output {
    let cfg = config(name);
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--output", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    twomode(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The JSON error record printed on stderr.
fn record(o: &Output) -> Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().rev().find(|l| l.starts_with('{')).expect("error record on stderr");
    serde_json::from_str(line).expect("record is JSON")
}

fn table(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

/// The value following `key:` on the matching report line.
fn field<'a>(report: &'a str, key: &str) -> &'a str {
    let line = report.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no `{key}` in\n{report}"));
    line[key.len()..].trim_start_matches(':').split_whitespace().next().unwrap()
}

#[test]
fn static_well_stays_in_the_ground_configuration() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("out");
    let o = run_into("static_well", &dir, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ok: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(ok["status"], "ok");

    let rows = table(&dir.join("timeseries.csv"));
    assert!(rows.last().unwrap()[0] >= 10.0);
    assert!(rows.iter().all(|r| r[1] < 1e-6));
    let amps = table(&dir.join("amplitudes.csv"));
    assert!(amps.iter().all(|r| r[1] > 1.0 - 1e-6));
    assert!(dir.join("config.effective.toml").exists());
    assert!(dir.join("checkpoint.json").exists());
}

#[test]
fn resume_reproduces_the_uninterrupted_trajectory() {
    let tmp = TempDir::new().unwrap();
    let full = tmp.path().join("full");
    let o = run_into("split", &full, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in ["modes_00000055", "g1_00000055"] {
        assert!(full.join("snapshots").join(format!("{s}.bin")).exists());
    }

    let part = tmp.path().join("part");
    let ck = full.join("checkpoints/step_00000050.json");
    let o = twomode(&["resume", "--checkpoint", ck.to_str().unwrap(), "--output", part.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    for name in ["timeseries.csv", "amplitudes.csv"] {
        let whole = table(&full.join(name));
        let tail = table(&part.join(name));
        assert_eq!(tail.len(), whole.len() - 51);
        for (a, b) in whole[51..].iter().zip(&tail) {
            let gap = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(gap < 1e-10, "{name} at t = {}: {gap:e}", a[0]);
        }
    }
}

#[test]
fn resume_refuses_to_change_the_physics() {
    let tmp = TempDir::new().unwrap();
    let full = tmp.path().join("full");
    assert!(run_into("static_well", &full, &["--override", "output.checkpoint_every=100"]).status.success());
    let ck = full.join("checkpoints/step_00000100.json");
    let o = twomode(&["resume", "--checkpoint", ck.to_str().unwrap(), "--override", "time.dt_s=1e-5"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(record(&o)["violations"][0]["key"], "time.dt_s");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_into("split", &a, &["--seedless"]).status.success());
    assert!(run_into("split", &b, &[]).status.success());
    for name in ["timeseries.csv", "amplitudes.csv", "snapshots/modes_00000110.bin"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn distant_wells_are_in_the_fock_regime() {
    let o = twomode(&["estimate", "--config", config("rb87_far").to_str().unwrap()]);
    assert!(o.status.success());
    let r = stdout(&o);
    let ratio: f64 = field(&r, "J/U closed form").parse().unwrap();
    assert!((ratio.log10() + 7.0).abs() < 1.0, "{ratio}");
    assert_eq!(field(&r, "regime"), "fock");
}

#[test]
fn close_wells_are_in_the_josephson_regime() {
    let o = twomode(&["estimate", "--config", config("rb87_near").to_str().unwrap()]);
    assert!(o.status.success());
    let r = stdout(&o);
    let ratio: f64 = field(&r, "J/U closed form").parse().unwrap();
    assert!((ratio.log10() - 2.0).abs() < 1.0, "{ratio}");
    assert_eq!(field(&r, "regime"), "josephson");
}

#[test]
fn estimate_counts_stored_values() {
    let o = twomode(&["estimate", "--config", config("sizing").to_str().unwrap()]);
    assert!(o.status.success());
    let r = stdout(&o);
    assert_eq!(field(&r, "memory simultaneous"), "2200010");
    assert_eq!(field(&r, "memory trajectory"), "300005000");
}

#[test]
fn estimate_requires_the_well_separation() {
    let o = twomode(&["estimate", "--config", config("static_well").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(record(&o)["violations"][0]["key"], "trap.well_separation_m");
}

#[test]
fn verify_passes() {
    let o = twomode(&["verify", "--max-n", "8"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().last().unwrap().starts_with("PASS"));
}

#[test]
fn odd_atom_number_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = run_into("static_well", &tmp.path().join("out"), &["--override", "atoms.n=7"]);
    assert_eq!(o.status.code(), Some(2));
    let r = record(&o);
    assert_eq!(r["kind"], "config");
    assert_eq!(r["violations"][0]["key"], "atoms.n");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn zero_time_step_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = run_into("static_well", &tmp.path().join("out"), &["--override", "time.dt_s=0.0"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(record(&o)["violations"][0]["key"], "time.dt_s");
}

#[test]
fn every_missing_key_is_reported() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bare.toml");
    fs::write(&path, "schema_version = 1\n[atoms]\nn = 4\n").unwrap();
    let o = twomode(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let keys: Vec<String> =
        record(&o)["violations"].as_array().unwrap().iter().map(|v| v["key"].as_str().unwrap().to_string()).collect();
    for k in ["trap.axial_frequency_hz", "grid.points", "grid.half_width_m", "time.duration_s", "time.dt_s"] {
        assert!(keys.iter().any(|x| x == k), "{k} missing from {keys:?}");
    }
}

#[test]
fn stalled_inner_loop_exits_with_a_numerical_record() {
    let tmp = TempDir::new().unwrap();
    let args = ["--override", "time.inner_cap=1", "--override", "time.inner_tol=1e-15"];
    let o = run_into("split", &tmp.path().join("out"), &args);
    assert_eq!(o.status.code(), Some(3));
    let r = record(&o);
    assert_eq!(r["kind"], "diverged");
    assert!(r["time"].as_f64().unwrap() > 0.0);
    assert!(!r["history"].as_array().unwrap().is_empty());
}

#[test]
fn unwritable_output_exits_with_an_io_record() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = run_into("static_well", &blocker.join("out"), &[]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(record(&o)["kind"], "io");
}

#[test]
fn missing_config_exits_with_an_io_record() {
    let o = twomode(&["run", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(4));
}
