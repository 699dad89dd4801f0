use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn seqtn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqtn")).args(args).env_remove("SEQTN_THREADS").output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(seqtn(&["--help"]).status.code(), Some(0));
    assert_eq!(seqtn(&["bogus"]).status.code(), Some(2));
    assert_eq!(seqtn(&["transfer1d", "build"]).status.code(), Some(2));
    assert_eq!(seqtn(&["transfer1d", "build", "--k", "2", "--rho", "(1 5)"]).status.code(), Some(2));
}

#[test]
fn weingarten_table_values() {
    let v = stdout_json(&seqtn(&["wg", "table", "--k", "3", "--q", "3"]));
    assert_eq!(v["manifest"]["subcommand"], "wg table");
    let w = &v["result"]["values"];
    assert_eq!(w["1,1,1"]["num"], "7");
    assert_eq!(w["1,1,1"]["den"], "120");
    assert_eq!(w["2,1"]["num"], "-1");
    assert_eq!(w["3"]["den"], "60");
}

#[test]
fn two_replica_transfer_matrix() {
    let v = stdout_json(&seqtn(&["transfer1d", "build", "--k", "2", "--d", "2", "--D", "2"]));
    let m = &v["result"]["matrix"];
    assert_eq!(v["result"]["basis"][1], "(1 2)");
    assert_eq!((m[0][1]["num"].as_str(), m[0][1]["den"].as_str()), (Some("2"), Some("5")));
    assert_eq!((m[1][1]["num"].as_str(), m[1][1]["den"].as_str()), (Some("2"), Some("5")));
    assert_eq!(m[1][0]["num"], "0");
}

#[test]
fn structural_check_exit_codes() {
    assert_eq!(seqtn(&["transfer1d", "check", "--k", "3"]).status.code(), Some(0));
    assert_eq!(seqtn(&["transfer1d", "check", "--k", "5"]).status.code(), Some(1));
}

#[test]
fn correlation_length_grid() {
    let out = seqtn(&["spectra", "xi", "--dim", "1d", "--grid", "2..2:2..3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "d,D,lambda2,xi,zeta");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("2,2,0.4,"));
}

#[test]
fn ensemble_run_then_fit_writes_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "# decay of the HS norm\ngeometry=mps\nd=2\nD=2\nc=1\na=1\nb=1\nf=1\nr=1,2,3\nmeasure=hs_norm\n").unwrap();
    let run = dir.path().join("run.json");
    let out = seqtn(&["ensemble", "run", "--config", config.to_str().unwrap(), "--seed", "3", "--samples", "60", "--out", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let v = read_json(&run);
    let records = v["records"].as_array().unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r["samples"] == 60 && r["mean"].as_f64().unwrap() > 0.0));
    let manifest = read_json(&dir.path().join("run.manifest.json"));
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["subcommand"], "ensemble run");
    assert!(std::fs::read_to_string(dir.path().join("run.csv")).unwrap().contains("manifest"));

    // same seed, same numbers
    let again = dir.path().join("again.json");
    let out = seqtn(&["ensemble", "run", "--config", config.to_str().unwrap(), "--seed", "3", "--samples", "60", "--out", again.to_str().unwrap(), "--threads", "1"]);
    assert!(out.status.success());
    assert_eq!(read_json(&again)["records"], v["records"]);

    let fit = dir.path().join("fit.json");
    let svg = dir.path().join("fit.svg");
    let out = seqtn(&["ensemble", "fit", "--input", run.to_str().unwrap(), "--out", fit.to_str().unwrap(), "--svg", svg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let f = read_json(&fit);
    assert!(f["xi_hat"].as_f64().unwrap() > 0.0);
    assert!((f["xi_closed_form"].as_f64().unwrap() - 1.0913566679372915).abs() < 1e-12);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    assert!(dir.path().join("fit.manifest.json").exists());
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.cfg");
    std::fs::write(&config, "geometry=torus\n").unwrap();
    let json = dir.path().join("bad.json");
    let out = seqtn(&["ensemble", "run", "--config", config.to_str().unwrap(), "--samples", "10", "--out", json.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("torus"));
    assert!(!json.exists());
}

#[test]
fn two_dimensional_spectrum() {
    let v = stdout_json(&seqtn(&["transfer2d", "spectrum", "--k", "2", "--h", "2"]));
    let r = &v["result"];
    assert!((r["lambda2"].as_f64().unwrap() - 4.0 / 21.0).abs() < 1e-10);
    assert_eq!(r["mult2"], 1);
}
