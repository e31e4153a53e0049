use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn gpbec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpbec")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gpbec-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn expand_order_four_counts_384() {
    let out = gpbec(&["expand", "--order", "4", "--validate"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["payload"]["count"], 384);
    assert_eq!(v["payload"]["validation"]["violations"].as_array().unwrap().len(), 0);
    assert_eq!(v["command"], "expand");
    assert_eq!(v["schema_version"], 1);
    assert!(v["versions"]["gpbec"].is_string());
}

#[test]
fn expand_dump_lists_every_term() {
    let v = json(&gpbec(&["expand", "--order", "2", "--dump"]));
    let terms = v["payload"]["terms"].as_array().unwrap();
    assert_eq!(terms.len(), 8);
    assert!(terms.iter().all(|t| t.as_str().unwrap().contains("P1(")));
}

#[test]
fn free_scattering_is_zero() {
    let out = gpbec(&["scattering", "--kappa", "0", "--residual"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["payload"]["a0"], 0.0);
    assert_eq!(v["payload"]["lambda_ell"], 0.0);
    assert!(v["payload"]["eta"].as_array().unwrap().iter().all(|e| e["value"] == 0.0));
}

#[test]
fn verify_passes_and_injected_fault_fails() {
    let ok = gpbec(&["verify", "--pmax", "1", "--n", "3", "--kappa", "0.05"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(json(&ok)["payload"]["passed"], true);
    let bad = gpbec(&["verify", "--pmax", "1", "--n", "3", "--kappa", "0.05", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(json(&bad)["payload"]["passed"], false);
    assert!(!bad.stderr.is_empty());
}

#[test]
fn configuration_errors_exit_two() {
    for args in [
        &["scattering", "--ell", "0.6"][..],
        &["spectrum", "--pmax", "0"],
        &["scattering", "--kappa", "-1"],
        &["expand", "--order", "9"],
        &["scan", "--n-range", "5..2"],
        &["scattering", "--potential", "square"],
        &["frobnicate"],
    ] {
        let out = gpbec(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(gpbec(&["--help"]).status.code(), Some(0));
    assert_eq!(gpbec(&["--version"]).status.code(), Some(0));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = scratch("cfg");
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "kappa = 0.1\nell = 0.3\nn = 5\n").unwrap();
    let v = json(&gpbec(&["scattering", "--config", cfg.to_str().unwrap(), "--ell", "0.25"]));
    assert_eq!(v["config"]["kappa"], 0.1);
    assert_eq!(v["config"]["ell"], 0.25);
    assert_eq!(v["config"]["n"], 5);

    std::fs::write(&cfg, "kapa = 0.1\n").unwrap();
    assert_eq!(gpbec(&["scattering", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn scan_csv_has_fixed_header_and_one_row_per_n() {
    let out = gpbec(&["scan", "--n-range", "2..3", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "N,kappa,pmax,E0,E0_minus_4pi_a0_N,depletion,N_times_depletion,vac_GN_offset,C_lo,C_mid,C_hi"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,0.05,1,"));
    assert!(lines[1].ends_with(",,,"));
}

#[test]
fn plot_data_marks_missing_values() {
    let out = gpbec(&["scan", "--n-range", "2", "--plot-data"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# "));
    let row = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(row.split_whitespace().count(), 11);
    assert!(row.ends_with("? ? ?"));
}

#[test]
fn spectrum_agrees_across_pictures_and_dumps_operator() {
    let dir = scratch("spec");
    let dump = dir.join("h.txt");
    let h = json(&gpbec(&["spectrum", "--n", "3", "--k", "2", "--dump-operator", dump.to_str().unwrap()]));
    let l = json(&gpbec(&["spectrum", "--n", "3", "--k", "2", "--picture", "excitation"]));
    let e = |v: &Value| v["payload"]["spectrum"]["eigenvalues"][0].as_f64().unwrap();
    assert!((e(&h) - e(&l)).abs() < 1e-8);
    assert_eq!(h["payload"]["condensate_chain"]["holds"], true);
    let text = std::fs::read_to_string(&dump).unwrap();
    assert!(text.lines().count() > 58);
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn sandwich_reports_constants_per_n() {
    let v = json(&gpbec(&["sandwich", "--n-range", "2..3"]));
    let rows = v["payload"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r["c_lo"].as_f64().unwrap() >= 0.0);
        assert!(r["c_hi"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn identical_runs_are_byte_identical_apart_from_timestamp() {
    let strip = |o: Output| {
        String::from_utf8(o.stdout)
            .unwrap()
            .lines()
            .filter(|l| !l.contains("\"timestamp\""))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let args = ["spectrum", "--n", "3", "--k", "2", "--seed", "11"];
    assert_eq!(strip(gpbec(&args)), strip(gpbec(&args)));
    let single = ["spectrum", "--n", "3", "--k", "2", "--seed", "11", "--threads", "1"];
    let a = json(&gpbec(&args));
    let b = json(&gpbec(&single));
    assert_eq!(a["payload"], b["payload"]);
}
