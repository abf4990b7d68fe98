use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use odefit::io::{read_csv, read_dataset, read_params};
use odefit::models::{hiv_system, simulate_dataset, Scenario, ScenarioId};
use odefit::study::sigma2_emp_from_file;

fn odefit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odefit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn odefit")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(odefit(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(odefit(&["--version"], dir.path()).status.code(), Some(0));
    assert_eq!(odefit(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(odefit(&["fit", "--seed", "x"], dir.path()).status.code(), Some(1));
    // fit without --data
    assert_eq!(odefit(&["fit"], dir.path()).status.code(), Some(1));
    // missing file is an I/O failure
    assert_eq!(odefit(&["fit", "--data", "nope.csv"], dir.path()).status.code(), Some(3));
}

#[test]
fn simulate_writes_forty_rows_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    ok(&odefit(&["simulate", "--out", "run", "--seed", "4"], dir.path()));
    let data = dir.path().join("run/data.csv");
    let (header, rows) = read_csv(&data).unwrap();
    assert_eq!(header, ["time", "y1", "y2", "sd1", "sd2"]);
    assert_eq!(rows.len(), 40);
    let meta = fs::read_to_string(dir.path().join("run/data.meta")).unwrap();
    assert!(meta.contains("seed = 4"));
    assert!(meta.contains("scenario = i"));
}

#[test]
fn noiseless_simulation_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), "scenario.id = iv\nscenario.noise_fraction = 0\n").unwrap();
    ok(&odefit(&["simulate", "--config", "cfg.txt", "--out", "."], dir.path()));
    let read = read_dataset(&dir.path().join("data.csv")).unwrap();
    let mut sc = Scenario::hiv(ScenarioId::IV);
    sc.noise_fraction = 0.0;
    let direct = simulate_dataset(&hiv_system(), &sc, 0.005, 0).unwrap();
    assert_eq!(read.times, direct.times);
    for (a, b) in read.observations.iter().zip(&direct.observations) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn fit_is_deterministic_and_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    ok(&odefit(&["simulate", "--seed", "11"], dir.path()));
    ok(&odefit(&["fit", "--data", "data.csv", "--seed", "3", "--out", "a"], dir.path()));
    ok(&odefit(&["fit", "--data", "data.csv", "--seed", "3", "--out", "b", "--threads", "1"], dir.path()));
    for f in ["params.csv", "trace.csv", "eta_hat.csv", "pseudo_info.csv", "report.txt"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let params = read_params(&dir.path().join("a/params.csv")).unwrap();
    let names: Vec<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["lambda", "N", "c", "eta"]);
    let lambda = params[0].1;
    assert!((lambda - 36.0).abs() < 5.0, "lambda = {lambda}");
    let (header, _) = read_csv(&dir.path().join("a/pseudo_info.csv")).unwrap();
    assert_eq!(header, ["param", "estimate", "variance", "se"]);
}

#[test]
fn malformed_data_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "time,y1,y2\n0.5,6.1,10.2\n1.0,abc,9.7\n").unwrap();
    let out = odefit(&["fit", "--data", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3"), "stderr: {err}");

    fs::write(dir.path().join("short.csv"), "time,y1,y2\n0.5,6.1,10.2\n1.0,6.0\n").unwrap();
    let out = odefit(&["fit", "--data", "short.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));
}

#[test]
fn malformed_config_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), "solver.h = 0.05\nsolver.hh = 1\n").unwrap();
    let out = odefit(&["simulate", "--config", "cfg.txt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn bootstrap_requires_fifty_replicates() {
    let dir = tempfile::tempdir().unwrap();
    ok(&odefit(&["simulate"], dir.path()));
    let out = odefit(&["bootstrap", "--data", "data.csv", "--replicates", "49"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("intervals.csv").exists());
}

#[test]
fn bootstrap_from_saved_estimates() {
    let dir = tempfile::tempdir().unwrap();
    ok(&odefit(&["simulate", "--seed", "2"], dir.path()));
    ok(&odefit(&["fit", "--data", "data.csv"], dir.path()));
    ok(&odefit(
        &["bootstrap", "--data", "data.csv", "--base", "params.csv", "--replicates", "50", "--out", "bs"],
        dir.path(),
    ));
    let (header, rows) = read_csv(&dir.path().join("bs/intervals.csv")).unwrap();
    assert_eq!(header, ["param", "lo", "hi"]);
    assert_eq!(rows.len(), 4);
    let params = read_params(&dir.path().join("params.csv")).unwrap();
    for (r, (_, est)) in rows.iter().zip(&params) {
        let lo: f64 = r[1].parse().unwrap();
        let hi: f64 = r[2].parse().unwrap();
        assert!(lo < hi);
        assert!(lo <= *est * 1.05 && *est * 0.95 <= hi, "{r:?} vs {est}");
    }
    let (_, reps) = read_csv(&dir.path().join("bs/bootstrap_replicates.csv")).unwrap();
    assert_eq!(reps.len(), 50);

    // base parameters must match the configured model
    fs::write(dir.path().join("wrong.csv"), "param,estimate\nlambda,36\n").unwrap();
    let out = odefit(
        &["bootstrap", "--data", "data.csv", "--base", "wrong.csv", "--replicates", "50"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn select_writes_sixteen_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), "scenario.id = iv\n").unwrap();
    ok(&odefit(&["simulate", "--config", "cfg.txt"], dir.path()));
    ok(&odefit(&["select", "--config", "cfg.txt", "--data", "data.csv"], dir.path()));
    let (header, rows) = read_csv(&dir.path().join("selection.csv")).unwrap();
    assert_eq!(header, ["order", "knots", "aicc"]);
    assert_eq!(rows.len(), 16);
    let vals: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(vals.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn order_check_reports_slopes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&odefit(&["order-check"], dir.path()));
    let (header, rows) = read_csv(&dir.path().join("order.csv")).unwrap();
    assert_eq!(header, ["method", "probe", "slope"]);
    for r in &rows {
        let slope: f64 = r[2].parse().unwrap();
        let expected = if r[0] == "rk4" { 4.0 } else { 1.0 };
        assert!((slope - expected).abs() <= 0.3, "{r:?}");
    }
}

#[test]
fn ident_check_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    ok(&odefit(&["ident-check"], dir.path()));
    let (header, rows) = read_csv(&dir.path().join("ident.csv")).unwrap();
    assert_eq!(header, ["time", "eta_cd4", "eta_viral", "flag"]);
    assert_eq!(rows.len(), 401);
    let (header, rows) = read_csv(&dir.path().join("ident_perturbed.csv")).unwrap();
    assert_eq!(header, ["param", "factor", "max_gap"]);
    assert_eq!(rows.len(), 10);
}

#[test]
fn study_variance_recomputes_from_replicates() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), "study.magnitudes = small\n").unwrap();
    ok(&odefit(&["study", "--config", "cfg.txt", "--replicates", "10", "--seed", "5"], dir.path()));
    let recomputed = sigma2_emp_from_file(&dir.path().join("study_replicates.csv")).unwrap();
    let (_, rows) = read_csv(&dir.path().join("study_variance.csv")).unwrap();
    assert_eq!(rows.len(), 4 * 3);
    assert_eq!(recomputed.len(), 4);
    let params = ["lambda", "N", "c"];
    for r in &rows {
        let key = (r[0].clone(), r[1].clone(), r[2].clone());
        let (_, _, _, v) = recomputed
            .iter()
            .find(|(m, t, f, _)| (m, t, f) == (&key.0, &key.1, &key.2))
            .unwrap();
        let j = params.iter().position(|p| *p == r[3]).unwrap();
        let written: f64 = r[5].parse().unwrap();
        assert_eq!(written.to_bits(), v[j].to_bits(), "{r:?} vs {}", v[j]);
    }
}
