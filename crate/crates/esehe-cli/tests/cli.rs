use std::path::Path;
use std::process::{Command, Output};

fn esehe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esehe"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ESEHE_OUT")
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn unknown_verb_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esehe(&["frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn simulate_writes_the_three_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esehe(
        &["simulate", "--preset", "steady", "--duration", "0.2", "--out", "run", "--plots"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got = files(&tmp.path().join("run"));
    for f in ["trajectory.csv", "summary.csv", "events.csv", "vdc.svg"] {
        assert!(got.contains(&f.to_string()), "{f} missing from {got:?}");
    }
    // nothing outside --out
    assert_eq!(files(tmp.path()), vec!["run".to_string()]);
}

#[test]
fn simulate_is_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |dir: &'static str| {
        vec![
            "simulate",
            "--preset",
            "high_volatility",
            "--duration",
            "0.5",
            "--seed",
            "3",
            "--out",
            dir,
        ]
    };
    assert!(esehe(&args("a"), tmp.path()).status.success());
    assert!(esehe(&args("b"), tmp.path()).status.success());
    for f in ["trajectory.csv", "summary.csv", "events.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn bad_config_exits_2_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "duration = -1.0\n").unwrap();
    let out = esehe(&["simulate", "--config", "bad.toml", "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(!tmp.path().join("run").exists());

    std::fs::write(tmp.path().join("typo.toml"), "durration = 1.0\n").unwrap();
    let out = esehe(&["simulate", "--config", "typo.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esehe(&["simulate", "--config", "nope.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    // 5 ms steps are far too coarse for the stack branch
    std::fs::write(tmp.path().join("d.toml"), "duration = 0.5\nstep = 5e-3\nmax_step = 5e-3\n").unwrap();
    let out = esehe(&["simulate", "--config", "d.toml", "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn linearize_writes_locus_and_reports_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esehe(
        &["linearize", "--sweep", "I_stack0:1000:5000:20", "--out", "lin", "--plots"],
        tmp.path(),
    );
    assert!(out.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("lin/rootlocus_I_stack0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.starts_with("I_stack0,re1,im1"));
    assert!(tmp.path().join("lin/rootlocus_I_stack0.svg").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("stable"));

    let bad = esehe(&["linearize", "--sweep", "I_stack0:1:2"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn econ_reports_table_totals() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esehe(&["econ", "--out", "econ"], tmp.path());
    assert!(out.status.success());
    let cost = std::fs::read_to_string(tmp.path().join("econ/cost.csv")).unwrap();
    assert!(cost.contains("Total capacity,11.9400,11.1"), "{cost}");
    for f in ["degradation.csv", "losses.csv", "lifecycle.csv", "cost.txt"] {
        assert!(tmp.path().join("econ").join(f).exists(), "{f}");
    }
}

#[test]
fn sensitivity_sweep_writes_four_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esehe(&["sweep", "--sensitivity", "--points", "5", "--jobs", "2", "--out", "sw"], tmp.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("sw/sensitivity.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 5);
}

#[test]
fn scenario_sweep_fans_out_over_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("s.toml"), "name = \"short\"\nduration = 0.05\n").unwrap();
    let out = esehe(&["sweep", "--config", "s.toml", "--seeds", "1:3", "--jobs", "2", "--out", "sw"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got = files(&tmp.path().join("sw"));
    assert_eq!(got, vec!["short_s1", "short_s2", "short_s3", "summaries.csv"]);
}

#[test]
fn ui_curve_writes_csv_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esehe(&["ui-curve", "--points", "50", "--out", "ui", "--plots"], tmp.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("ui/ui_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    let svg = std::fs::read_to_string(tmp.path().join("ui/ui_curve.svg")).unwrap();
    assert!(svg.contains("<path"));
}

#[test]
fn out_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_esehe"))
        .args(["ui-curve", "--points", "5"])
        .current_dir(tmp.path())
        .env("ESEHE_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("root/ui-curve/ui_curve.csv").exists());
}
