use std::path::Path;
use std::process::{Command, Output};

use meshpsn_cli::Summary;
use serde_json::Value;

fn meshpsn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshpsn"))
        .args(args)
        .env_remove(meshpsn_cli::CONFIG_ENV)
        .output()
        .expect("binary runs")
}

fn records(text: &[u8]) -> Vec<Value> {
    std::str::from_utf8(text)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("one JSON object per line"))
        .collect()
}

fn of_kind<'a>(recs: &'a [Value], kind: &str) -> Vec<&'a Value> {
    recs.iter().filter(|r| r["record"] == kind).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn summary(recs: &[Value]) -> Summary {
    serde_json::from_value(of_kind(recs, "summary")[0].clone()).unwrap()
}

#[test]
fn simulate_summary_conserves_flits() {
    let out = meshpsn(&["simulate", "--cycles", "100", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let recs = records(&out.stdout);
    assert_eq!(recs[0]["record"], "header");
    assert_eq!(recs[0]["seed"], 4);
    assert_eq!(recs[0]["config_digest"].as_str().unwrap().len(), 16);
    assert_eq!(of_kind(&recs, "cycle").len(), 100);
    let s = summary(&recs);
    assert!(s.conserved);
    assert_eq!(s.injected, s.consumed + s.in_flight);
    assert!(s.injected > 0);
}

#[test]
fn simulate_same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<String> = ["a", "b", "c"]
        .iter()
        .map(|n| dir.path().join(n).to_str().unwrap().to_owned())
        .collect();
    for (p, seed) in paths.iter().zip(["7", "7", "8"]) {
        let out = meshpsn(&[
            "simulate",
            "--mesh",
            "3",
            "--cycles",
            "300",
            "--seed",
            seed,
            "--trace-out",
            p,
        ]);
        assert_eq!(out.status.code(), Some(0));
        // Only the summary goes to stdout when the trace goes to a file.
        assert_eq!(records(&out.stdout).len(), 1);
    }
    let read = |p: &String| std::fs::read(p).unwrap();
    assert_eq!(read(&paths[0]), read(&paths[1]));
    assert_ne!(read(&paths[0]), read(&paths[2]));
}

#[test]
fn simulate_zero_cycles() {
    let out = meshpsn(&["simulate", "--cycles", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let recs = records(&out.stdout);
    assert!(of_kind(&recs, "cycle").is_empty());
    let s = summary(&recs);
    assert_eq!(
        (s.injected, s.consumed, s.in_flight, s.resistive, s.inductive),
        (0, 0, 0, 0, 0)
    );
}

#[test]
fn flags_override_file_and_env_supplies_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "noc.toml",
        "n = 3\nbuffer_size = 2\n[periodic]\nduty_on = 2\nperiod = 8\n",
    );
    let out = Command::new(env!("CARGO_BIN_EXE_meshpsn"))
        .args(["simulate", "--cycles", "1", "--buffer-size", "3"])
        .env(meshpsn_cli::CONFIG_ENV, &cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let header = &records(&out.stdout)[0];
    assert_eq!(header["config"]["n"], 3);
    assert_eq!(header["config"]["buffer_size"], 3);
    assert_eq!(header["config"]["periodic"]["period"], 8);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "a.toml", "traffic = \"poisson\"\n");
    let broken = write(dir.path(), "b.toml", "n = [\n");
    for args in [
        vec!["simulate", "-c", unknown.as_str()],
        vec!["simulate", "-c", broken.as_str()],
        vec!["simulate", "-c", "/nonexistent/noc.toml"],
        vec!["simulate", "--mesh", "1"],
        vec!["smc", "--scope", "class:central"],
        vec!["smc", "-N", "5..1:0"],
        vec!["check", "--properties", "liveness"],
    ] {
        let out = meshpsn(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn engine_fault_exits_3_with_trace_context() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "m.toml",
        "buffer_size = 1\nmutation = \"ignore_full_snapshot\"\n",
    );
    let out = meshpsn(&["simulate", "-c", &cfg, "--cycles", "500"]);
    assert_eq!(out.status.code(), Some(3));
    let recs = records(&out.stdout);
    let fault = of_kind(&recs, "fault");
    assert_eq!(fault.len(), 1);
    assert_eq!(
        of_kind(&recs, "cycle").len() as u64,
        fault[0]["cycle"].as_u64().unwrap()
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("engine fault"));
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config="));
    assert_eq!(
        lines.next().unwrap(),
        "kind,K,N,p_hat,ci_low,ci_high,runs,confidence,seed"
    );
    lines.map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

fn p_hat(rows: &[Vec<String>], kind: &str, k: &str, n: &str) -> f64 {
    let row = rows
        .iter()
        .find(|r| r[0] == kind && r[1] == k && r[2] == n)
        .expect("row present");
    row[3].parse().unwrap()
}

#[test]
fn smc_zero_threshold_is_certain() {
    let out = meshpsn(&["smc", "-K", "0,2", "-N", "0,15", "--runs", "50"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(std::str::from_utf8(&out.stdout).unwrap());
    assert_eq!(rows.len(), 2 * 2 * 2);
    for kind in ["resistive", "inductive"] {
        assert_eq!(p_hat(&rows, kind, "0", "0"), 1.0);
        assert_eq!(p_hat(&rows, kind, "0", "15"), 1.0);
    }
}

#[test]
fn smc_output_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, jobs) in [(&a, "1"), (&b, "3")] {
        let out = meshpsn(&[
            "smc",
            "--runs",
            "300",
            "--seed",
            "11",
            "--jobs",
            jobs,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn smc_default_cdf_grows_in_injection_windows() {
    let out = meshpsn(&[
        "smc",
        "--kind",
        "resistive",
        "-K",
        "10",
        "-N",
        "0..=59",
        "--runs",
        "2000",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(std::str::from_utf8(&out.stdout).unwrap());
    let p: Vec<f64> = (0..60)
        .map(|n| p_hat(&rows, "resistive", "10", &n.to_string()))
        .collect();
    let (mut on, mut off) = (0.0, 0.0);
    for c in 1..60 {
        if c % 10 <= 5 {
            on += p[c] - p[c - 1];
        } else {
            off += p[c] - p[c - 1];
        }
    }
    assert!(on > 0.5, "on-window growth {on}");
    assert!(off < 0.25 * on, "off-window growth {off} vs {on}");
}

#[test]
fn smc_central_class_dominates_corner() {
    let run = |scope: &str| {
        let out = meshpsn(&[
            "smc",
            "--mesh",
            "3",
            "--scope",
            scope,
            "--kind",
            "resistive",
            "-K",
            "1,3",
            "-N",
            "0..=30:5",
            "--runs",
            "1000",
        ]);
        assert_eq!(out.status.code(), Some(0));
        csv_rows(std::str::from_utf8(&out.stdout).unwrap())
    };
    let central = run("class:central");
    let corner = run("class:corner");
    for (c, k) in central.iter().zip(&corner) {
        assert_eq!(c[..3], k[..3]);
        assert!(
            c[3].parse::<f64>().unwrap() >= k[3].parse::<f64>().unwrap(),
            "{c:?} vs {k:?}"
        );
    }
}

#[test]
fn check_reduced_model_holds() {
    let out = meshpsn(&["check", "--buffer-size", "1", "--duty-on", "1", "--period", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let recs = records(&out.stdout);
    let verdicts = of_kind(&recs, "verdict");
    assert_eq!(verdicts.len(), 5);
    assert!(verdicts.iter().all(|v| v["verdict"] == "holds"));
    assert_eq!(summary_complete(&recs), Some(true));
}

fn summary_complete(recs: &[Value]) -> Option<bool> {
    of_kind(recs, "summary").first().and_then(|s| s["complete"].as_bool())
}

#[test]
fn check_broken_arbiter_gives_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "m.toml",
        "buffer_size = 1\nmutation = \"broken_arbiter\"\n[periodic]\nduty_on = 1\nperiod = 5\n",
    );
    let out = meshpsn(&["check", "-c", &cfg, "--properties", "priority_permutation"]);
    assert_eq!(out.status.code(), Some(1));
    let recs = records(&out.stdout);
    let v = of_kind(&recs, "verdict");
    assert_eq!(v[0]["verdict"], "violated");
    // The counterexample is printed as a replayed trace of the stated length.
    let cycles = of_kind(&recs, "cycle");
    assert_eq!(cycles.len() as u64, v[0]["counterexample_cycles"].as_u64().unwrap());
    assert!(cycles.iter().enumerate().all(|(i, c)| c["cycle"] == i));
}

#[test]
fn check_budget_exhaustion_exits_4() {
    let out = meshpsn(&["check", "--max-states", "10"]);
    assert_eq!(out.status.code(), Some(4));
    let recs = records(&out.stdout);
    assert!(of_kind(&recs, "verdict").iter().all(|v| v["verdict"] == "inconclusive"));
    assert_eq!(summary_complete(&recs), Some(false));
}
