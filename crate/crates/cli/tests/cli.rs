use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bilinear(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilinear"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn column(header: &str, name: &str) -> usize {
    header.split(',').position(|c| c == name).unwrap()
}

#[test]
fn zero_signal_keeps_populations() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "zero.json",
        r#"{"type":"piecewise_constant","breakpoints":[0,0.5,1.0],"values":[0,0]}"#,
    );
    let o = bilinear(
        &["simulate", "--signal", "zero.json", "--out", "z"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("z/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    let p1 = column(header, "pop_1");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!((r[p1] - 1.0).abs() < 1e-15);
    }
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("z/run.json")).unwrap()).unwrap();
    assert_eq!(sidecar["command"], "simulate");
    assert_eq!(sidecar["config"]["model"], "rotor");
    assert!(sidecar["version"].is_string());
    let bounds: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("z/bounds.json")).unwrap())
            .unwrap();
    assert_eq!(bounds["reports"][0]["margin"], 0.0);
}

#[test]
fn malformed_json_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.json", r#"{"type":"piecewise_constant","#);
    let o = bilinear(
        &["simulate", "--signal", "bad.json", "--out", "b"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("JSON"), "{}", stderr(&o));
    write(
        tmp.path(),
        "cfg.json",
        r#"{"model": "rotor", "unknown_key": 1}"#,
    );
    let o = bilinear(
        &["model-dump", "--config", "cfg.json", "--out", "m"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn amplitude_violation_names_the_limit() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "big.json",
        r#"{"type":"piecewise_constant","breakpoints":[0,1],"values":[2]}"#,
    );
    let o = bilinear(
        &[
            "simulate",
            "--model",
            "oscillator",
            "--signal",
            "big.json",
            "--out",
            "a",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("1/‖B‖_A"), "{}", stderr(&o));
}

#[test]
fn degenerate_requests_are_refused() {
    let tmp = TempDir::new().unwrap();
    let o = bilinear(&["galerkin", "--sizes", "4", "--out", "g"], tmp.path());
    assert_eq!(code(&o), 2);
    write(
        tmp.path(),
        "empty.json",
        r#"{"model":"oscillator","levels":[]}"#,
    );
    let o = bilinear(
        &[
            "reproduce-unbounded",
            "--config",
            "empty.json",
            "--out",
            "r",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no target levels"), "{}", stderr(&o));
    let o = bilinear(
        &["ladder", "--target", "3", "--trunc", "5", "--out", "l"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    let o = bilinear(
        &["synthesize", "--samples-per-period", "8", "--out", "s"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn uncoupled_transition_is_a_precondition_error() {
    let tmp = TempDir::new().unwrap();
    let o = bilinear(
        &["synthesize", "--transition", "1,3", "--out", "s"],
        tmp.path(),
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn single_rung_ladder_ends_near_the_peak() {
    let tmp = TempDir::new().unwrap();
    let o = bilinear(
        &[
            "ladder",
            "--target",
            "2",
            "--n",
            "50",
            "--mode",
            "peak",
            "--record-every",
            "100",
            "--out",
            "l",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("l/trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    let last: Vec<f64> = csv
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert!(last[column(header, "pop_2")] >= 0.9);
    let signal = fs::read_to_string(tmp.path().join("l/signal.json")).unwrap();
    assert!(signal.contains("piecewise_constant"));
}

#[test]
fn flags_override_config_and_runs_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "cfg.json",
        r#"{"model":"rotor","count":5,"seed":1}"#,
    );
    let run = |out: &str| {
        let o = bilinear(
            &[
                "random-suite",
                "--config",
                "cfg.json",
                "--model",
                "oscillator",
                "--seed",
                "9",
                "--out",
                out,
            ],
            tmp.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(tmp.path().join(out).join("suite.json")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let summary: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(summary["model"], "oscillator");
    assert_eq!(summary["seed"], 9);
    assert_eq!(summary["count"], 5);
    assert_eq!(summary["violations"], 0);
}

#[test]
fn galerkin_csv_columns() {
    let tmp = TempDir::new().unwrap();
    let o = bilinear(
        &["galerkin", "--n", "10", "--sizes", "4,6,8", "--out", "g"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("g/galerkin.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "N,N_next,discrepancy,tail_mass");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("4,6,"));
}

#[test]
fn model_dump_round_trips() {
    let tmp = TempDir::new().unwrap();
    let o = bilinear(
        &[
            "model-dump",
            "--model",
            "oscillator",
            "--trunc",
            "6",
            "--out",
            "m",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = bilinear(
        &[
            "model-dump",
            "--model",
            "m/model.json",
            "--trunc",
            "6",
            "--out",
            "m2",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = fs::read_to_string(tmp.path().join("m/model.json")).unwrap();
    let b = fs::read_to_string(tmp.path().join("m2/model.json")).unwrap();
    let (a, b): (serde_json::Value, serde_json::Value) = (
        serde_json::from_str(&a).unwrap(),
        serde_json::from_str(&b).unwrap(),
    );
    assert_eq!(a["eigenvalues"], b["eigenvalues"]);
    assert_eq!(a["coupling"], b["coupling"]);
}
