use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use opsplit::bench::{CompareSummary, CSV_HEADER};
use opsplit::partitioner::PartitionPlan;
use opsplit::runtime::Scheme;

fn opsplit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opsplit")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A model trained once through the CLI on a small dataset.
fn model() -> &'static PathBuf {
    static MODEL: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    &MODEL
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let data = dir.path().join("d.csv");
            let model = dir.path().join("m.json");
            assert_eq!(code(&opsplit(&["gen-data", "--n", "2000", "--seed", "1", "--out", p(&data)])), 0);
            let o = opsplit(&["train", "--data", p(&data), "--model-out", p(&model), "--holdout", "500"]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            (dir, model)
        })
        .1
}

#[test]
fn gen_data_counts_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let o = opsplit(&["gen-data", "--n", "300", "--seed", "1", "--out", p(&a)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("300 rows"));
    opsplit(&["gen-data", "--n", "300", "--seed", "1", "--out", p(&b)]);
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(text).unwrap().lines().count(), 301);
    // default location under --out-dir
    assert_eq!(code(&opsplit(&["gen-data", "--n", "5", "--out-dir", p(dir.path())])), 0);
    assert!(dir.path().join("dataset.csv").exists());
}

#[test]
fn argument_errors_exit_2() {
    let o = opsplit(&["gen-data", "--n", "0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&opsplit(&["no-such-command"])), 2);
    assert_eq!(code(&opsplit(&["plan", "--true-cost", "--preset", "idle"])), 2);
    assert_eq!(code(&opsplit(&["oracle-check", "--min-ops", "5", "--max-ops", "3"])), 2);
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&opsplit(&["train", "--data", p(&missing)])), 3);
    assert_eq!(code(&opsplit(&["--config", p(&missing), "oracle-check", "--seeds", "1"])), 3);
    assert_eq!(code(&opsplit(&["compare", "--model", p(&missing)])), 3);
    let garbage = dir.path().join("g.json");
    std::fs::write(&garbage, "not json").unwrap();
    assert_eq!(code(&opsplit(&["--graph", p(&garbage), "plan", "--true-cost"])), 3);
}

#[test]
fn training_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    opsplit(&["gen-data", "--n", "20", "--out", p(&data)]);
    let o = opsplit(&["train", "--data", p(&data), "--model-out", p(&dir.path().join("m.json"))]);
    assert_eq!(code(&o), 4);
}

#[test]
fn training_is_reproducible() {
    let first = std::fs::read(model()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let again = dir.path().join("m.json");
    opsplit(&["gen-data", "--n", "2000", "--seed", "1", "--out", p(&data)]);
    let o = opsplit(&["train", "--data", p(&data), "--model-out", p(&again), "--holdout", "500"]);
    assert!(stdout(&o).contains("held-out MAPE (500 samples): latency"));
    assert_eq!(std::fs::read(&again).unwrap(), first);
}

#[test]
fn oracle_check_reports() {
    let o = opsplit(&["oracle-check"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("120 cases passed"));
    let o = opsplit(&["oracle-check", "--seeds", "5"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("\n30 cases passed"));
    let o = opsplit(&["oracle-check", "--zero-comm-fixture"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL n="));
}

#[test]
fn plan_emits_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = opsplit(&["--out-dir", p(dir.path()), "plan", "--true-cost", "--preset", "high"]);
    assert_eq!(code(&o), 0);
    let plan = PartitionPlan::from_json_str(&stdout(&o)).unwrap();
    assert_eq!(plan.decisions.len(), 31);
    assert!(plan.feasible);
    let saved = std::fs::read_to_string(dir.path().join("plan_high.json")).unwrap();
    assert_eq!(saved, stdout(&o));
    let o = opsplit(&["--out-dir", p(dir.path()), "plan", "--model", p(model()), "--objective", "min-latency"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn simulate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = opsplit(&[
        "--out-dir", p(dir.path()), "simulate", "--model", p(model()), "--preset", "moderate",
        "--scheme", "LatencyMin", "--frames", "4", "--trace", "step",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("simulate_moderate_LatencyMin.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count(), 5);
}

#[derive(serde::Deserialize)]
struct Row {
    frame: usize,
    scheme: String,
    latency_s: f64,
    energy_j: f64,
    replans: usize,
    met_budget: bool,
    mape_pct: f64,
}

#[test]
fn compare_outputs_are_consistent_and_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"frames": 3, "seed": 5}"#).unwrap();
    let run = |name: &str| {
        let out = root.path().join(name);
        let o = opsplit(&["--config", p(&cfg), "--seed", "6", "--out-dir", p(&out), "compare", "--model", p(model())]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let summary: CompareSummary =
        serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.rows.len(), 6);
    assert_eq!(summary.frames, 3);
    assert_eq!(summary.seed, 6);
    for preset in ["moderate", "high"] {
        let file = format!("compare_{preset}.csv");
        let bytes = std::fs::read(a.join(&file)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(&file)).unwrap());
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>().join(","), CSV_HEADER);
        let rows: Vec<Row> = rdr.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 9);
        let mean = |s: Scheme, f: fn(&Row) -> f64| {
            let v: Vec<f64> = rows.iter().filter(|r| r.scheme == s.name()).map(f).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let e_ada = mean(Scheme::AdaOper, |r| r.energy_j);
        let e_lat = mean(Scheme::LatencyMin, |r| r.energy_j);
        let l_ada = mean(Scheme::AdaOper, |r| r.latency_s);
        let l_lat = mean(Scheme::LatencyMin, |r| r.latency_s);
        let d = summary.deltas.iter().find(|d| d.preset == preset).unwrap();
        assert!((100.0 * (e_ada / e_lat - 1.0) - d.energy_delta_pct).abs() <= 1e-9);
        assert!((100.0 * (l_ada / l_lat - 1.0) - d.latency_delta_pct).abs() <= 1e-9);
        let row = summary.row(preset, Scheme::AdaOper).unwrap();
        let replans: usize = rows.iter().filter(|r| r.scheme == "AdaOper").map(|r| r.replans).sum();
        assert_eq!(row.replans, replans);
        let met = rows.iter().filter(|r| r.scheme == "AdaOper" && r.met_budget).count();
        assert_eq!(row.frames_met_budget, met);
        assert!(rows.iter().all(|r| r.frame < 3 && r.mape_pct.is_finite()));
    }
    for f in ["summary.json", "compare.dat", "compare.gp"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}
