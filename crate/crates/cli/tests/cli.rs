use std::io::Write;
use std::process::{Command, Output};

fn lro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lro"))
        .args(args)
        .env("LRO_THREADS", "1")
        .output()
        .expect("run lro")
}

fn file(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn analyze_reference_table() {
    let f = file("11,8,8,5\n6,4,10,12\n", ".csv");
    let o = lro(&["analyze", f.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("    0.0000      6.0323    0.0225"), "{text}");
    assert!(text.contains("W = 875"), "{text}");
}

#[test]
fn analyze_json_output() {
    let f = file(r#"{"counts": [[11, 8, 8, 5], [6, 4, 10, 12]]}"#, ".json");
    let o = lro(&["analyze", f.path().to_str().unwrap(), "--format", "json", "--lambda", "0,2/3", "--family", "t"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    let t0 = reports[0]["statistic"].as_f64().unwrap();
    assert!((t0 - 6.0323).abs() < 1e-3);
    assert_eq!(v["config"]["args"]["family"], "t");
    assert_eq!(v["wilcoxon"][0]["diagnostics"]["wilcoxon"]["w"], 875.0);
}

#[test]
fn inline_table_matches_file() {
    let f = file("11,8,8,5\n6,4,10,12\n", ".csv");
    let a = lro(&["analyze", f.path().to_str().unwrap(), "--format", "json"]);
    let b = lro(&["analyze", "--table", "11,8,8,5;6,4,10,12", "--format", "json"]);
    let strip = |o: &Output| {
        let mut v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["config"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn empty_file_is_rejected() {
    let f = file("", ".csv");
    let o = lro(&["analyze", f.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn three_rows_are_rejected() {
    let f = file("1,2\n3,4\n5,6\n", ".csv");
    let o = lro(&["analyze", f.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exactly two treatment rows required"));
}

#[test]
fn missing_file_is_rejected() {
    let o = lro(&["analyze", "/nonexistent/table.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn single_category_table_is_rejected() {
    let o = lro(&["analyze", "--table", "7;9"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn solver_budget_exhaustion_exits_3() {
    let o = lro(&["analyze", "--table", "11,8,8,5;6,4,10,12", "--max-iter", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("n/a"));
}

#[test]
fn two_category_weights_are_half() {
    let o = lro(&["weights", "--pi", "0.3,0.7", "--nu1", "0.4"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let w: Vec<f64> = serde_json::from_value(v["weights"]["w"].clone()).unwrap();
    assert_eq!(w, vec![0.5, 0.5]);
}

#[test]
fn weights_from_table_closed_and_mc_agree() {
    let run = |method: &str| {
        let o = lro(&["weights", "--table", "11,8,8,5;6,4,10,12", "--method", method, "--mc-reps", "2e5"]);
        assert_eq!(o.status.code(), Some(0));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        serde_json::from_value::<Vec<f64>>(v["weights"]["w"].clone()).unwrap()
    };
    let (a, b) = (run("closed"), run("mc"));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 5e-3, "{a:?} vs {b:?}");
    }
}

fn lines(text: &str) -> Vec<serde_json::Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn simulation_is_deterministic() {
    let args = ["simulate", "--scenario", "B", "--delta", "0.5", "--reps", "1500", "--lambda-grid", "0:1:1", "--seed", "7"];
    let a = lro(&args);
    let b = lro(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);

    let recs = lines(&stdout(&a));
    assert_eq!(recs[0]["type"], "config");
    assert_eq!(recs[0]["args"]["seed"], 7);
    let progress = recs.iter().filter(|r| r["type"] == "progress").count();
    assert_eq!(progress, 4);
    let est: Vec<_> = recs.iter().filter(|r| r["type"] == "estimate").collect();
    let t0 = est.iter().find(|r| r["statistic"] == "T_0").unwrap();
    assert_eq!(t0["rho"], 0.0);
    assert!(t0["alpha_hat"].as_f64().unwrap() < 0.2);
    assert!(t0["beta_hat"].as_f64().unwrap() > t0["alpha_hat"].as_f64().unwrap());
}

#[test]
fn simulation_writes_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.jsonl");
    let o = lro(&[
        "simulate",
        "--scenario",
        "custom",
        "--n1",
        "20",
        "--n2",
        "20",
        "--pi1",
        "0.6,0.4",
        "--pi2",
        "0.4,0.6",
        "--null-pi",
        "0.5,0.5",
        "--reps",
        "1000",
        "--lambda",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let recs = lines(&std::fs::read_to_string(&out).unwrap());
    assert!(recs.iter().any(|r| r["statistic"] == "Gbar2"));
    assert_eq!(recs.last().unwrap()["type"], "summary");
}

#[test]
fn bad_grid_is_rejected() {
    let o = lro(&["simulate", "--reps", "10", "--lambda-grid", "1:0:0.5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn empty_row_exits_2() {
    let o = lro(&["analyze", "--table", "0,0;3,4"]);
    assert_eq!(o.status.code(), Some(2));
}
