use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn noklab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noklab"))
        .args(args)
        .env_remove("NOKLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn design_reports_coherence_bound() {
    let o = noklab(&["design", "--n", "13", "--m", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let bound = v["bounds"]["coherence_bound"].as_f64().unwrap();
    assert!((bound - 13f64.sqrt() / 4.0).abs() < 1e-15);
    assert!(stdout(&o).contains("\"coherence_bound\": 0.9013878188659"));
    assert!(v["bounds"]["coherence"].as_f64().unwrap() <= bound);
}

#[test]
fn design_rejects_bad_parameters() {
    let o = noklab(&["design", "--n", "12", "--m", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n must be prime"));
    let o = noklab(&["design", "--n", "13", "--m", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("m must divide n−1"));
    let o = noklab(&["design", "--n", "13", "--m", "4", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_all_on_defaults_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = noklab(&["verify", "--suite", "all", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let r = read_json(&out);
    let checks = r["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 15);
    for c in checks {
        assert_eq!(c["passed"], Value::Bool(true));
        assert!(c["max_violation"].as_f64().unwrap() <= c["tolerance"].as_f64().unwrap());
    }
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 15);
}

#[test]
fn verify_rate_rejects_nonconvex_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"penalty":{"family":"MCP","lambda":0.5,"gamma":2.0},"T":10}"#).unwrap();
    let o = noklab(&["verify", "--suite", "rate", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rate check requires convex penalty"));
    let o = noklab(&["verify", "--suite", "all", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("SKIP convex_rate"));
}

#[test]
fn corrupted_design_file_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("d.json");
    std::fs::write(&design, "{\n  \"n\": 13,\n  \"m\": oops\n}\n").unwrap();
    let o = noklab(&["verify", "--suite", "monotonic", "--design", p(&design)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("d.json:3:"), "{err}");
}

#[test]
fn design_file_round_trips_through_verify() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("d.json");
    let o = noklab(&["design", "--n", "29", "--m", "4", "--randomize", "--seed", "3", "--save", p(&design)]);
    assert_eq!(o.status.code(), Some(0));
    let d = read_json(&design);
    assert_eq!(d["seed_or_null"], Value::from(3));
    let o = noklab(&["verify", "--suite", "monotonic", "--design", p(&design)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn run_exports_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let traj = dir.path().join("t.json");
    let iters = dir.path().join("y.csv");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"T": 12, "penalty": {{"family": "SCAD", "lambda": 0.2, "gamma": 3.7}},
               "outputs": {{"trajectory": {:?}, "iterates": {:?}}}}}"#,
            p(&traj),
            p(&iters)
        ),
    )
    .unwrap();
    let o = noklab(&["run", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = read_json(&traj);
    assert_eq!(t["Q"].as_array().unwrap().len(), 13);
    assert_eq!(t["violations"].as_array().unwrap().len(), 12);
    assert_eq!(t["passed"], Value::Bool(true));
    let text = std::fs::read_to_string(&iters).unwrap();
    assert_eq!(text.lines().count(), 14);
    assert!(text.starts_with("t,y1,"));
}

#[test]
fn fit_without_phases_keeps_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let rot = dir.path().join("r.json");
    std::fs::write(&cfg, format!(r#"{{"T2": 0, "outputs": {{"rotation": {:?}}}}}"#, p(&rot))).unwrap();
    let o = noklab(&["fit", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = read_json(&rot);
    for (i, row) in r["R"].as_array().unwrap().iter().enumerate() {
        for (j, v) in row.as_array().unwrap().iter().enumerate() {
            assert_eq!(v.as_f64().unwrap(), if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn fit_descends() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = noklab(&["fit", "--seed", "4", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = read_json(&out);
    let trace: Vec<f64> = r["traces"]["objective"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(trace.len(), 21);
    assert!(trace[20] < trace[0]);
}

#[test]
fn kernel_writes_gram_and_fits_ridge() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    let labels = dir.path().join("y.csv");
    let gram = dir.path().join("k.csv");
    let cfg = dir.path().join("c.json");
    let mut rows = vec!["x0,x1,x2,x3,x4,x5,x6,x7".to_string()];
    let mut ys = Vec::new();
    for s in 0..12 {
        let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
        let row: Vec<String> = (0..8).map(|i| format!("{}", sign * (1.0 + 0.1 * i as f64) + 0.05 * s as f64)).collect();
        rows.push(row.join(","));
        ys.push(format!("{sign}"));
    }
    std::fs::write(&data, rows.join("\n")).unwrap();
    std::fs::write(&labels, ys.join("\n")).unwrap();
    std::fs::write(&cfg, format!(r#"{{"T": 3, "outputs": {{"gram": {:?}}}}}"#, p(&gram))).unwrap();
    let out = dir.path().join("r.json");
    let o = noklab(&[
        "kernel", "--config", p(&cfg), "--data", p(&data), "--labels", p(&labels), "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&gram).unwrap();
    assert_eq!(text.lines().count(), 12);
    let r = read_json(&out);
    assert_eq!(r["checks"][0]["name"], Value::from("gram_psd"));
    assert_eq!(r["traces"]["train_sign_accuracy"].as_f64(), Some(1.0));
}

#[test]
fn ragged_data_is_rejected_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "1,2,3,4,5,6,7,8\n1,2,3\n").unwrap();
    let o = noklab(&["kernel", "--data", p(&data)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.csv:2:"), "{}", stderr(&o));
}

#[test]
fn bounds_prints_worked_example() {
    let o = noklab(&[
        "bounds", "--mu", "0.25", "--N", "100", "--T", "4", "--L", "1", "--Bw", "1", "--xfrob", "10", "--delta",
        "0.05", "--risk", "0.1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("rademacher_bound 1.0148"), "{out}");
    assert!(out.contains("generalization_bound 1.658"), "{out}");
    let o = noklab(&["bounds", "--mu", "0.25", "--N", "100", "--T", "4", "--L", "1", "--Bw", "1", "--xfrob", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_command_summarizes_and_fails_on_failed_checks() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    std::fs::write(
        &path,
        r#"{"version":"1","config":null,"checks":[{"name":"x","passed":false,"max_violation":"inf","tolerance":1e-10}],
            "traces":{},"bounds":{},"timestamp":0}"#,
    )
    .unwrap();
    let o = noklab(&["report", "--input", p(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("FAIL x"));
}

#[test]
fn threads_flag_and_env_are_accepted() {
    let o = noklab(&["--threads", "2", "verify", "--suite", "ksparse"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_noklab"))
        .args(["verify", "--suite", "ksparse"])
        .env("NOKLAB_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}
