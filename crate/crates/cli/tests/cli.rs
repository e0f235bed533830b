use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn stringstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stringstab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Header plus numeric rows.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column_max(rows: &[Vec<f64>], col: usize) -> f64 {
    rows.iter().map(|r| r[col].abs()).fold(0.0, f64::max)
}

fn write_config(dir: &TempDir, json: &str) -> String {
    let path = dir.path().join("config.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn check_lemmas_reference_gains() {
    let out = stringstab(&["check-lemmas"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = stdout_json(&out);
    assert_eq!(doc["product_le_one"], true);
    assert_eq!(doc["both_le_one"], false);
    assert!(doc["c2_norm"]["value"].as_f64().unwrap() > 1.0);
    for key in ["min_abs_m", "min_abs_far_sum", "min_abs_determinant"] {
        assert!(doc["denominators"][key].as_f64().unwrap() > 0.0, "{key}");
    }
}

#[test]
fn check_lemmas_symmetric_gains_touch_one() {
    let out = stringstab(&["check-lemmas", "--a1", "2", "--b1", "3", "--a2", "2", "--b2", "3"]);
    assert_eq!(code(&out), 0);
    let doc = stdout_json(&out);
    let product = doc["c1c2_norm"]["value"].as_f64().unwrap();
    assert!((product - 1.0).abs() <= 1e-6, "{product}");
}

#[test]
fn check_lemmas_rejects_negative_gain() {
    let out = stringstab(&["check-lemmas", "--a1", "-1"]);
    assert_eq!(code(&out), 2);
    let msg = stderr(&out);
    assert!(msg.contains("a1") && msg.contains("positive"), "{msg}");
}

#[test]
fn check_lemmas_writes_report_when_asked() {
    let dir = TempDir::new().unwrap();
    let out = stringstab(&["check-lemmas", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("lemmas.json")).unwrap()).unwrap();
    assert_eq!(saved, stdout_json(&out));
}

#[test]
fn tune_finds_alpha() {
    let out = stringstab(&[
        "tune",
        "--base-a",
        "1",
        "--base-b",
        "1",
        "--kappa",
        "2",
        "--alpha-min",
        "1.5",
        "--alpha-max",
        "1000",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = stdout_json(&out);
    assert_eq!(doc["status"], "found");
    assert!(doc["c1_norm"]["value"].as_f64().unwrap() < 1.0);
    let g = &doc["gains"];
    let alpha = doc["alpha"].as_f64().unwrap();
    let ratio = g["a2"].as_f64().unwrap() / g["a1"].as_f64().unwrap();
    assert!((ratio - alpha).abs() < 1e-12 * alpha);
}

#[test]
fn tune_symmetric_range_is_not_found() {
    let out = stringstab(&["tune", "--alpha-min", "1.0", "--alpha-max", "1.0"]);
    assert_eq!(code(&out), 3);
    assert_eq!(stdout_json(&out)["status"], "not_found");
}

#[test]
fn tune_rejects_zero_kappa() {
    let out = stringstab(&["tune", "--kappa", "0"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("kappa"));
}

#[test]
fn simulate_reference_chain() {
    let dir = TempDir::new().unwrap();
    let out = stringstab(&["simulate", "--n", "12", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let (header, rows) = read_csv(&dir.path().join("errors.csv"));
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=12).map(|k| format!("e_{k}")))
        .collect();
    assert_eq!(header, expected);
    let peaks: Vec<f64> = (1..=12).map(|c| column_max(&rows, c)).collect();
    assert!(peaks[2..].windows(2).all(|w| w[1] < w[0]), "{peaks:?}");

    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["per_vehicle_l2"].as_array().unwrap().len(), 12);
    assert!(summary["spectral_abscissa"].as_f64().unwrap() < 0.0);
    assert!((summary["disturbance_norm"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let l2: Vec<f64> = summary["per_vehicle_l2"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let total = l2.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((summary["total_norm"].as_f64().unwrap() - total).abs() < 1e-12);
}

#[test]
fn simulate_without_disturbance_is_all_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        r#"{"chain": {"n": 3}, "simulation": {"disturbances": [], "t_end": 1.0}}"#,
    );
    let out = stringstab(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = read_csv(&dir.path().join("errors.csv"));
    assert_eq!(header.len(), 4);
    assert!(rows.iter().all(|r| r[1..].iter().all(|&x| x == 0.0)));
}

#[test]
fn simulate_step_guard() {
    let dir = TempDir::new().unwrap();
    let out = stringstab(&["simulate", "--dt", "0.01", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stability guard"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn simulate_json_format() {
    let dir = TempDir::new().unwrap();
    let out = stringstab(&[
        "simulate",
        "--n",
        "2",
        "--t-end",
        "3",
        "--format",
        "json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("errors.json")).unwrap()).unwrap();
    assert_eq!(doc["columns"], serde_json::json!(["t", "e_1", "e_2"]));
    assert!(doc["rows"].as_array().unwrap().len() > 100);
}

#[test]
fn sweep_reference_plateau() {
    let dir = TempDir::new().unwrap();
    let out = stringstab(&["sweep-n", "--n", "12", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(header, ["N", "l2l2_norm"]);
    let ns: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(ns, (1..=12).map(f64::from).collect::<Vec<_>>());
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1] * (1.0 - 1e-9)));
}

#[test]
fn sweep_single_row_and_ascending_order() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = stringstab(&["sweep-n", "--n-list", "4", "--out", d]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_csv(&dir.path().join("sweep.csv")).1.len(), 1);

    let out = stringstab(&["sweep-n", "--n-list", "5,2,9", "--out", d]);
    assert_eq!(code(&out), 0);
    let ns: Vec<f64> = read_csv(&dir.path().join("sweep.csv")).1.iter().map(|r| r[0]).collect();
    assert_eq!(ns, [2.0, 5.0, 9.0]);
}

#[test]
fn sweep_tuned_gains_plateau() {
    // alpha = 1.5 in the family p1 = 2/(1+alpha) (1 + s), p2 = alpha p1.
    let dir = TempDir::new().unwrap();
    let out = stringstab(&[
        "sweep-n",
        "--a1",
        "0.8",
        "--b1",
        "0.8",
        "--a2",
        "1.2",
        "--b2",
        "1.2",
        "--n-list",
        "12,50",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("sweep.csv")).1;
    assert!(rows[1][1] / rows[0][1] < 1.05);
}

#[test]
fn sweep_rejects_follower_disturbance() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        r#"{"simulation": {"disturbances": [{"vehicle": 2, "waveform": {"kind": "rectangular"},
            "amplitude": 1.0, "start": 1.0, "duration": 1.0}]}}"#,
    );
    let out = stringstab(&["sweep-n", "--config", &cfg]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("simulation.disturbances"));
}

#[test]
fn outputs_are_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        let out = stringstab(&["sweep-n", "--n-list", "1,3,6", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(
        fs::read(a.path().join("sweep.csv")).unwrap(),
        fs::read(b.path().join("sweep.csv")).unwrap()
    );
}

#[test]
fn freq_response_first_and_last() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().join("k1");
    let out = stringstab(&["freq-response", "--vehicle", "1", "--out", d.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, first) = read_csv(&d.join("bode.csv"));
    assert_eq!(header, ["omega", "abs_Hk", "arg_Hk"]);
    assert_eq!(first.len(), 2000);
    assert_eq!(first[0][0], 1e-4);
    assert!(first.iter().all(|r| r[1].is_finite() && r[2].is_finite()));

    let d = dir.path().join("k12");
    let out = stringstab(&["freq-response", "--vehicle", "12", "--out", d.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let last = read_csv(&d.join("bode.csv")).1;

    // At the peak of |H_1|, |H_N| stays under |H_1| ||C1||^(N-2) with ||C1|| = 0.1.
    let i = (0..first.len())
        .max_by(|&a, &b| first[a][1].total_cmp(&first[b][1]))
        .unwrap();
    assert!(last[i][1] <= first[i][1] * 0.1f64.powi(10));
}

#[test]
fn freq_response_single_vehicle_chain() {
    let dir = TempDir::new().unwrap();
    let out = stringstab(&[
        "freq-response",
        "--n",
        "1",
        "--points",
        "50",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // N = 1: H_1 = 1 / (s² + p1 + p2) = 1 / (s² + 101 s + 11).
    for r in read_csv(&dir.path().join("bode.csv")).1 {
        let w = r[0];
        let expected = 1.0 / ((11.0 - w * w).powi(2) + (101.0 * w).powi(2)).sqrt();
        assert!((r[1] - expected).abs() <= 1e-12 * expected);
    }
}

#[test]
fn freq_response_rejects_vehicle_zero() {
    let out = stringstab(&["freq-response", "--vehicle", "0"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("chain.vehicle"));
}

#[test]
fn config_file_is_honoured_and_flags_override_it() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        r#"{"gains": {"a1": 1, "b1": 1, "a2": 1, "b2": 1}, "chain": {"n": 4}}"#,
    );
    let doc = stdout_json(&stringstab(&["check-lemmas", "--config", &cfg]));
    assert_eq!(doc["n"], 4);
    assert_eq!(doc["gains"]["a2"], 1.0);
    let doc = stdout_json(&stringstab(&["check-lemmas", "--config", &cfg, "--a2", "5"]));
    assert_eq!(doc["gains"]["a2"], 5.0);
}

#[test]
fn malformed_config_is_invalid() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, r#"{"chain": {"n": "twelve"}}"#);
    assert_eq!(code(&stringstab(&["simulate", "--config", &cfg])), 2);
    let cfg = write_config(&dir, r#"{"extra": 1}"#);
    assert_eq!(code(&stringstab(&["simulate", "--config", &cfg])), 2);
}
