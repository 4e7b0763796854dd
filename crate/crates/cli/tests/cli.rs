use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn phat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two clean period-8 sinusoids in anti-phase plus a constant column.
fn write_sine_csv(dir: &Path, len: usize, constant: bool) -> PathBuf {
    let path = dir.join("sine.csv");
    let mut text = String::from(if constant {
        "date,a,b,flat\n"
    } else {
        "date,a,b\n"
    });
    for t in 0..len {
        let s = (std::f64::consts::TAU * t as f64 / 8.0).sin();
        text += &format!("t{t},{s},{}", -s);
        if constant {
            text += ",3.0";
        }
        text.push('\n');
    }
    std::fs::write(&path, text).unwrap();
    path
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn artifacts(dir: &Path) -> Vec<bool> {
    ["checkpoint.json", "metrics.csv", "manifest.json"]
        .iter()
        .map(|f| dir.join(f).exists())
        .collect()
}

#[test]
fn detect_finds_the_synthetic_periods() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("synth.csv");
    let o = phat(&["synth", "--out", p(&csv), "--length", "960"]);
    assert_eq!(code(&o), 0);
    let o = phat(&["detect", "--input", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records: Vec<Value> = serde_json::from_str(&stdout(&o)).unwrap();
    let periods: Vec<u64> = records
        .iter()
        .filter(|r| r["significant"] == true)
        .map(|r| r["period"].as_u64().unwrap())
        .collect();
    assert!(periods.contains(&24), "{periods:?}");
    assert!(periods.contains(&96), "{periods:?}");
}

#[test]
fn constant_column_is_not_significant() {
    let tmp = TempDir::new().unwrap();
    let csv = write_sine_csv(tmp.path(), 256, true);
    let out = tmp.path().join("periods.json");
    let o = phat(&[
        "detect",
        "--input",
        p(&csv),
        "--lookback",
        "128",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let flat: Vec<&Value> = records.iter().filter(|r| r["column"] == "flat").collect();
    assert!(!flat.is_empty());
    assert!(flat.iter().all(|r| r["significant"] == false));
    let a = records.iter().find(|r| r["column"] == "a").unwrap();
    assert_eq!(a["period"], 8);
    assert_eq!(
        code(&phat(&["detect", "--input", p(&csv), "--lookback", "9999"])),
        2
    );
}

#[test]
fn missing_input_is_a_usage_error() {
    let o = phat(&["detect", "--input", "/nonexistent/data.csv"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonexistent"));
}

#[test]
fn unknown_config_key_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(
        tmp.path(),
        r#"{"preset": "synthetic-small", "synthetic": {"length": 960}, "learning_rate": 0.1}"#,
    );
    let o = phat(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn zero_epochs_still_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(
        tmp.path(),
        r#"{"preset": "synthetic-small", "synthetic": {"length": 960}}"#,
    );
    let o = phat(&[
        "train",
        "--config",
        p(&cfg),
        "--out",
        p(&out),
        "--epochs",
        "0",
        "--quiet",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(artifacts(&out), [true; 3]);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["epochs"], 0);
    assert!(manifest["git_describe"].is_string());
}

#[test]
fn preset_run_then_eval() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(
        tmp.path(),
        r#"{"preset": "synthetic-small", "synthetic": {"length": 960}}"#,
    );
    let o = phat(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(artifacts(&out), [true; 3]);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3);

    let csv = tmp.path().join("synth.csv");
    assert_eq!(
        code(&phat(&["synth", "--out", p(&csv), "--length", "960"])),
        0
    );
    let ck = out.join("checkpoint.json");
    let o = phat(&[
        "eval",
        "--checkpoint",
        p(&ck),
        "--checkpoint",
        p(&ck),
        "--input",
        p(&csv),
        "--split",
        "test",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "dataset,horizon,mse,mae");
    assert_eq!(lines.len(), 3);
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells.len(), 4);
    assert_eq!((cells[0], cells[1]), ("synth", "24"));
    assert!(cells[2].parse::<f64>().unwrap() >= 0.0);
    assert_eq!(lines[1], lines[2]);

    // The checkpoint expects 6 variates.
    let sine = write_sine_csv(tmp.path(), 400, false);
    assert_eq!(
        code(&phat(&[
            "eval",
            "--checkpoint",
            p(&ck),
            "--input",
            p(&sine)
        ])),
        2
    );
}

#[test]
fn tiny_model_overfits_a_clean_sinusoid() {
    let tmp = TempDir::new().unwrap();
    let csv = write_sine_csv(tmp.path(), 800, false);
    let out = tmp.path().join("run");
    let cfg = write_config(
        tmp.path(),
        r#"{
            "dataset": "sine.csv",
            "train": {
                "model": {"lookback": 32, "horizon": 16, "topk": 1, "d_model": 8, "heads": 2, "layers": 1},
                "batch_size": 16, "learning_rate": 0.01, "epochs": 20
            }
        }"#,
    );
    let o = phat(&["train", "--config", p(&cfg), "--out", p(&out), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = phat(&[
        "eval",
        "--checkpoint",
        p(&out.join("checkpoint.json")),
        "--input",
        p(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mse: f64 = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(mse < 1e-2, "mse {mse}");
}

#[test]
fn verify_exit_codes() {
    let o = phat(&["verify", "--filter", "stick-breaking", "--json"]);
    assert_eq!(code(&o), 0);
    let results: Vec<Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0]["name"], "stick-breaking");

    assert_eq!(code(&phat(&["verify"])), 0);
    let o = phat(&["verify", "--filter", "gradcheck", "--corrupt-gradient"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gradcheck"));
}

#[test]
fn gradcheck_and_presets() {
    assert_eq!(code(&phat(&["gradcheck", "--samples", "20"])), 0);
    assert_eq!(
        code(&phat(&[
            "gradcheck",
            "--samples",
            "20",
            "--corrupt-gradient"
        ])),
        1
    );
    let o = phat(&["presets", "ETTm1-96"]);
    assert_eq!(code(&o), 0);
    let cfg: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(cfg["model"]["lookback"], 336);
    assert_eq!(code(&phat(&["presets", "nope"])), 2);
}
