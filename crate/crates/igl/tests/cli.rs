//! End-to-end tests of the `igl` binary: exit codes, output files, determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn igl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_bounds(dir: &Path) -> (String, String) {
    let lower = dir.join("lower.csv");
    let upper = dir.join("upper.csv");
    let mut lo = String::from("a,b,c\n");
    let mut up = String::from("a,b,c\n");
    // deterministic correlated panel, 40 rows
    for i in 0..40 {
        let t = i as f64;
        let x = (t * 0.7).sin() + 0.1 * (t * 3.1).cos();
        let y = 0.6 * x + (t * 1.3).cos();
        let z = -0.4 * y + (t * 0.9).sin();
        lo.push_str(&format!("{x:.6},{y:.6},{z:.6}\n"));
        up.push_str(&format!("{:.6},{:.6},{:.6}\n", x + 0.5, y + 0.3, z + 0.4));
    }
    fs::write(&lower, lo).unwrap();
    fs::write(&upper, up).unwrap();
    (lower.display().to_string(), upper.display().to_string())
}

#[test]
fn fit_fixed_lambda_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (lower, upper) = write_bounds(tmp.path());
    let out = igl(
        &["fit", "--lower", &lower, "--upper", &upper, "--lambda", "0.5", "--out", "out"],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for f in ["theta.csv", "sigma.csv", "fit.json", "manifest.json"] {
        assert!(tmp.path().join("out").join(f).exists(), "missing {f}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/fit.json")).unwrap())
            .unwrap();
    assert_eq!(json["lambda"], 0.5);
    assert_eq!(json["p"], 3);
    assert!(json["converged"].as_bool().unwrap());
    assert!(json["kkt"].is_object());
    assert!(json["eigen_bounds"]["pass"].as_bool().unwrap());
    assert!(json["selected_lambda"].is_null());
}

#[test]
fn fit_auto_reports_bic_path() {
    let tmp = tempfile::tempdir().unwrap();
    let (lower, upper) = write_bounds(tmp.path());
    let out = igl(
        &[
            "fit", "--lower", &lower, "--upper", &upper, "--auto", "--grid-count", "8",
            "--out", "out",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/fit.json")).unwrap())
            .unwrap();
    let selected = json["selected_lambda"].as_f64().unwrap();
    assert!(selected > 0.0);
    let path = json["bic_path"].as_array().unwrap();
    assert_eq!(path.len(), 8);
    assert_eq!(path.iter().filter(|e| e["selected"] == true).count(), 1);
}

#[test]
fn missing_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = igl(
        &["fit", "--lower", "nope.csv", "--upper", "nope.csv", "--lambda", "0.5"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_unconverged_fit_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let (lower, upper) = write_bounds(tmp.path());
    let out = igl(
        &[
            "fit", "--lower", &lower, "--upper", &upper, "--lambda", "0.1", "--eps", "1e-14",
            "--max-sweeps", "1", "--strict", "--out", "out",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    // outputs are still written for inspection
    assert!(tmp.path().join("out/fit.json").exists());
}

#[test]
fn select_emits_path_table() {
    let tmp = tempfile::tempdir().unwrap();
    let (lower, upper) = write_bounds(tmp.path());
    let out = igl(
        &[
            "select", "--lower", &lower, "--upper", &upper, "--grid-count", "6", "--out",
            "out",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("selected lambda"));
    let path = fs::read_to_string(tmp.path().join("out/path.csv")).unwrap();
    let lines: Vec<&str> = path.lines().collect();
    assert_eq!(lines[0], "lambda,bic,k,gap,sweeps,selected");
    assert_eq!(lines.len(), 7);
    assert_eq!(lines.iter().skip(1).filter(|l| l.ends_with(",1")).count(), 1);
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.json");
    fs::write(
        &config,
        r#"{
            "structures": ["band"],
            "dgps": [{"kind": "dgp2", "widths": [1.0]}],
            "n_values": [50],
            "p_values": [8],
            "reps": 2,
            "master_seed": 99,
            "grid_count": 6,
            "grid_ratio": 0.05
        }"#,
    )
    .unwrap();
    let cfg = config.display().to_string();
    let out = igl(&["simulate", &cfg, "--out", "a"], tmp.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let out2 = igl(&["simulate", &cfg, "--out", "b"], tmp.path());
    assert!(out2.status.success());

    let a = fs::read(tmp.path().join("a/long.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/long.csv")).unwrap();
    assert_eq!(a, b, "simulation output must be byte-identical across runs");
    assert!(tmp.path().join("a/tables.csv").exists());
    let failures = fs::read_to_string(tmp.path().join("a/failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 1, "header only, no failures");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("a/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["master_seed"], 99);
}

#[test]
fn malformed_simulate_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.json");
    fs::write(&config, "{ not json").unwrap();
    let out = igl(&["simulate", &config.display().to_string()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

fn write_ohlc(dir: &Path, days: usize) -> String {
    let path = dir.join("prices.csv");
    let mut s = String::from("date,ticker,open,high,low,close\n");
    let start = chrono::NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    for j in 0..3 {
        let mut price: f64 = 100.0 + 10.0 * j as f64;
        for t in 0..days {
            let date = start + chrono::Days::new(t as u64);
            let drift = 0.004 * ((t * (j + 2)) as f64).sin();
            let o = price;
            let c = o * (1.0 + drift);
            let hi = o.max(c) * 1.003;
            let lo = o.min(c) * 0.997;
            s.push_str(&format!("{date},T{j},{o:.6},{hi:.6},{lo:.6},{c:.6}\n"));
            price = c;
        }
    }
    fs::write(&path, s).unwrap();
    path.display().to_string()
}

#[test]
fn backtest_runs_all_strategies() {
    let tmp = tempfile::tempdir().unwrap();
    let prices = write_ohlc(tmp.path(), 130);
    let out = igl(
        &[
            "backtest", &prices, "--est-window", "60", "--hold", "21", "--grid-count", "6",
            "--out", "bt",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let comparison = fs::read_to_string(tmp.path().join("bt/comparison.csv")).unwrap();
    let lines: Vec<&str> = comparison.lines().collect();
    assert_eq!(lines.len(), 7, "header + six strategies");
    let order: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(order, vec!["1/N", "close", "high", "low", "mid", "interval"]);
    for tag in ["1_N", "close", "high", "low", "mid", "interval"] {
        assert!(tmp.path().join(format!("bt/report_{tag}.json")).exists());
        assert!(tmp.path().join(format!("bt/weights_{tag}.csv")).exists());
    }
    // (130 - 60) / 21 = 3 rebalance windows
    let weights = fs::read_to_string(tmp.path().join("bt/weights_close.csv")).unwrap();
    assert_eq!(weights.lines().count(), 4);
}

#[test]
fn backtest_span_trims_panel() {
    let tmp = tempfile::tempdir().unwrap();
    let prices = write_ohlc(tmp.path(), 160);
    let out = igl(
        &[
            "backtest", &prices, "--est-window", "60", "--hold", "21", "--span", "102",
            "--strategies", "1/N", "--grid-count", "6", "--out", "bt",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // (102 - 60) / 21 = 2 windows
    let weights = fs::read_to_string(tmp.path().join("bt/weights_1_N.csv")).unwrap();
    assert_eq!(weights.lines().count(), 3);
}
