use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::NaiveDate;
use rdnn_cli::synthetic::{synthetic_csv, SyntheticTicker};
use rdnn_core::backtest::BacktestReport;
use rdnn_core::policy::{init_params, Checkpoint};
use rdnn_core::training::TrainReport;

fn rdnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdnn")).args(args).output().expect("run rdnn")
}

fn run(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    rdnn(&args)
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tickers(n: usize) -> Vec<SyntheticTicker> {
    (0..n)
        .map(|i| SyntheticTicker {
            name: format!("T{i}"),
            start_price: 50.0 + 10.0 * i as f64,
            drift: 0.0005 * (i as f64 - 0.5),
            drift_after: None,
            volatility: 0.01,
        })
        .collect()
}

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 6).unwrap()
}

/// Data file plus config in `dir`; `extra` is appended to the config.
fn setup(dir: &Path, csv: &str, extra: &str) -> PathBuf {
    fs::write(dir.join("prices.csv"), csv).unwrap();
    let cfg = format!(
        "seed = 3\n\
         data.prices = prices.csv\n\
         output.dir = out\n\
         features.ema_periods = 5\n\
         features.rsi_period = none\n\
         features.macd = none\n\
         features.normalization_window = 5\n\
         policy.hidden = 6, 4\n\
         policy.dropout = 0.1\n\
         train.epochs = 3\n\
         train.batch_size = 4\n\
         train.episode_length = 10\n\
         train.to = 2020-03-31\n\
         test.from = 2020-04-01\n\
         {extra}\n"
    );
    let path = dir.join("run.cfg");
    fs::write(&path, cfg).unwrap();
    path
}

fn default_csv() -> String {
    synthetic_csv(&tickers(2), start(), 120, 0, 11)
}

#[test]
fn ingest_writes_two_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &default_csv(), "");
    let out = run("ingest", &cfg, &[]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 assets"));
    let prices = fs::read(dir.path().join("out/prices.csv")).unwrap();
    let features = fs::read(dir.path().join("out/features.csv")).unwrap();
    ok(&run("ingest", &cfg, &[]));
    assert_eq!(prices, fs::read(dir.path().join("out/prices.csv")).unwrap());
    assert_eq!(features, fs::read(dir.path().join("out/features.csv")).unwrap());
}

#[test]
fn missing_volume_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let csv: String = default_csv()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    let cfg = setup(dir.path(), &csv, "");
    let out = run("ingest", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MissingColumn: volume"));
}

#[test]
fn non_positive_price_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines: Vec<String> = default_csv().lines().map(String::from).collect();
    let fields: Vec<&str> = lines[3].split(',').collect();
    lines[3] = format!("{},{},{},{},{},-1,{}", fields[0], fields[1], fields[2], fields[3], fields[4], fields[6]);
    let cfg = setup(dir.path(), &(lines.join("\n") + "\n"), "");
    let out = run("ingest", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = setup(dir.path(), &default_csv(), "");
    ok(&run("ingest", &cfg_path, &[]));
    ok(&run("train", &cfg_path, &["--epochs", "0"]));
    let ck = Checkpoint::from_json(&fs::read_to_string(dir.path().join("out/policy.json")).unwrap()).unwrap();
    let cfg = rdnn_cli::RunConfig::load(&cfg_path).unwrap();
    let init = init_params(&cfg.policy, ck.feature_dim, 2).unwrap();
    assert_eq!(ck.params, init);
}

#[test]
fn fixed_seed_gives_identical_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &default_csv(), "");
    ok(&run("ingest", &cfg, &[]));
    ok(&run("train", &cfg, &[]));
    let a = fs::read(dir.path().join("out/policy.json")).unwrap();
    ok(&run("train", &cfg, &[]));
    assert_eq!(a, fs::read(dir.path().join("out/policy.json")).unwrap());
    ok(&run("train", &cfg, &["--seed", "4"]));
    assert_ne!(a, fs::read(dir.path().join("out/policy.json")).unwrap());
}

#[test]
fn training_on_a_drift_market_raises_utility() {
    let dir = tempfile::tempdir().unwrap();
    let t = vec![
        SyntheticTicker {
            name: "UP".into(),
            start_price: 50.0,
            drift: 0.002,
            drift_after: None,
            volatility: 0.0,
        },
        SyntheticTicker {
            name: "DOWN".into(),
            start_price: 50.0,
            drift: -0.002,
            drift_after: None,
            volatility: 0.0,
        },
    ];
    let cfg = setup(
        dir.path(),
        &synthetic_csv(&t, start(), 120, 0, 1),
        "env.commission_rate = 0\ntrain.optimizer = adam\ntrain.learning_rate = 0.02\n",
    );
    let text = fs::read_to_string(&cfg).unwrap().replace("policy.dropout = 0.1", "policy.dropout = 0");
    fs::write(&cfg, text).unwrap();
    ok(&run("ingest", &cfg, &[]));
    ok(&run("train", &cfg, &["--epochs", "40"]));
    let report: TrainReport =
        TrainReport::from_json(&fs::read_to_string(dir.path().join("out/train_report.json")).unwrap()).unwrap();
    assert_eq!(report.epoch.len(), 40);
    assert!(report.utility.last().unwrap() > report.utility.first().unwrap());
}

#[test]
fn backtest_and_single_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &default_csv(), "test.baseline = T1\n");
    for cmd in ["ingest", "train", "backtest", "report"] {
        ok(&run(cmd, &cfg, &[]));
    }
    let report =
        BacktestReport::from_json(&fs::read_to_string(dir.path().join("out/backtest.json")).unwrap()).unwrap();
    assert_eq!(report.baseline_ticker, "T1");
    assert!(report.calendar[0] >= NaiveDate::from_ymd_opt(2020, 4, 1).unwrap());
    assert_eq!(report.summary.final_wealth, *report.equity.last().unwrap());
    let mut files: Vec<String> = fs::read_dir(dir.path().join("out/report"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["baseline.csv", "equity.csv", "leverage.csv", "turnover.csv"]);
}

#[test]
fn overlay_and_calendar_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &default_csv(), "");
    for cmd in ["ingest", "train", "backtest"] {
        ok(&run(cmd, &cfg, &[]));
    }
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    fs::copy(dir.path().join("out/backtest.json"), &a).unwrap();
    fs::copy(dir.path().join("out/backtest.json"), &b).unwrap();
    let overlay_cfg = dir.path().join("overlay.cfg");
    let base = fs::read_to_string(&cfg).unwrap();
    fs::write(&overlay_cfg, format!("{base}report.inputs = a.json, b.json\n")).unwrap();
    ok(&run("report", &overlay_cfg, &[]));
    let overlay = fs::read_to_string(dir.path().join("out/report/overlay.csv")).unwrap();
    assert!(overlay.starts_with("date,equity_a,baseline_a,leverage_a,equity_b,baseline_b,leverage_b\n"));

    let mut shifted = BacktestReport::from_json(&fs::read_to_string(&b).unwrap()).unwrap();
    shifted.calendar.rotate_left(1);
    fs::write(&b, shifted.to_json()).unwrap();
    let out = run("report", &overlay_cfg, &[]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn checkpoint_for_other_data_exits_with_backtest_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &default_csv(), "");
    for cmd in ["ingest", "train"] {
        ok(&run(cmd, &cfg, &[]));
    }
    fs::write(dir.path().join("prices.csv"), synthetic_csv(&tickers(3), start(), 120, 0, 11)).unwrap();
    ok(&run("ingest", &cfg, &[]));
    let out = run("backtest", &cfg, &[]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn too_little_training_data_exits_with_train_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &default_csv(), "");
    ok(&run("ingest", &cfg, &[]));
    let out = run("train", &cfg, &["--epochs", "1"]);
    ok(&out);
    let long = fs::read_to_string(&cfg).unwrap().replace("train.episode_length = 10", "train.episode_length = 500");
    fs::write(&cfg, long).unwrap();
    let out = run("train", &cfg, &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("InsufficientData"));
}

#[test]
fn selection_run_writes_mask_and_basket_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        &synthetic_csv(&tickers(8), start(), 120, 0, 5),
        "selection.rounds = 1\nselection.perturbations = 2\nselection.hidden = 4\n",
    );
    for cmd in ["ingest", "train", "backtest"] {
        ok(&run(cmd, &cfg, &["--basket-size", "4", "--turnover-cap", "2"]));
    }
    assert!(dir.path().join("out/mask.json").exists());
    let trace = fs::read_to_string(dir.path().join("out/baskets.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("date,ticker,selected,score"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    let days: Vec<&[Vec<String>]> = rows.chunks(8).collect();
    for day in &days {
        assert_eq!(day.iter().filter(|r| r[2] == "1").count(), 4);
    }
    for pair in days.windows(2) {
        let entered = (0..8).filter(|&i| pair[1][i][2] == "1" && pair[0][i][2] == "0").count();
        assert!(entered <= 2);
    }
}

#[test]
fn truncating_data_after_the_test_range_changes_nothing() {
    let full = synthetic_csv(&tickers(2), start(), 140, 0, 21);
    let cut_date = "2020-06-15";
    let truncated: String = full
        .lines()
        .filter(|l| l.starts_with("date") || l[..10] <= *cut_date)
        .map(|l| format!("{l}\n"))
        .collect();
    let extra = format!("test.to = {cut_date}\n");
    let mut outputs = Vec::new();
    for csv in [&full, &truncated] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), csv, &extra);
        for cmd in ["ingest", "train", "backtest"] {
            ok(&run(cmd, &cfg, &[]));
        }
        outputs.push(fs::read(dir.path().join("out/backtest.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &default_csv(), "train.epoch = 3\n");
    let out = run("ingest", &cfg, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key train.epoch"));
}
