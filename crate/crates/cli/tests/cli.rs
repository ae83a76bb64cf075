//! End-to-end checks of the command line binary: exit codes, output shape,
//! and the path-resolution rule (relative arguments anchor at --config).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stratmap::checkpoint::checkpoint_save;
use stratmap::config::RunConfig;
use stratmap::feature_map::EvolutionaryDatabase;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stratmap"))
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic")
}

/// Copy the synthetic corpus into a tempdir and rewrite the generation count
/// so tests stay fast.
fn setup(generations: u32) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().expect("tempdir");
    for entry in std::fs::read_dir(fixture_dir()).expect("fixture dir") {
        let entry = entry.expect("entry");
        std::fs::copy(entry.path(), dir.path().join(entry.file_name())).expect("copy fixture");
    }
    let config_path = dir.path().join("run.toml");
    let text = std::fs::read_to_string(&config_path).expect("read config");
    let text = text.replace("generations = 30", &format!("generations = {generations}"));
    std::fs::write(&config_path, text).expect("write config");
    (dir, config_path)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn binary")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn evolve_writes_run_artifacts_and_reports_progress() {
    let (dir, config) = setup(2);
    let out = run(&["evolve", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("gen    0"), "missing seed generation line: {text}");
    assert!(text.contains("gen    2"), "missing final generation line: {text}");
    assert!(text.contains("coverage"), "missing coverage column: {text}");
    assert!(text.contains("best"), "missing best-score column: {text}");
    let run_dir = dir.path().join("run");
    assert!(run_dir.join("events.jsonl").is_file());
    assert!(run_dir.join("checkpoints/gen_0000/manifest.toml").is_file());
    assert!(run_dir.join("checkpoints/gen_0002/manifest.toml").is_file());
}

#[test]
fn evolve_resume_with_mismatched_config_exits_two() {
    let (dir, config) = setup(2);
    let out = run(&["evolve", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    // Different seed, same run directory: the checkpoint no longer belongs
    // to this configuration.
    let text = std::fs::read_to_string(&config).unwrap();
    let mismatched = dir.path().join("other.toml");
    std::fs::write(&mismatched, text.replace("master_seed = 42", "master_seed = 7")).unwrap();
    let out = run(&[
        "evolve",
        "--config",
        mismatched.to_str().unwrap(),
        "--resume",
        "run/checkpoints/gen_0002",
    ]);
    assert_eq!(out.status.code(), Some(2), "stdout: {}", stdout(&out));
    assert!(stderr(&out).contains("ConfigMismatch"), "stderr: {}", stderr(&out));
}

#[test]
fn evolve_resume_continues_to_new_horizon() {
    let (dir, config) = setup(2);
    let out = run(&["evolve", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let extended = dir.path().join("longer.toml");
    let text = std::fs::read_to_string(&config).unwrap();
    std::fs::write(&extended, text.replace("generations = 2", "generations = 4")).unwrap();
    let out = run(&[
        "evolve",
        "--config",
        extended.to_str().unwrap(),
        "--resume",
        "run/checkpoints/gen_0002",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("gen    3"), "resumed run should print new generations: {text}");
    assert!(!text.contains("gen    1 "), "resumed run must not replay done generations: {text}");
    assert!(dir.path().join("run/checkpoints/gen_0004/manifest.toml").is_file());
}

#[test]
fn backtest_prints_metric_table_and_writes_equity_csv() {
    let (dir, config) = setup(2);
    let out = run(&[
        "backtest",
        "--config",
        config.to_str().unwrap(),
        "--baseline",
        "equal_weight",
        "--split",
        "test",
        "--out",
        "eq.csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for row in [
        "sharpe",
        "sortino",
        "information_ratio",
        "max_drawdown",
        "cumulative_return",
        "num_transactions",
        "combined_score",
    ] {
        assert!(text.contains(row), "missing `{row}` row in:\n{text}");
    }
    // Relative --out resolves against the config directory.
    let csv = std::fs::read_to_string(dir.path().join("eq.csv")).expect("equity csv");
    assert!(csv.starts_with("date,equity,return\n"));
    assert!(csv.lines().count() > 100, "one row per test bar plus header");
}

#[test]
fn backtest_program_file_parses_and_runs() {
    let (dir, config) = setup(2);
    let program = r#"
strategy "sma_cross" {
  categories: momentum_trend;
  indicators {
    fast = sma(10);
    slow = sma(40);
  }
  entry: fast > slow;
  exit: fast < slow;
  sizing: equal_weight;
  rebalance: daily;
}
"#;
    let path = dir.path().join("prog.txt");
    std::fs::write(&path, program).unwrap();
    let out = run(&[
        "backtest",
        "--config",
        config.to_str().unwrap(),
        "--program",
        "prog.txt",
        "--split",
        "train",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(dir.path().join("prog_train_equity.csv").is_file());
}

#[test]
fn backtest_malformed_program_exits_one_with_position() {
    let (dir, config) = setup(2);
    let path = dir.path().join("broken.txt");
    std::fs::write(&path, "strategy \"x\" {\n  indicators { a = sma(; }\n  entry: a > 0;\n}\n").unwrap();
    let out = run(&[
        "backtest",
        "--config",
        config.to_str().unwrap(),
        "--program",
        "broken.txt",
        "--split",
        "train",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("line"), "parse error should carry a position: {err}");
}

#[test]
fn backtest_requires_exactly_one_source() {
    let (_dir, config) = setup(2);
    let out = run(&["backtest", "--config", config.to_str().unwrap(), "--split", "test"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn baselines_prints_one_row_per_builtin() {
    let (_dir, config) = setup(2);
    let out = run(&["baselines", "--config", config.to_str().unwrap(), "--split", "valid"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for name in [
        "equal_weight",
        "buy_hold",
        "macd_cross",
        "rsi_kdj",
        "risk_parity",
        "market_cap",
    ] {
        assert!(text.contains(name), "missing baseline `{name}`:\n{text}");
    }
    for column in ["SR", "MDD", "IR", "CR"] {
        assert!(text.contains(column), "missing column `{column}`:\n{text}");
    }
    assert_eq!(text.lines().count(), 2 + 6, "split line, header, six rows");
}

#[test]
fn inspect_map_writes_projection_and_summary() {
    let (dir, config) = setup(1);
    let out = run(&["evolve", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&[
        "inspect-map",
        "--config",
        config.to_str().unwrap(),
        "--db",
        "run/checkpoints/gen_0001",
        "--dims",
        "category,mdd",
        "--color",
        "sharpe",
        "--out",
        "proj.csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("coverage:"), "missing coverage summary: {text}");
    assert!(text.contains("island 0:"), "missing per-island counts: {text}");
    let csv = std::fs::read_to_string(dir.path().join("proj.csv")).expect("projection csv");
    assert!(csv.starts_with("category,max_drawdown,sharpe\n"));
    assert!(csv.lines().count() > 1, "grid rows expected for a seeded map");

    // Identical invocation, byte-identical output.
    let again = run(&[
        "inspect-map",
        "--config",
        config.to_str().unwrap(),
        "--db",
        "run/checkpoints/gen_0001",
        "--dims",
        "category,mdd",
        "--color",
        "sharpe",
        "--out",
        "proj2.csv",
    ]);
    assert_eq!(stdout(&again).replace("proj2.csv", "proj.csv"), text);
    let csv2 = std::fs::read_to_string(dir.path().join("proj2.csv")).unwrap();
    assert_eq!(csv, csv2);
}

#[test]
fn inspect_map_unknown_metric_lists_valid_names() {
    let (_dir, config) = setup(1);
    let out = run(&[
        "inspect-map",
        "--config",
        config.to_str().unwrap(),
        "--db",
        "run/checkpoints/gen_0000",
        "--dims",
        "category,mdd",
        "--color",
        "calmar",
        "--out",
        "x.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("unknown metric"), "{err}");
    assert!(err.contains("sharpe") && err.contains("score"), "should list valid metrics: {err}");
}

#[test]
fn inspect_map_empty_database_writes_header_only() {
    let (dir, config_path) = setup(1);
    let config = RunConfig::load(&config_path).expect("load config");
    let dims = config.dimensions().expect("dimensions");
    let db = EvolutionaryDatabase::new(dims);
    let ckpt = checkpoint_save(&db, &config.config_hash(), 0, dir.path()).expect("save empty");
    let out = run(&[
        "inspect-map",
        "--config",
        config_path.to_str().unwrap(),
        "--db",
        ckpt.to_str().unwrap(),
        "--dims",
        "sharpe,mdd",
        "--color",
        "score",
        "--out",
        "empty.csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("coverage: 0/"), "{}", stdout(&out));
    let csv = std::fs::read_to_string(dir.path().join("empty.csv")).unwrap();
    assert_eq!(csv, "sharpe,max_drawdown,score\n");
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["evolve"]);
    assert_eq!(out.status.code(), Some(1), "missing required --config");
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
}
