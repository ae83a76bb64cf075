//! Operator entry points: run or resume an evolutionary search, backtest a
//! single program or builtin baseline, print the baseline comparison table,
//! and project a checkpointed archive onto two feature dimensions as CSV.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 fatal runtime error.
//! Relative paths in arguments resolve against the directory containing
//! `--config`, so invocations are stable regardless of the working directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use stratmap::backtest::{run_backtest_with, BacktestOptions, BacktestReport, CommissionMode, CostModel};
use stratmap::checkpoint::{checkpoint_load, CheckpointError};
use stratmap::config::RunConfig;
use stratmap::data::{DatasetView, SplitLabel};
use stratmap::dsl::{builtin_baseline, parse_program_with, BaselineKind, Program};
use stratmap::evolution::{benchmark_returns, run_evolution_with, EvolutionError};
use stratmap::feature_map::ColorMetric;
use stratmap::metrics::MetricSet;

#[derive(Parser)]
#[command(
    name = "stratmap",
    version,
    about = "Quality-diversity search over trading strategy programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an evolutionary search, or resume one from a checkpoint.
    Evolve {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint directory to resume from, e.g. run/checkpoints/gen_0015.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Backtest a program file or a builtin baseline on one data split.
    Backtest {
        /// Run configuration (TOML); supplies data, costs, and the benchmark.
        #[arg(long)]
        config: PathBuf,
        /// Strategy program file to backtest.
        #[arg(long, conflicts_with = "baseline")]
        program: Option<PathBuf>,
        /// Builtin baseline name to backtest instead of a program file.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Disable commissions, slippage, and volume caps for this run.
        #[arg(long)]
        zero_cost: bool,
        /// Equity curve CSV destination. Defaults to <name>_<split>_equity.csv
        /// next to the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Backtest every builtin baseline on one split and print a table.
    Baselines {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Disable commissions, slippage, and volume caps.
        #[arg(long)]
        zero_cost: bool,
    },
    /// Project a checkpointed archive onto two dimensions as a CSV grid.
    InspectMap {
        /// Run configuration (TOML); must match the checkpoint being read.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint directory, e.g. run/checkpoints/gen_0030.
        #[arg(long)]
        db: PathBuf,
        /// Two dimension names separated by a comma, e.g. category,mdd.
        #[arg(long)]
        dims: String,
        /// Cell colour metric.
        #[arg(long, default_value = "score")]
        color: String,
        /// Destination CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl SplitArg {
    fn label(self) -> SplitLabel {
        match self {
            SplitArg::Train => SplitLabel::Train,
            SplitArg::Valid => SplitLabel::Valid,
            SplitArg::Test => SplitLabel::Test,
        }
    }
}

/// Errors already printed to stderr, carrying only the process exit code.
struct Exit(u8);

type CmdResult = Result<(), Exit>;

fn fail(code: u8, message: impl std::fmt::Display) -> Exit {
    eprintln!("error: {message}");
    Exit(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Evolve { config, resume } => cmd_evolve(&config, resume.as_deref()),
        Command::Backtest {
            config,
            program,
            baseline,
            split,
            zero_cost,
            out,
        } => cmd_backtest(&config, program.as_deref(), baseline.as_deref(), split, zero_cost, out.as_deref()),
        Command::Baselines { config, split, zero_cost } => cmd_baselines(&config, split, zero_cost),
        Command::InspectMap { config, db, dims, color, out } => {
            cmd_inspect_map(&config, &db, &dims, &color, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code)) => ExitCode::from(code),
    }
}

/// Resolve a user-supplied path against the config file's directory.
fn resolve(config_path: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(path)
    }
}

fn load_config(path: &Path, exit_code: u8) -> Result<RunConfig, Exit> {
    RunConfig::load(path).map_err(|e| fail(exit_code, format!("config {}: {e}", path.display())))
}

fn cmd_evolve(config_path: &Path, resume: Option<&Path>) -> CmdResult {
    let config = load_config(config_path, 2)?;
    let universe = Arc::new(
        config
            .load_universe()
            .map_err(|e| fail(2, format!("loading data: {e}")))?,
    );
    let resume = resume.map(|p| resolve(config_path, p));
    println!("run dir: {}", config.run_dir.display());
    println!(
        "islands: {}  generations: {}  seed: {}",
        config.taxonomy.len() + 1,
        config.generations,
        config.master_seed
    );
    let mut progress = |generation: u32, stats: &stratmap::feature_map::MapStats| {
        println!(
            "gen {generation:>4}  filled {:>6}/{}  coverage {:.6}  best {}",
            stats.filled,
            stats.total_cells,
            stats.coverage,
            fmt_opt(stats.best_score)
        );
    };
    let outcome = run_evolution_with(universe, &config, resume.as_deref(), &mut progress)
        .map_err(|e| fail(2, evolve_error_text(&e)))?;
    let stats = outcome.db.map_stats();
    println!(
        "completed generation {}: {} cells filled, {} candidates archived, best score {}",
        outcome.completed_generation,
        stats.filled,
        outcome.db.archive.len(),
        fmt_opt(stats.best_score)
    );
    Ok(())
}

fn evolve_error_text(err: &EvolutionError) -> String {
    match err {
        EvolutionError::Checkpoint(CheckpointError::ConfigMismatch { expected, found }) => format!(
            "ConfigMismatch: checkpoint was written under config {found}, current config hashes to {expected}"
        ),
        other => other.to_string(),
    }
}

/// Shared setup for the backtest and baselines commands: pick the split view
/// and the cost schedule, honouring `--zero-cost`.
fn backtest_env(
    config: &RunConfig,
    split: SplitArg,
    zero_cost: bool,
) -> Result<(DatasetView, CostModel, BacktestOptions), Exit> {
    let universe = Arc::new(
        config
            .load_universe()
            .map_err(|e| fail(1, format!("loading data: {e}")))?,
    );
    let (train, valid, test) = config
        .split_views(universe)
        .map_err(|e| fail(1, format!("splitting data: {e}")))?;
    let view = match split.label() {
        SplitLabel::Train => train,
        SplitLabel::Valid => valid,
        SplitLabel::Test => test,
    };
    let (cost_model, options) = if zero_cost {
        (
            CostModel::zero(),
            BacktestOptions {
                commission: CommissionMode::PerShare,
                fill_mode: config.costs.backtest_options().fill_mode,
            },
        )
    } else {
        (config.costs.cost_model(), config.costs.backtest_options())
    };
    Ok((view, cost_model, options))
}

fn run_and_finalize(
    program: &Program,
    view: &DatasetView,
    config: &RunConfig,
    cost_model: &CostModel,
    options: &BacktestOptions,
) -> Result<BacktestReport, Exit> {
    let benchmark = benchmark_returns(config, view).map_err(|e| fail(2, format!("benchmark: {e}")))?;
    let mut report = run_backtest_with(program, view, cost_model, config.initial_capital, options)
        .map_err(|e| fail(1, format!("backtest: {e}")))?;
    report.finalize_metrics(&benchmark, config.risk_free_daily);
    Ok(report)
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => "n/a".to_string(),
    }
}

fn print_metric_table(metrics: &MetricSet) {
    let rows = [
        ("sharpe", fmt_opt(metrics.sharpe)),
        ("sortino", fmt_opt(metrics.sortino)),
        ("information_ratio", fmt_opt(metrics.information_ratio)),
        ("max_drawdown", format!("{:.6}", metrics.max_drawdown)),
        ("cumulative_return", format!("{:.6}", metrics.cumulative_return)),
        ("num_transactions", metrics.num_transactions.to_string()),
        ("combined_score", fmt_opt(metrics.combined_score())),
    ];
    for (name, value) in rows {
        println!("{name:<18} {value:>14}");
    }
}

fn cmd_backtest(
    config_path: &Path,
    program_path: Option<&Path>,
    baseline: Option<&str>,
    split: SplitArg,
    zero_cost: bool,
    out: Option<&Path>,
) -> CmdResult {
    let config = load_config(config_path, 1)?;
    let (program, name) = match (program_path, baseline) {
        (Some(path), None) => {
            let path = resolve(config_path, path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| fail(1, format!("reading {}: {e}", path.display())))?;
            let program = parse_program_with(&text, &config.dsl)
                .map_err(|e| fail(1, format!("parsing {}: {e}", path.display())))?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "program".to_string());
            (program, name)
        }
        (None, Some(baseline)) => {
            let kind = BaselineKind::from_name(baseline).ok_or_else(|| {
                let names: Vec<&str> = BaselineKind::ALL.iter().map(|k| k.name()).collect();
                fail(1, format!("unknown baseline `{baseline}`; valid: {}", names.join(", ")))
            })?;
            (builtin_baseline(kind, &config.share_counts()), baseline.to_string())
        }
        _ => return Err(fail(1, "exactly one of --program or --baseline is required")),
    };
    let (view, cost_model, options) = backtest_env(&config, split, zero_cost)?;
    let report = run_and_finalize(&program, &view, &config, &cost_model, &options)?;
    let metrics = report.metrics.as_ref().expect("finalized report carries metrics");
    println!("{name} on {} ({} bars)", view.label, view.len());
    print_metric_table(metrics);
    let out = out
        .map(|p| resolve(config_path, p))
        .unwrap_or_else(|| resolve(config_path, Path::new(&format!("{name}_{}_equity.csv", view.label))));
    report
        .write_equity_csv(&view, &out)
        .map_err(|e| fail(2, format!("writing {}: {e}", out.display())))?;
    println!("equity curve written to {}", out.display());
    Ok(())
}

fn cmd_baselines(config_path: &Path, split: SplitArg, zero_cost: bool) -> CmdResult {
    let config = load_config(config_path, 1)?;
    let (view, cost_model, options) = backtest_env(&config, split, zero_cost)?;
    let share_counts = config.share_counts();
    println!("split: {} ({} bars)", view.label, view.len());
    println!(
        "{:<18} {:>10} {:>10} {:>10} {:>10}",
        "baseline", "SR", "MDD", "IR", "CR"
    );
    for kind in BaselineKind::ALL {
        let program = builtin_baseline(kind, &share_counts);
        let report = run_and_finalize(&program, &view, &config, &cost_model, &options)?;
        let m = report.metrics.as_ref().expect("finalized report carries metrics");
        println!(
            "{:<18} {:>10} {:>10.4} {:>10} {:>10.4}",
            kind.name(),
            fmt_opt_width(m.sharpe),
            m.max_drawdown,
            fmt_opt_width(m.information_ratio),
            m.cumulative_return
        );
    }
    Ok(())
}

fn fmt_opt_width(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

/// Accepts the short dimension aliases used in figures alongside the full
/// archive dimension names.
fn canonical_dim(name: &str) -> &str {
    match name {
        "mdd" => "max_drawdown",
        "cr" => "cumulative_return",
        "trades" => "num_transactions",
        "sr" => "sharpe",
        other => other,
    }
}

fn cmd_inspect_map(
    config_path: &Path,
    db: &Path,
    dims: &str,
    color: &str,
    out: &Path,
) -> CmdResult {
    let config = load_config(config_path, 1)?;
    let color = ColorMetric::from_name(color).ok_or_else(|| {
        fail(
            1,
            format!("unknown metric `{color}`; valid: {}", ColorMetric::NAMES.join(", ")),
        )
    })?;
    let (dim_a, dim_b) = dims
        .split_once(',')
        .map(|(a, b)| (canonical_dim(a.trim()), canonical_dim(b.trim())))
        .ok_or_else(|| fail(1, "--dims expects two comma-separated dimension names"))?;
    let dimensions = config
        .dimensions()
        .map_err(|e| fail(1, format!("config dimensions: {e}")))?;
    let db_dir = resolve(config_path, db);
    let (database, generation) = checkpoint_load(&db_dir, &config.config_hash(), &dimensions, &config.dsl)
        .map_err(|e| match e {
            CheckpointError::ConfigMismatch { .. } => fail(1, format!("{}: {e}", db_dir.display())),
            other => fail(2, format!("{}: {other}", db_dir.display())),
        })?;
    let grid = database
        .export_projection(dim_a, dim_b, color)
        .map_err(|e| {
            let names: Vec<&str> = dimensions.iter().map(|d| d.name.as_str()).collect();
            fail(1, format!("{e}; valid dimensions: {}", names.join(", ")))
        })?;
    let out = resolve(config_path, out);
    std::fs::write(&out, &grid).map_err(|e| fail(2, format!("writing {}: {e}", out.display())))?;
    let stats = database.map_stats();
    println!("checkpoint generation: {generation}");
    println!(
        "coverage: {}/{} ({:.6})",
        stats.filled, stats.total_cells, stats.coverage
    );
    match (&stats.best_cell, stats.best_score) {
        (Some(cell), Some(score)) => println!("best cell: {} (score {score:.6})", cell.to_key()),
        _ => println!("best cell: none"),
    }
    for (island, cov) in &stats.per_island {
        println!("island {island}: {} cells", cov.filled);
    }
    println!("projection written to {}", out.display());
    Ok(())
}
