//! Run configuration: one TOML file describing data, splits, the feature
//! map, sampling, costs, the generator, and the evolution schedule.
//!
//! Relative paths inside the file resolve against the file's own directory,
//! so a run directory can be shipped as a self-contained bundle. The config
//! hash covers everything that affects results; the run directory location
//! deliberately does not.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backtest::{BacktestOptions, CommissionMode, CostModel, FillMode};
use crate::data::{align_calendar, load_ohlcv_csv, split_periods, AssetClass, DataError, DatasetView, SplitSpec, Universe};
use crate::dsl::baselines::BaselineKind;
use crate::dsl::DslOptions;
use crate::feature_map::{default_dimensions, FeatureDimension, FeatureMapError};
use crate::generators::EndpointConfig;
use crate::sampling::SamplingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Map(#[from] FeatureMapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Mutational,
    Llm,
}

/// One instrument in the universe manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymbolEntry {
    pub path: PathBuf,
    #[serde(default = "default_asset_class")]
    pub asset_class: AssetClass,
    #[serde(default = "default_point_value")]
    pub point_value: f64,
    /// Static share count for market-cap weighting; optional elsewhere.
    #[serde(default)]
    pub shares_outstanding: Option<f64>,
}

fn default_asset_class() -> AssetClass {
    AssetClass::Equity
}
fn default_point_value() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitDates {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub valid_start: NaiveDate,
    pub valid_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl SplitDates {
    pub fn to_spec(&self) -> Result<SplitSpec, DataError> {
        SplitSpec::new(
            (self.train_start, self.train_end),
            (self.valid_start, self.valid_end),
            (self.test_start, self.test_end),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub bins: u32,
    pub categorical_enabled: bool,
    /// Per-dimension [min, max] overrides keyed by metric dimension name.
    pub ranges: BTreeMap<String, [f64; 2]>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            bins: 16,
            categorical_enabled: true,
            ranges: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub per_share_cost: f64,
    pub min_trade_cost: f64,
    pub slippage_impact: f64,
    pub volume_limit: f64,
    /// When set, commission switches to this fraction of fill notional.
    pub commission_pct: Option<f64>,
    pub fill_mode: FillModeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillModeConfig {
    SameClose,
    NextOpen,
}

impl Default for CostConfig {
    fn default() -> Self {
        let m = CostModel::default();
        Self {
            per_share_cost: m.per_share_cost,
            min_trade_cost: m.min_trade_cost,
            slippage_impact: m.slippage_impact,
            volume_limit: m.volume_limit,
            commission_pct: None,
            fill_mode: FillModeConfig::SameClose,
        }
    }
}

impl CostConfig {
    pub fn cost_model(&self) -> CostModel {
        CostModel {
            per_share_cost: self.per_share_cost,
            min_trade_cost: self.min_trade_cost,
            slippage_impact: self.slippage_impact,
            volume_limit: self.volume_limit,
        }
    }

    pub fn backtest_options(&self) -> BacktestOptions {
        BacktestOptions {
            commission: match self.commission_pct {
                Some(pct) => CommissionMode::PctOfNotional(pct),
                None => CommissionMode::PerShare,
            },
            fill_mode: match self.fill_mode {
                FillModeConfig::SameClose => FillMode::SameClose,
                FillModeConfig::NextOpen => FillMode::NextOpen,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    /// Baseline name the benchmark return series comes from.
    pub kind: String,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            kind: "buy_hold".to_string(),
        }
    }
}

fn default_insight_interval() -> u32 {
    50
}
fn default_insight_capacity() -> usize {
    200
}
fn default_migration_interval() -> u32 {
    10
}
fn default_migration_fraction() -> f64 {
    0.10
}
fn default_initial_capital() -> f64 {
    100_000.0
}
fn default_generator() -> GeneratorKind {
    GeneratorKind::Mutational
}
fn default_run_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub master_seed: u64,
    pub generations: u32,
    #[serde(default = "default_migration_interval")]
    pub migration_interval: u32,
    #[serde(default = "default_migration_fraction")]
    pub migration_fraction: f64,
    #[serde(default = "default_insight_interval")]
    pub insight_interval: u32,
    #[serde(default = "default_insight_capacity")]
    pub insight_capacity: usize,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
    #[serde(default = "default_generator")]
    pub generator: GeneratorKind,
    #[serde(default)]
    pub risk_free_daily: f64,
    #[serde(default = "default_initial_capital")]
    pub initial_capital: f64,
    /// Propose and backtest islands on worker threads; insertion order is
    /// still deterministic.
    #[serde(default)]
    pub parallel: bool,
    pub data: BTreeMap<String, SymbolEntry>,
    pub splits: SplitDates,
    pub taxonomy: Vec<String>,
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub costs: CostConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
    #[serde(default)]
    pub llm: Option<EndpointConfig>,
    #[serde(default)]
    pub dsl: DslOptions,
}

impl RunConfig {
    /// Parse a TOML file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.run_dir.is_relative() {
            self.run_dir = base.join(&self.run_dir);
        }
        for entry in self.data.values_mut() {
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: &str| {
            Err(ConfigError::Invalid {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if self.data.is_empty() {
            return invalid("data", "at least one symbol is required");
        }
        if self.taxonomy.is_empty() {
            return invalid("taxonomy", "at least one category is required");
        }
        if self.migration_interval == 0 {
            return invalid("migration_interval", "must be at least 1");
        }
        if self.insight_interval == 0 {
            return invalid("insight_interval", "must be at least 1");
        }
        if self.insight_capacity == 0 {
            return invalid("insight_capacity", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.migration_fraction) {
            return invalid("migration_fraction", "must be within [0, 1]");
        }
        if self.map.bins == 0 {
            return invalid("map.bins", "must be at least 1");
        }
        if !(self.initial_capital > 0.0) {
            return invalid("initial_capital", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.sampling.alpha) {
            return invalid("sampling.alpha", "must be within [0, 1]");
        }
        if BaselineKind::from_name(&self.benchmark.kind).is_none() {
            return invalid("benchmark.kind", "unknown baseline name");
        }
        if self.generator == GeneratorKind::Llm && self.llm.is_none() {
            return invalid("llm", "generator = \"llm\" requires an [llm] endpoint section");
        }
        self.splits.to_spec()?;
        for (name, [lo, hi]) in &self.map.ranges {
            if !(lo < hi) {
                return Err(ConfigError::Invalid {
                    key: format!("map.ranges.{name}"),
                    message: "min must be below max".to_string(),
                });
            }
        }
        // Range overrides must name known metric dimensions; doing this via
        // dimension construction keeps one source of truth.
        self.dimensions()?;
        Ok(())
    }

    /// Feature-map dimensions for this run, range overrides applied.
    pub fn dimensions(&self) -> Result<Vec<FeatureDimension>, ConfigError> {
        let mut dims = default_dimensions(self.map.bins, &self.taxonomy, self.map.categorical_enabled)?;
        for (name, [lo, hi]) in &self.map.ranges {
            let dim = dims
                .iter_mut()
                .find(|d| d.name == *name)
                .ok_or_else(|| ConfigError::Invalid {
                    key: format!("map.ranges.{name}"),
                    message: "unknown feature dimension".to_string(),
                })?;
            *dim = FeatureDimension::continuous(name, *lo, *hi, self.map.bins)?;
        }
        Ok(dims)
    }

    /// Load every symbol's bars and intersect their calendars.
    pub fn load_universe(&self) -> Result<Universe, ConfigError> {
        let mut series = Vec::with_capacity(self.data.len());
        for (symbol, entry) in &self.data {
            series.push(load_ohlcv_csv(
                &entry.path,
                symbol,
                entry.asset_class,
                entry.point_value,
            )?);
        }
        Ok(align_calendar(series)?)
    }

    pub fn split_views(&self, universe: Arc<Universe>) -> Result<(DatasetView, DatasetView, DatasetView), ConfigError> {
        let spec = self.splits.to_spec()?;
        Ok(split_periods(universe, &spec)?)
    }

    /// (symbol, shares outstanding) pairs for market-cap weighting. Symbols
    /// without a count fall back to 1.0 so the baseline stays runnable.
    pub fn share_counts(&self) -> Vec<(String, f64)> {
        self.data
            .iter()
            .map(|(symbol, entry)| (symbol.clone(), entry.shares_outstanding.unwrap_or(1.0)))
            .collect()
    }

    /// Hash of everything that affects results. The run directory is
    /// excluded so moving a run does not orphan its checkpoints; the data
    /// section hashes by symbol, class, and point value rather than by path
    /// for the same reason. The generation count is excluded too: random
    /// streams are keyed per generation, so a run stopped early and resumed
    /// with a longer horizon produces the same candidates at every
    /// generation it shares with an uninterrupted run.
    pub fn config_hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.run_dir = PathBuf::new();
        normalized.generations = 0;
        for entry in normalized.data.values_mut() {
            entry.path = PathBuf::from(
                entry
                    .path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
        }
        let bytes = serde_json::to_vec(&normalized).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}
