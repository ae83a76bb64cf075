//! Quality-diversity evolutionary search over rule-based trading strategies.
//!
//! The crate is organized bottom-up: market data and metrics feed a daily
//! backtester; a small strategy language describes candidates; a feature
//! map archives them by behavioral niche; islands, samplers, and strategy
//! generators drive the evolutionary loop; checkpointing makes runs
//! resumable and reproducible.

pub mod backtest;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dsl;
pub mod events;
pub mod evolution;
pub mod feature_map;
pub mod generators;
pub mod islands;
pub mod metrics;
pub mod rng;
pub mod sampling;

pub use data::{AssetClass, Bar, DataError, DatasetView, PriceSeries, SplitLabel, SplitSpec, Universe};
pub use dsl::{Program, ProgramParseError};
pub use feature_map::{CandidateRecord, EvolutionaryDatabase, FeatureDimension, FeatureVector};
pub use metrics::MetricSet;
