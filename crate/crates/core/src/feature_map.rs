//! The evolutionary database: a multi-dimensional elite map plus an
//! archive of every candidate ever produced.
//!
//! Continuous behavior metrics are binned over fixed ranges so cell
//! identity is stable across generations and checkpoints; the categorical
//! dimension encodes a program's category tags as a bitstring. Cells keep
//! the best-scoring occupant (ties keep the incumbent); everything else
//! lives on in the archive where samplers can still reach it.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::backtest::BacktestReport;
use crate::dsl::Program;
use crate::generators::Hypothesis;
use crate::islands::Island;
use crate::metrics::MetricSet;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureMapError {
    #[error("dimension {dimension}: value is not finite")]
    NonFiniteValue { dimension: String },
    #[error("tag {tag} is not in the category taxonomy")]
    UnknownTag { tag: String },
    #[error("metric {missing} is undefined; candidate cannot be placed in a cell")]
    InvalidMetrics { missing: &'static str },
    #[error("unknown dimension {name}")]
    UnknownDimension { name: String },
    #[error("projection dimensions must be distinct")]
    DuplicateDims,
    #[error("bad dimension definition: {reason}")]
    BadDimension { reason: String },
    #[error("bad feature vector key {key}: {reason}")]
    BadVectorKey { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DimensionKind {
    Continuous { range_min: f64, range_max: f64, bins: u32 },
    Categorical { taxonomy: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDimension {
    pub name: String,
    pub kind: DimensionKind,
}

impl FeatureDimension {
    pub fn continuous(name: &str, range_min: f64, range_max: f64, bins: u32) -> Result<Self, FeatureMapError> {
        if bins < 1 {
            return Err(FeatureMapError::BadDimension {
                reason: format!("{name}: bins must be at least 1"),
            });
        }
        if !(range_min.is_finite() && range_max.is_finite() && range_min < range_max) {
            return Err(FeatureMapError::BadDimension {
                reason: format!("{name}: need finite range_min < range_max"),
            });
        }
        Ok(Self {
            name: name.to_string(),
            kind: DimensionKind::Continuous { range_min, range_max, bins },
        })
    }

    pub fn categorical(name: &str, taxonomy: Vec<String>) -> Result<Self, FeatureMapError> {
        if taxonomy.is_empty() {
            return Err(FeatureMapError::BadDimension {
                reason: format!("{name}: taxonomy is empty"),
            });
        }
        for (i, tag) in taxonomy.iter().enumerate() {
            if taxonomy[..i].contains(tag) {
                return Err(FeatureMapError::BadDimension {
                    reason: format!("{name}: duplicate taxonomy entry {tag}"),
                });
            }
        }
        Ok(Self {
            name: name.to_string(),
            kind: DimensionKind::Categorical { taxonomy },
        })
    }

    /// Number of distinct values along this dimension.
    pub fn cardinality(&self) -> u64 {
        match &self.kind {
            DimensionKind::Continuous { bins, .. } => u64::from(*bins),
            DimensionKind::Categorical { taxonomy } => 1u64 << taxonomy.len().min(63),
        }
    }
}

/// Names used by [`compute_feature_vector`] to pull continuous values out of
/// a metric set, in the default dimension order.
pub const CONTINUOUS_METRIC_DIMS: [&str; 5] = [
    "num_transactions",
    "max_drawdown",
    "sharpe",
    "sortino",
    "cumulative_return",
];

pub const CATEGORY_DIM: &str = "category";

/// The standard six-dimensional map (five binned metrics plus the category
/// bitstring). `categorical_enabled = false` drops the sixth dimension.
pub fn default_dimensions(
    bins: u32,
    taxonomy: &[String],
    categorical_enabled: bool,
) -> Result<Vec<FeatureDimension>, FeatureMapError> {
    let mut dims = vec![
        FeatureDimension::continuous("num_transactions", 0.0, 5000.0, bins)?,
        FeatureDimension::continuous("max_drawdown", -1.0, 0.0, bins)?,
        FeatureDimension::continuous("sharpe", -2.0, 4.0, bins)?,
        FeatureDimension::continuous("sortino", -2.0, 6.0, bins)?,
        FeatureDimension::continuous("cumulative_return", -1.0, 5.0, bins)?,
    ];
    if categorical_enabled {
        dims.push(FeatureDimension::categorical(CATEGORY_DIM, taxonomy.to_vec())?);
    }
    Ok(dims)
}

/// One coordinate of a feature vector.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Bin(u32),
    Bits(String),
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Bin(b) => write!(f, "{b}"),
            Component::Bits(s) => f.write_str(s),
        }
    }
}

/// Cell address: one component per dimension, in dimension order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureVector {
    pub components: Vec<Component>,
}

impl FeatureVector {
    /// Stable text form: components joined with `|`.
    pub fn to_key(&self) -> String {
        let parts: Vec<String> = self
            .components
            .iter()
            .map(|c| match c {
                Component::Bin(b) => b.to_string(),
                Component::Bits(s) => s.clone(),
            })
            .collect();
        parts.join("|")
    }

    /// Parse a key back under the given dimensions (kind decides whether a
    /// part is a bin index or a bitstring).
    pub fn from_key(key: &str, dims: &[FeatureDimension]) -> Result<Self, FeatureMapError> {
        let parts: Vec<&str> = if key.is_empty() { Vec::new() } else { key.split('|').collect() };
        if parts.len() != dims.len() {
            return Err(FeatureMapError::BadVectorKey {
                key: key.to_string(),
                reason: format!("expected {} components, found {}", dims.len(), parts.len()),
            });
        }
        let mut components = Vec::with_capacity(parts.len());
        for (part, dim) in parts.iter().zip(dims) {
            match &dim.kind {
                DimensionKind::Continuous { bins, .. } => {
                    let idx: u32 = part.parse().map_err(|_| FeatureMapError::BadVectorKey {
                        key: key.to_string(),
                        reason: format!("{}: {part} is not a bin index", dim.name),
                    })?;
                    if idx >= *bins {
                        return Err(FeatureMapError::BadVectorKey {
                            key: key.to_string(),
                            reason: format!("{}: bin {idx} out of range", dim.name),
                        });
                    }
                    components.push(Component::Bin(idx));
                }
                DimensionKind::Categorical { taxonomy } => {
                    if part.len() != taxonomy.len() || !part.chars().all(|c| c == '0' || c == '1') {
                        return Err(FeatureMapError::BadVectorKey {
                            key: key.to_string(),
                            reason: format!("{}: {part} is not a width-{} bitstring", dim.name, taxonomy.len()),
                        });
                    }
                    components.push(Component::Bits(part.to_string()));
                }
            }
        }
        Ok(Self { components })
    }
}

/// Bin a metric value along a continuous dimension, clamping out-of-range
/// values to the edge bins.
pub fn bin_continuous(value: f64, dimension: &FeatureDimension) -> Result<u32, FeatureMapError> {
    let DimensionKind::Continuous { range_min, range_max, bins } = dimension.kind else {
        panic!("bin_continuous called on categorical dimension {}", dimension.name);
    };
    if !value.is_finite() {
        return Err(FeatureMapError::NonFiniteValue {
            dimension: dimension.name.clone(),
        });
    }
    let width = (range_max - range_min) / f64::from(bins);
    let raw = ((value - range_min) / width).floor();
    let clamped = raw.max(0.0).min(f64::from(bins - 1));
    Ok(clamped as u32)
}

/// Encode category tags as a bitstring over the taxonomy: bit i is 1 iff
/// taxonomy[i] is tagged. Empty tags give all zeros (the uncategorized,
/// buy-and-hold style niche).
pub fn encode_category(tags: &[String], taxonomy: &[String]) -> Result<String, FeatureMapError> {
    for tag in tags {
        if !taxonomy.contains(tag) {
            return Err(FeatureMapError::UnknownTag { tag: tag.clone() });
        }
    }
    Ok(taxonomy
        .iter()
        .map(|cat| if tags.contains(cat) { '1' } else { '0' })
        .collect())
}

/// Map a backtested candidate's metrics and tags onto a cell address.
/// Undefined ratio metrics make the candidate uncellable (`InvalidMetrics`).
pub fn compute_feature_vector(
    metrics: &MetricSet,
    tags: &[String],
    dims: &[FeatureDimension],
) -> Result<FeatureVector, FeatureMapError> {
    let mut components = Vec::with_capacity(dims.len());
    for dim in dims {
        match &dim.kind {
            DimensionKind::Continuous { .. } => {
                let value = match dim.name.as_str() {
                    "num_transactions" => metrics.num_transactions as f64,
                    "max_drawdown" => metrics.max_drawdown,
                    "sharpe" => metrics.sharpe.ok_or(FeatureMapError::InvalidMetrics { missing: "sharpe" })?,
                    "sortino" => metrics.sortino.ok_or(FeatureMapError::InvalidMetrics { missing: "sortino" })?,
                    "cumulative_return" => metrics.cumulative_return,
                    other => {
                        return Err(FeatureMapError::UnknownDimension { name: other.to_string() });
                    }
                };
                components.push(Component::Bin(bin_continuous(value, dim)?));
            }
            DimensionKind::Categorical { taxonomy } => {
                components.push(Component::Bits(encode_category(tags, taxonomy)?));
            }
        }
    }
    Ok(FeatureVector { components })
}

/// Everything known about one candidate strategy.
#[derive(Debug, Clone)]
pub struct CandidateRecord {
    pub id: u64,
    pub island_id: u32,
    pub generation: u32,
    pub hypothesis: Hypothesis,
    pub program: Program,
    /// None when the backtest failed outright.
    pub metrics: Option<MetricSet>,
    pub analysis: String,
    /// None when metrics are missing or a ratio was undefined.
    pub feature_vector: Option<FeatureVector>,
    pub parent_id: Option<u64>,
    pub cousin_ids: Vec<u64>,
    /// Full curves and fills; kept in memory during a run, not checkpointed.
    pub report: Option<BacktestReport>,
}

impl CandidateRecord {
    /// Combined score; `None` marks a failed or degenerate candidate.
    pub fn score(&self) -> Option<f64> {
        self.metrics.as_ref().and_then(|m| m.combined_score())
    }

    /// Score for ordering; failures sort below every real score.
    pub fn sort_score(&self) -> f64 {
        self.score().unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    Accepted { replaced: Option<u64> },
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IslandCoverage {
    pub filled: u64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapStats {
    pub filled: u64,
    pub total_cells: u64,
    pub coverage: f64,
    pub best_score: Option<f64>,
    pub best_cell: Option<FeatureVector>,
    /// Sum of cell occupant scores (quality-diversity mass).
    pub qd_sum: f64,
    pub per_island: BTreeMap<u32, IslandCoverage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorMetric {
    Sharpe,
    Sortino,
    InformationRatio,
    MaxDrawdown,
    CumulativeReturn,
    Trades,
    Score,
}

impl ColorMetric {
    pub const NAMES: [&'static str; 7] = [
        "sharpe",
        "sortino",
        "information_ratio",
        "max_drawdown",
        "cumulative_return",
        "num_transactions",
        "score",
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sharpe" => Self::Sharpe,
            "sortino" => Self::Sortino,
            "information_ratio" | "ir" => Self::InformationRatio,
            "max_drawdown" | "mdd" => Self::MaxDrawdown,
            "cumulative_return" | "cr" => Self::CumulativeReturn,
            "num_transactions" | "trades" => Self::Trades,
            "score" => Self::Score,
            _ => return None,
        })
    }

    pub fn value(self, record: &CandidateRecord) -> Option<f64> {
        let m = record.metrics.as_ref()?;
        match self {
            Self::Sharpe => m.sharpe,
            Self::Sortino => m.sortino,
            Self::InformationRatio => m.information_ratio,
            Self::MaxDrawdown => Some(m.max_drawdown),
            Self::CumulativeReturn => Some(m.cumulative_return),
            Self::Trades => Some(m.num_transactions as f64),
            Self::Score => m.combined_score(),
        }
    }
}

/// Elite map, archive, and island bookkeeping for one run.
#[derive(Debug, Clone)]
pub struct EvolutionaryDatabase {
    pub dimensions: Vec<FeatureDimension>,
    /// Cell address to the id of its best occupant.
    pub cells: BTreeMap<FeatureVector, u64>,
    /// Every candidate ever produced, keyed by id.
    pub archive: BTreeMap<u64, CandidateRecord>,
    pub islands: Vec<Island>,
    next_candidate_id: u64,
}

impl EvolutionaryDatabase {
    pub fn new(dimensions: Vec<FeatureDimension>) -> Self {
        Self {
            dimensions,
            cells: BTreeMap::new(),
            archive: BTreeMap::new(),
            islands: Vec::new(),
            next_candidate_id: 1,
        }
    }

    /// Sequential ids, starting at 1.
    pub fn allocate_id(&mut self) -> u64 {
        let id = self.next_candidate_id;
        self.next_candidate_id += 1;
        id
    }

    pub fn next_candidate_id(&self) -> u64 {
        self.next_candidate_id
    }

    /// Restore the id counter when loading a checkpoint.
    pub fn set_next_candidate_id(&mut self, next: u64) {
        self.next_candidate_id = next;
    }

    pub fn record(&self, id: u64) -> Option<&CandidateRecord> {
        self.archive.get(&id)
    }

    pub fn total_cells(&self) -> u64 {
        self.dimensions.iter().map(|d| d.cardinality()).product()
    }

    /// Archive the record and, when it has a cell address and a defined
    /// score, challenge the incumbent. Ties keep the incumbent; replaced
    /// occupants stay in the archive.
    pub fn insert_candidate(&mut self, record: CandidateRecord) -> InsertOutcome {
        let id = record.id;
        let vector = record.feature_vector.clone();
        let score = record.score();
        self.archive.insert(id, record);
        let (Some(vector), Some(score)) = (vector, score) else {
            return InsertOutcome::Rejected;
        };
        match self.cells.get(&vector) {
            None => {
                self.cells.insert(vector, id);
                InsertOutcome::Accepted { replaced: None }
            }
            Some(&incumbent_id) => {
                let incumbent = self
                    .archive
                    .get(&incumbent_id)
                    .expect("cell occupant is archived");
                if score > incumbent.sort_score() {
                    self.cells.insert(vector, id);
                    InsertOutcome::Accepted {
                        replaced: Some(incumbent_id),
                    }
                } else {
                    InsertOutcome::Rejected
                }
            }
        }
    }

    pub fn map_stats(&self) -> MapStats {
        let total = self.total_cells();
        let filled = self.cells.len() as u64;
        let mut best: Option<(f64, FeatureVector)> = None;
        let mut qd_sum = 0.0;
        let mut per_island_filled: BTreeMap<u32, u64> = BTreeMap::new();
        for island in &self.islands {
            per_island_filled.insert(island.id, 0);
        }
        for (vector, id) in &self.cells {
            let record = self.archive.get(id).expect("cell occupant is archived");
            let score = record.sort_score();
            qd_sum += score;
            if best.as_ref().map_or(true, |(b, _)| score > *b) {
                best = Some((score, vector.clone()));
            }
            *per_island_filled.entry(record.island_id).or_insert(0) += 1;
        }
        let per_island = per_island_filled
            .into_iter()
            .map(|(island, filled)| {
                (
                    island,
                    IslandCoverage {
                        filled,
                        coverage: filled as f64 / total as f64,
                    },
                )
            })
            .collect();
        MapStats {
            filled,
            total_cells: total,
            coverage: filled as f64 / total as f64,
            best_score: best.as_ref().map(|(s, _)| *s),
            best_cell: best.map(|(_, v)| v),
            qd_sum,
            per_island,
        }
    }

    fn dimension_index(&self, name: &str) -> Result<usize, FeatureMapError> {
        self.dimensions
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| FeatureMapError::UnknownDimension { name: name.to_string() })
    }

    /// Project the map onto two dimensions as a long-format CSV: one row per
    /// (value_a, value_b) pair, the cell column holding the maximum of
    /// `color` over all cells collapsing onto that pair (empty if none).
    pub fn export_projection(
        &self,
        dim_a: &str,
        dim_b: &str,
        color: ColorMetric,
    ) -> Result<String, FeatureMapError> {
        if dim_a == dim_b {
            return Err(FeatureMapError::DuplicateDims);
        }
        let a = self.dimension_index(dim_a)?;
        let b = self.dimension_index(dim_b)?;
        let metric_name = match color {
            ColorMetric::Sharpe => "sharpe",
            ColorMetric::Sortino => "sortino",
            ColorMetric::InformationRatio => "information_ratio",
            ColorMetric::MaxDrawdown => "max_drawdown",
            ColorMetric::CumulativeReturn => "cumulative_return",
            ColorMetric::Trades => "num_transactions",
            ColorMetric::Score => "score",
        };
        let mut out = format!("{dim_a},{dim_b},{metric_name}\n");
        if self.cells.is_empty() {
            return Ok(out);
        }
        let axis = |idx: usize| -> Vec<Component> {
            match &self.dimensions[idx].kind {
                DimensionKind::Continuous { bins, .. } => (0..*bins).map(Component::Bin).collect(),
                DimensionKind::Categorical { .. } => {
                    let observed: std::collections::BTreeSet<Component> = self
                        .cells
                        .keys()
                        .map(|v| v.components[idx].clone())
                        .collect();
                    observed.into_iter().collect()
                }
            }
        };
        let label = |c: &Component| match c {
            Component::Bin(i) => i.to_string(),
            Component::Bits(s) => s.clone(),
        };
        // Best color value per projected pair.
        let mut best: BTreeMap<(Component, Component), f64> = BTreeMap::new();
        for (vector, id) in &self.cells {
            let record = self.archive.get(id).expect("cell occupant is archived");
            let Some(value) = color.value(record) else { continue };
            let key = (vector.components[a].clone(), vector.components[b].clone());
            best.entry(key)
                .and_modify(|v| *v = v.max(value))
                .or_insert(value);
        }
        for va in axis(a) {
            for vb in axis(b) {
                let cell = best
                    .get(&(va.clone(), vb.clone()))
                    .map(|v| format!("{v}"))
                    .unwrap_or_default();
                out.push_str(&format!("{},{},{}\n", label(&va), label(&vb), cell));
            }
        }
        Ok(out)
    }
}
