//! Island lifecycle: one island per category plus a buy-and-hold island,
//! template seeding, and periodic ring migration of elites.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{run_backtest_with, BacktestOptions, CostModel};
use crate::data::DatasetView;
use crate::dsl::{parse_program, Program};
use crate::feature_map::{compute_feature_vector, CandidateRecord, EvolutionaryDatabase};
use crate::generators::{Hypothesis, Insight};

/// One island: a seed category, the ids it has produced or received, and its
/// accumulated insights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Island {
    pub id: u32,
    /// None marks the uncategorized buy-and-hold island.
    pub seed_category: Option<String>,
    /// Insertion-ordered, duplicate-free candidate ids.
    pub population: Vec<u64>,
    pub insight_repository: Vec<Insight>,
}

impl Island {
    pub fn new(id: u32, seed_category: Option<String>) -> Self {
        Self {
            id,
            seed_category,
            population: Vec::new(),
            insight_repository: Vec::new(),
        }
    }

    /// Append an id unless already present; reports whether it was added.
    pub fn push_unique(&mut self, candidate_id: u64) -> bool {
        if self.population.contains(&candidate_id) {
            false
        } else {
            self.population.push(candidate_id);
            true
        }
    }
}

#[derive(Debug, Error)]
pub enum IslandError {
    #[error("seed strategy for island {island} ({category}) failed its backtest: {reason}")]
    SeedBacktestFailure {
        island: u32,
        category: String,
        reason: String,
    },
}

/// A migration transfer: ids newly appended to `dest`'s population.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationEvent {
    pub source: u32,
    pub dest: u32,
    pub candidate_ids: Vec<u64>,
}

/// Representative starter program for a category (None = buy and hold).
/// Unrecognized categories fall back to a slow momentum template so custom
/// taxonomies still seed; each template is tagged with exactly its category.
pub fn seed_program(category: Option<&str>) -> Program {
    let text = match category {
        None => "strategy \"seed_buy_hold\" {\n\
             \x20 entry: always;\n\
             \x20 exit: never;\n\
             \x20 sizing: equal_weight;\n\
             \x20 rebalance: every_n_days(10000);\n}\n"
            .to_string(),
        Some(cat) => {
            let body = match cat {
                "momentum_trend" => "\x20 indicators { fast = sma(10); slow = sma(30); }\n\
                     \x20 entry: fast crosses_above slow;\n\
                     \x20 exit: fast crosses_below slow;\n\
                     \x20 sizing: equal_weight;\n\
                     \x20 rebalance: daily;\n"
                    .to_string(),
                "mean_reversion" => "\x20 indicators { z = bollinger_z(20); }\n\
                     \x20 entry: z < -1.5;\n\
                     \x20 exit: z > 0;\n\
                     \x20 sizing: equal_weight;\n\
                     \x20 rebalance: daily;\n"
                    .to_string(),
                "volatility" => "\x20 indicators { }\n\
                     \x20 entry: always;\n\
                     \x20 exit: never;\n\
                     \x20 sizing: inverse_volatility(20);\n\
                     \x20 rebalance: daily;\n"
                    .to_string(),
                "volume_liquidity" => "\x20 indicators { v = rolling_vol(10); }\n\
                     \x20 entry: v < 0.05;\n\
                     \x20 exit: v > 0.1;\n\
                     \x20 sizing: equal_weight;\n\
                     \x20 rebalance: daily;\n"
                    .to_string(),
                "breakout_pattern" => "\x20 indicators { m = momentum(20); }\n\
                     \x20 entry: m > 0.08;\n\
                     \x20 exit: m < 0;\n\
                     \x20 sizing: equal_weight;\n\
                     \x20 rebalance: daily;\n"
                    .to_string(),
                "correlation_pairs" => "\x20 indicators { z = bollinger_z(30); }\n\
                     \x20 entry: z < -2;\n\
                     \x20 exit: z > -0.5;\n\
                     \x20 sizing: equal_weight;\n\
                     \x20 rebalance: daily;\n"
                    .to_string(),
                "risk_allocation" => "\x20 indicators { }\n\
                     \x20 entry: always;\n\
                     \x20 exit: never;\n\
                     \x20 sizing: inverse_volatility(60);\n\
                     \x20 rebalance: daily;\n"
                    .to_string(),
                "seasonal_calendar" => "\x20 indicators { }\n\
                     \x20 entry: always;\n\
                     \x20 exit: never;\n\
                     \x20 sizing: equal_weight;\n\
                     \x20 rebalance: monthly;\n"
                    .to_string(),
                _ => "\x20 indicators { m = momentum(40); }\n\
                     \x20 entry: m > 0;\n\
                     \x20 exit: m < -0.05;\n\
                     \x20 sizing: equal_weight;\n\
                     \x20 rebalance: daily;\n"
                    .to_string(),
            };
            format!("strategy \"seed_{cat}\" {{\n\x20 categories: {cat};\n{body}}}\n")
        }
    };
    parse_program(&text).expect("seed template is well formed")
}

fn seed_hypothesis(category: Option<&str>) -> Hypothesis {
    let label = category.unwrap_or("buy and hold");
    Hypothesis {
        hypothesis: format!("A representative {label} strategy establishes a baseline niche."),
        rationale: format!("Every island starts from a simple, known-good {label} template."),
        objectives: "Populate the initial map cell and give samplers a live parent.".to_string(),
        expected_insights: format!("How the plain {label} approach scores on the training window."),
        risks_limitations: "Template parameters are generic, not tuned to the universe.".to_string(),
        experimentation_ideas: "Perturb lookbacks, thresholds, and sizing in later generations.".to_string(),
    }
}

/// Build C category islands plus one buy-and-hold island, backtest every
/// seed on the training view, and insert the records. A seed that cannot
/// complete its backtest aborts initialization.
#[allow(clippy::too_many_arguments)]
pub fn init_islands(
    db: &mut EvolutionaryDatabase,
    taxonomy: &[String],
    train: &DatasetView,
    cost_model: &CostModel,
    options: &BacktestOptions,
    initial_capital: f64,
    benchmark_returns: &[f64],
    risk_free_daily: f64,
) -> Result<(), IslandError> {
    assert!(!taxonomy.is_empty(), "taxonomy must be non-empty");
    assert!(db.islands.is_empty(), "islands already initialized");
    let mut slots: Vec<Option<String>> = taxonomy.iter().cloned().map(Some).collect();
    slots.push(None); // buy-and-hold island, id C
    for (i, category) in slots.into_iter().enumerate() {
        let island_id = i as u32;
        let mut island = Island::new(island_id, category.clone());
        let program = seed_program(category.as_deref());
        let mut report = run_backtest_with(&program, train, cost_model, initial_capital, options).map_err(|e| {
            IslandError::SeedBacktestFailure {
                island: island_id,
                category: category.clone().unwrap_or_else(|| "buy_hold".into()),
                reason: e.to_string(),
            }
        })?;
        report.finalize_metrics(benchmark_returns, risk_free_daily);
        let metrics = report.metrics;
        // Seeds with degenerate ratios stay archive-only; that is not an
        // initialization failure.
        let feature_vector = metrics
            .as_ref()
            .and_then(|m| compute_feature_vector(m, &program.category_tags, &db.dimensions).ok());
        let id = db.allocate_id();
        let record = CandidateRecord {
            id,
            island_id,
            generation: 0,
            hypothesis: seed_hypothesis(category.as_deref()),
            program,
            metrics,
            analysis: format!(
                "Seed template for island {island_id} ({}).",
                category.as_deref().unwrap_or("buy and hold")
            ),
            feature_vector,
            parent_id: None,
            cousin_ids: Vec::new(),
            report: Some(report),
        };
        db.insert_candidate(record);
        island.push_unique(id);
        db.islands.push(island);
    }
    Ok(())
}

/// Copy each island's top ⌈fraction×|I|⌉ members (by combined score, ties to
/// the older id) into both ring neighbors. Sources are unchanged; ids a
/// destination already holds are skipped. Migrant lists are computed from a
/// simultaneous snapshot of all populations before any transfer lands.
pub fn migrate(db: &mut EvolutionaryDatabase, fraction: f64) -> Vec<MigrationEvent> {
    let n = db.islands.len();
    if n < 2 {
        return Vec::new();
    }
    let snapshots: Vec<Vec<u64>> = db.islands.iter().map(|i| i.population.clone()).collect();
    let mut transfers: Vec<(usize, usize, Vec<u64>)> = Vec::new();
    for (i, snapshot) in snapshots.iter().enumerate() {
        if snapshot.is_empty() {
            continue;
        }
        let mut ranked = snapshot.clone();
        ranked.sort_by(|a, b| {
            let sa = db.archive.get(a).map_or(f64::NEG_INFINITY, |r| r.sort_score());
            let sb = db.archive.get(b).map_or(f64::NEG_INFINITY, |r| r.sort_score());
            sb.partial_cmp(&sa).unwrap().then(a.cmp(b))
        });
        let count = ((fraction * snapshot.len() as f64).ceil() as usize).max(1);
        let migrants: Vec<u64> = ranked.into_iter().take(count).collect();
        let left = (i + n - 1) % n;
        let right = (i + 1) % n;
        transfers.push((i, left, migrants.clone()));
        if right != left {
            transfers.push((i, right, migrants));
        }
    }
    let mut events = Vec::new();
    for (source, dest, migrants) in transfers {
        let added: Vec<u64> = migrants
            .into_iter()
            .filter(|id| db.islands[dest].push_unique(*id))
            .collect();
        if !added.is_empty() {
            events.push(MigrationEvent {
                source: source as u32,
                dest: dest as u32,
                candidate_ids: added,
            });
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{align_calendar, AssetClass, Bar, PriceSeries, SplitLabel};
    use crate::feature_map::default_dimensions;
    use crate::metrics::MetricSet;
    use chrono::NaiveDate;
    use std::sync::Arc;

    fn bar(date: NaiveDate, close: f64) -> Bar {
        Bar {
            date,
            open: close,
            high: close * 1.01,
            low: close * 0.99,
            close,
            volume: 1_000_000,
        }
    }

    fn wiggly_series(symbol: &str, days: usize, base: f64, amp: f64) -> PriceSeries {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let bars: Vec<Bar> = (0..days)
            .map(|i| {
                let t = i as f64;
                let close = base * (1.0 + 0.002 * t) + amp * (t * 0.7).sin();
                bar(start + chrono::Days::new(i as u64), close)
            })
            .collect();
        PriceSeries::new(symbol.to_string(), AssetClass::Equity, 1.0, bars).unwrap()
    }

    fn train_view(days: usize) -> DatasetView {
        let u = align_calendar(vec![
            wiggly_series("AAA", days, 100.0, 3.0),
            wiggly_series("BBB", days, 50.0, 9.0),
        ])
        .unwrap();
        let len = u.len();
        DatasetView::new(Arc::new(u), SplitLabel::Train, 0, len - 1)
    }

    fn full_taxonomy() -> Vec<String> {
        [
            "momentum_trend",
            "mean_reversion",
            "volatility",
            "volume_liquidity",
            "breakout_pattern",
            "correlation_pairs",
            "risk_allocation",
            "seasonal_calendar",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn seeded_db(taxonomy: &[String], days: usize) -> EvolutionaryDatabase {
        let dims = default_dimensions(16, taxonomy, true).unwrap();
        let mut db = EvolutionaryDatabase::new(dims);
        let train = train_view(days);
        let benchmark = vec![0.0005; train.len() - 1];
        init_islands(
            &mut db,
            taxonomy,
            &train,
            &CostModel::default(),
            &BacktestOptions::default(),
            100_000.0,
            &benchmark,
            0.0,
        )
        .unwrap();
        db
    }

    #[test]
    fn eight_categories_make_nine_islands() {
        let taxonomy = full_taxonomy();
        let db = seeded_db(&taxonomy, 140);
        assert_eq!(db.islands.len(), 9);
        assert_eq!(db.archive.len(), 9);
        for (i, island) in db.islands.iter().enumerate() {
            assert_eq!(island.id, i as u32);
            assert_eq!(island.population.len(), 1);
            let record = db.record(island.population[0]).unwrap();
            assert_eq!(record.island_id, island.id);
            assert_eq!(record.generation, 0);
        }
        assert_eq!(db.islands[8].seed_category, None);
        assert_eq!(db.islands[3].seed_category.as_deref(), Some("volume_liquidity"));
    }

    #[test]
    fn buy_hold_seed_is_untagged() {
        let taxonomy = full_taxonomy();
        let db = seeded_db(&taxonomy, 140);
        let bh = db.record(db.islands[8].population[0]).unwrap();
        assert!(bh.program.category_tags.is_empty());
        if let Some(v) = &bh.feature_vector {
            let key = v.to_key();
            assert!(key.ends_with("00000000"), "all-zero bitstring, got {key}");
        }
    }

    #[test]
    fn custom_category_uses_fallback_template() {
        let taxonomy: Vec<String> = vec!["lunar_phase".to_string()];
        let db = seeded_db(&taxonomy, 140);
        assert_eq!(db.islands.len(), 2);
        let seed = db.record(db.islands[0].population[0]).unwrap();
        assert_eq!(seed.program.category_tags, vec!["lunar_phase".to_string()]);
        assert_eq!(seed.program.name, "seed_lunar_phase");
    }

    fn dummy_record(id: u64, island_id: u32, score: f64) -> CandidateRecord {
        CandidateRecord {
            id,
            island_id,
            generation: 1,
            hypothesis: seed_hypothesis(None),
            program: seed_program(None),
            metrics: Some(MetricSet {
                sharpe: Some(score),
                sortino: Some(0.0),
                information_ratio: Some(0.0),
                max_drawdown: 0.0,
                cumulative_return: 0.0,
                num_transactions: 0,
            }),
            analysis: String::new(),
            feature_vector: None,
            parent_id: None,
            cousin_ids: Vec::new(),
            report: None,
        }
    }

    fn migration_db(populations: &[&[(u64, f64)]]) -> EvolutionaryDatabase {
        let dims = default_dimensions(4, &["a".to_string()], true).unwrap();
        let mut db = EvolutionaryDatabase::new(dims);
        for (i, members) in populations.iter().enumerate() {
            let mut island = Island::new(i as u32, Some("a".into()));
            for (id, score) in members.iter() {
                db.insert_candidate(dummy_record(*id, i as u32, *score));
                island.push_unique(*id);
            }
            db.islands.push(island);
        }
        db
    }

    #[test]
    fn island_of_ten_sends_one_migrant_to_both_neighbors() {
        let pop0: Vec<(u64, f64)> = (1..=10).map(|id| (id, id as f64)).collect();
        let mut db = migration_db(&[&pop0, &[(20, 0.0)], &[(30, 0.0)]]);
        let events = migrate(&mut db, 0.10);
        // Island 0's best is id 10; both neighbors (2 and 1) receive it.
        let from_zero: Vec<&MigrationEvent> = events.iter().filter(|e| e.source == 0).collect();
        assert_eq!(from_zero.len(), 2);
        for e in &from_zero {
            assert_eq!(e.candidate_ids, vec![10]);
        }
        assert!(db.islands[1].population.contains(&10));
        assert!(db.islands[2].population.contains(&10));
        // Copy semantics: island 0 keeps all of its own members (it also
        // receives its neighbors' migrants).
        assert_eq!(&db.islands[0].population[..10], &(1..=10).collect::<Vec<u64>>()[..]);
    }

    #[test]
    fn two_island_ring_copies_once() {
        let mut db = migration_db(&[&[(1, 1.0), (2, 2.0)], &[(3, 3.0)]]);
        let events = migrate(&mut db, 0.10);
        assert_eq!(db.islands[0].population, vec![1, 2, 3]);
        assert_eq!(db.islands[1].population, vec![3, 2]);
        // Each island emits exactly one transfer (left == right in a 2-ring).
        assert_eq!(events.len(), 2);
    }

    #[test]
    fn repeated_migration_stays_duplicate_free() {
        let mut db = migration_db(&[&[(1, 1.0), (2, 2.0)], &[(3, 3.0)], &[(4, 4.0)]]);
        migrate(&mut db, 0.10);
        migrate(&mut db, 0.10);
        migrate(&mut db, 0.10);
        let total: usize = db.islands.iter().map(|i| i.population.len()).sum();
        for island in &db.islands {
            let mut seen = std::collections::BTreeSet::new();
            for id in &island.population {
                assert!(seen.insert(*id), "duplicate {id} in island {}", island.id);
            }
        }
        // No new records exist, only shared references to the original four.
        assert_eq!(db.archive.len(), 4);
        assert!(total <= 3 * 4);
    }

    #[test]
    fn migrants_meet_the_percentile_bar() {
        let pop0: Vec<(u64, f64)> = (1..=20).map(|id| (id, (id % 7) as f64)).collect();
        let mut db = migration_db(&[&pop0, &[(100, 0.0)], &[(101, 0.0)]]);
        let events = migrate(&mut db, 0.10);
        let mut scores: Vec<f64> = pop0.iter().map(|(_, s)| *s).collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p90 = scores[(0.9 * (scores.len() as f64 - 1.0)).floor() as usize];
        for e in events.iter().filter(|e| e.source == 0) {
            for id in &e.candidate_ids {
                let s = db.record(*id).unwrap().sort_score();
                assert!(s >= p90, "migrant score {s} below 90th percentile {p90}");
            }
        }
    }

    #[test]
    fn single_island_migration_is_a_no_op() {
        let mut db = migration_db(&[&[(1, 1.0)]]);
        assert!(migrate(&mut db, 0.10).is_empty());
        assert_eq!(db.islands[0].population, vec![1]);
    }
}
