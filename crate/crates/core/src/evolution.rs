//! The outer evolutionary loop: per-generation sampling, proposal,
//! backtesting, database insertion, migration, and insight curation, plus
//! checkpointing and the validation-based selection protocol.
//!
//! The loop is handed only the training view. Validation and test windows
//! enter exclusively through [`select_best_on_validation`], which runs
//! after evolution finishes.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::backtest::{run_backtest_with, BacktestOptions, BacktestReport, CostModel};
use crate::checkpoint::{checkpoint_load, checkpoint_save, CheckpointError};
use crate::config::{ConfigError, GeneratorKind, RunConfig};
use crate::data::{DatasetView, Universe};
use crate::dsl::baselines::{builtin_baseline, BaselineKind};
use crate::events::{Event, EventLog};
use crate::feature_map::{
    compute_feature_vector, CandidateRecord, EvolutionaryDatabase, InsertOutcome, MapStats,
};
use crate::generators::{
    GenerateError, GenerationContext, GeneratorOutcome, HttpEndpoint, Insight, LlmGenerator, MutationalGenerator,
    StrategyGenerator,
};
use crate::islands::{init_islands, migrate, IslandError};
use crate::metrics::MetricSet;
use crate::rng::{stream, Role};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Island(#[from] IslandError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("benchmark strategy `{name}` failed: {reason}")]
    BenchmarkFailure { name: String, reason: String },
    #[error("no candidate produced a valid combined score on the validation window")]
    NoValidCandidate,
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> EvolutionError + '_ {
    move |source| EvolutionError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Per-generation progress observer (generation, stats after insertion).
pub type Progress<'a> = &'a mut dyn FnMut(u32, &MapStats);

pub struct EvolutionOutcome {
    pub db: EvolutionaryDatabase,
    /// Last generation executed (equals `config.generations` on success).
    pub completed_generation: u32,
}

/// Zero-cost return series of the configured benchmark baseline over a
/// view; the reference every candidate's information ratio is taken
/// against.
pub fn benchmark_returns(config: &RunConfig, view: &DatasetView) -> Result<Vec<f64>, EvolutionError> {
    let kind = BaselineKind::from_name(&config.benchmark.kind).expect("validated benchmark name");
    let program = builtin_baseline(kind, &config.share_counts());
    let report = run_backtest_with(
        &program,
        view,
        &CostModel::zero(),
        config.initial_capital,
        &BacktestOptions::default(),
    )
    .map_err(|e| EvolutionError::BenchmarkFailure {
        name: kind.name().to_string(),
        reason: e.to_string(),
    })?;
    Ok(report.daily_returns[1..].to_vec())
}

fn data_schema_prompt(universe: &Universe) -> String {
    let symbols: Vec<String> = universe
        .series
        .iter()
        .map(|s| format!("{} ({:?}, point value {})", s.symbol, s.asset_class, s.point_value))
        .collect();
    format!(
        "Daily OHLCV bars for {} instruments: {}. Shared calendar {} to {}, {} trading days.",
        universe.series.len(),
        symbols.join(", "),
        universe.calendar.first().map(|d| d.to_string()).unwrap_or_default(),
        universe.calendar.last().map(|d| d.to_string()).unwrap_or_default(),
        universe.calendar.len()
    )
}

pub fn build_generator(config: &RunConfig) -> Box<dyn StrategyGenerator> {
    match config.generator {
        GeneratorKind::Mutational => Box::new(MutationalGenerator),
        GeneratorKind::Llm => {
            let endpoint_config = config.llm.clone().expect("validated llm section");
            Box::new(LlmGenerator::new(Box::new(HttpEndpoint::new(endpoint_config))))
        }
    }
}

/// Run (or resume) evolution with the generator named in the config.
pub fn run_evolution(config: &RunConfig) -> Result<EvolutionOutcome, EvolutionError> {
    let universe = Arc::new(config.load_universe()?);
    run_evolution_with(universe, config, None, &mut |_, _| {})
}

/// As [`run_evolution`] but on a caller-supplied universe.
pub fn run_evolution_with(
    universe: Arc<Universe>,
    config: &RunConfig,
    resume: Option<&Path>,
    progress: Progress<'_>,
) -> Result<EvolutionOutcome, EvolutionError> {
    let generator = build_generator(config);
    run_evolution_with_generator(universe, config, generator.as_ref(), resume, progress)
}

/// One candidate's sampled inputs for a generation.
struct SampleSpec {
    island: u32,
    parent_id: u64,
    cousin_ids: Vec<u64>,
}

/// Worker product for one island: the proposal and, when it parsed, the
/// training backtest.
struct ProposalResult {
    island: u32,
    parent_id: u64,
    cousin_ids: Vec<u64>,
    outcome: Result<(GeneratorOutcome, Result<BacktestReport, String>), GenerateError>,
}

pub fn run_evolution_with_generator(
    universe: Arc<Universe>,
    config: &RunConfig,
    generator: &dyn StrategyGenerator,
    resume: Option<&Path>,
    progress: Progress<'_>,
) -> Result<EvolutionOutcome, EvolutionError> {
    let config_hash = config.config_hash();
    let dimensions = config.dimensions()?;
    let (train, _valid, _test) = config.split_views(Arc::clone(&universe))?;
    let cost_model = config.costs.cost_model();
    let options = config.costs.backtest_options();
    let train_benchmark = benchmark_returns(config, &train)?;
    let schema_prompt = data_schema_prompt(&universe);

    std::fs::create_dir_all(&config.run_dir).map_err(io_at(&config.run_dir))?;
    let events_path = config.run_dir.join("events.jsonl");
    let mut events = EventLog::open(&events_path).map_err(io_at(&events_path))?;

    let (mut db, start_generation) = match resume {
        Some(checkpoint) => {
            let (db, generation) = checkpoint_load(checkpoint, &config_hash, &dimensions, &config.dsl)?;
            events
                .append(&Event::RunStart {
                    timestamp: chrono::Utc::now().to_rfc3339(),
                    config_hash: config_hash.clone(),
                    generations: config.generations,
                    islands: db.islands.len() as u32,
                    resumed_from: Some(generation),
                })
                .map_err(io_at(&events_path))?;
            (db, generation + 1)
        }
        None => {
            let mut db = EvolutionaryDatabase::new(dimensions.clone());
            init_islands(
                &mut db,
                &config.taxonomy,
                &train,
                &cost_model,
                &options,
                config.initial_capital,
                &train_benchmark,
                config.risk_free_daily,
            )?;
            events
                .append(&Event::RunStart {
                    timestamp: chrono::Utc::now().to_rfc3339(),
                    config_hash: config_hash.clone(),
                    generations: config.generations,
                    islands: db.islands.len() as u32,
                    resumed_from: None,
                })
                .map_err(io_at(&events_path))?;
            for record in db.archive.values() {
                events
                    .append(&Event::Candidate {
                        generation: 0,
                        island: record.island_id,
                        candidate_id: record.id,
                        parent_id: None,
                        accepted: record.feature_vector.is_some(),
                        score: record.score(),
                        cell: record.feature_vector.as_ref().map(|fv| fv.to_key()),
                        repair_attempts: 0,
                    })
                    .map_err(io_at(&events_path))?;
            }
            let stats = db.map_stats();
            events
                .append(&Event::GenerationStats {
                    generation: 0,
                    filled: stats.filled,
                    coverage: stats.coverage,
                    best_score: stats.best_score,
                    archive_size: db.archive.len() as u64,
                })
                .map_err(io_at(&events_path))?;
            checkpoint_save(&db, &config_hash, 0, &config.run_dir)?;
            progress(0, &stats);
            (db, 1)
        }
    };

    for generation in start_generation..=config.generations {
        run_one_generation(
            &mut db,
            generation,
            config,
            generator,
            &train,
            &cost_model,
            &options,
            &train_benchmark,
            &schema_prompt,
            &mut events,
            &events_path,
        )?;

        if generation % config.migration_interval == 0 {
            for event in migrate(&mut db, config.migration_fraction) {
                events
                    .append(&Event::Migration {
                        generation,
                        source: event.source,
                        dest: event.dest,
                        candidate_ids: event.candidate_ids,
                    })
                    .map_err(io_at(&events_path))?;
            }
        }

        if generation % config.insight_interval == 0 {
            for island_index in 0..db.islands.len() {
                let island = &mut db.islands[island_index];
                let removed = generator.curate(&mut island.insight_repository, config.insight_capacity);
                let repository_size = island.insight_repository.len();
                let island_id = island.id;
                if removed > 0 {
                    events
                        .append(&Event::Curation {
                            generation,
                            island: island_id,
                            removed,
                            repository_size,
                        })
                        .map_err(io_at(&events_path))?;
                }
            }
        }

        let stats = db.map_stats();
        events
            .append(&Event::GenerationStats {
                generation,
                filled: stats.filled,
                coverage: stats.coverage,
                best_score: stats.best_score,
                archive_size: db.archive.len() as u64,
            })
            .map_err(io_at(&events_path))?;
        checkpoint_save(&db, &config_hash, generation, &config.run_dir)?;
        progress(generation, &stats);
    }

    events
        .append(&Event::RunEnd {
            generation: config.generations,
        })
        .map_err(io_at(&events_path))?;
    Ok(EvolutionOutcome {
        db,
        completed_generation: config.generations,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_one_generation(
    db: &mut EvolutionaryDatabase,
    generation: u32,
    config: &RunConfig,
    generator: &dyn StrategyGenerator,
    train: &DatasetView,
    cost_model: &CostModel,
    options: &BacktestOptions,
    train_benchmark: &[f64],
    schema_prompt: &str,
    events: &mut EventLog,
    events_path: &Path,
) -> Result<(), EvolutionError> {
    // Stage 1: sample every island against the generation-start snapshot;
    // no insertion happens until all islands have drawn.
    let mut specs: Vec<SampleSpec> = Vec::with_capacity(db.islands.len());
    for island in &db.islands {
        let mut parent_rng = stream(config.master_seed, generation, island.id, Role::ParentSampling);
        let parent_id = match crate::sampling::sample_parent(island, db, &config.sampling, &mut parent_rng) {
            Ok(id) => id,
            Err(e) => {
                events
                    .append(&Event::GenerationFailure {
                        generation,
                        island: island.id,
                        error: e.to_string(),
                    })
                    .map_err(io_at(events_path))?;
                continue;
            }
        };
        let mut cousin_rng = stream(config.master_seed, generation, island.id, Role::CousinSampling);
        let cousin_ids = crate::sampling::sample_cousins(parent_id, island, db, &config.sampling, &mut cousin_rng);
        specs.push(SampleSpec {
            island: island.id,
            parent_id,
            cousin_ids,
        });
    }

    // Stage 2: propose and backtest. The parallel path farms islands out to
    // scoped threads; results are consumed in island order either way, so
    // both paths produce identical databases.
    let propose_one = |spec: &SampleSpec| -> ProposalResult {
        let parent = db.record(spec.parent_id).expect("sampled parent exists");
        let cousins: Vec<&CandidateRecord> = spec
            .cousin_ids
            .iter()
            .map(|id| db.record(*id).expect("sampled cousin exists"))
            .collect();
        let island = &db.islands[spec.island as usize];
        let ctx = GenerationContext {
            parent,
            cousins,
            insights: &island.insight_repository,
            data_schema_prompt: schema_prompt,
            taxonomy: &config.taxonomy,
            dsl_options: &config.dsl,
        };
        let mut proposal_rng = stream(config.master_seed, generation, spec.island, Role::Proposal);
        let outcome = generator.propose(&ctx, &mut proposal_rng).map(|proposal| {
            let backtest = run_backtest_with(&proposal.program, train, cost_model, config.initial_capital, options)
                .map_err(|e| e.to_string());
            (proposal, backtest)
        });
        ProposalResult {
            island: spec.island,
            parent_id: spec.parent_id,
            cousin_ids: spec.cousin_ids.clone(),
            outcome,
        }
    };

    let results: Vec<ProposalResult> = if config.parallel {
        let propose_ref = &propose_one;
        std::thread::scope(|scope| {
            let handles: Vec<_> = specs
                .iter()
                .map(|spec| scope.spawn(move || propose_ref(spec)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("island worker panicked")).collect()
        })
    } else {
        specs.iter().map(&propose_one).collect()
    };

    // Stage 3: insert in island id order at the barrier. Ids are allocated
    // here, so they are identical in sequential and parallel mode.
    for result in results {
        let (proposal, backtest) = match result.outcome {
            Ok(pair) => pair,
            Err(e) => {
                events
                    .append(&Event::GenerationFailure {
                        generation,
                        island: result.island,
                        error: e.to_string(),
                    })
                    .map_err(io_at(events_path))?;
                continue;
            }
        };
        let (metrics, report) = match backtest {
            Ok(mut r) => {
                r.finalize_metrics(train_benchmark, config.risk_free_daily);
                (r.metrics.clone(), Some(r))
            }
            Err(_) => (None, None),
        };
        let feature_vector = metrics.as_ref().and_then(|m| {
            compute_feature_vector(m, &proposal.program.category_tags, &db.dimensions).ok()
        });
        let id = db.allocate_id();
        if !proposal.raw_transcripts.is_empty() {
            let dir = config.run_dir.join("transcripts");
            std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
            let path = dir.join(format!("candidate_{id}.txt"));
            std::fs::write(&path, proposal.raw_transcripts.join("\n====\n")).map_err(io_at(&path))?;
        }
        let mut record = CandidateRecord {
            id,
            island_id: result.island,
            generation,
            hypothesis: proposal.hypothesis,
            program: proposal.program,
            metrics,
            analysis: String::new(),
            feature_vector,
            parent_id: Some(result.parent_id),
            cousin_ids: result.cousin_ids,
            report,
        };
        let analysis = generator.analyze(&record, db.record(result.parent_id));
        record.analysis = analysis.text;
        let insight = Insight::new(result.island, generation, analysis.insight_text, id);
        let score = record.score();
        let cell = record.feature_vector.as_ref().map(|fv| fv.to_key());
        let insert = db.insert_candidate(record);
        let island = &mut db.islands[result.island as usize];
        island.push_unique(id);
        island.insight_repository.push(insight);
        events
            .append(&Event::Candidate {
                generation,
                island: result.island,
                candidate_id: id,
                parent_id: Some(result.parent_id),
                accepted: matches!(insert, InsertOutcome::Accepted { .. }),
                score,
                cell,
                repair_attempts: proposal.repair_attempts,
            })
            .map_err(io_at(events_path))?;
    }
    Ok(())
}

/// The selection protocol's product: the winning record plus its
/// out-of-sample evidence.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub candidate: CandidateRecord,
    pub validation_metrics: MetricSet,
    pub test_metrics: MetricSet,
    pub test_report: BacktestReport,
}

/// Re-backtest every cell occupant on the validation window and pick the
/// best combined score (ties: earlier generation, then lower id). The
/// winner's test-window report is computed and attached.
pub fn select_best_on_validation(
    db: &EvolutionaryDatabase,
    config: &RunConfig,
    valid: &DatasetView,
    test: &DatasetView,
) -> Result<SelectionOutcome, EvolutionError> {
    let cost_model = config.costs.cost_model();
    let options = config.costs.backtest_options();
    let valid_benchmark = benchmark_returns(config, valid)?;
    let test_benchmark = benchmark_returns(config, test)?;

    let occupants: BTreeSet<u64> = db.cells.values().copied().collect();
    let mut best: Option<(f64, u64, MetricSet)> = None;
    // Ascending id order makes strict improvement keep the earliest
    // generation (ids are allocated generation by generation).
    for id in occupants {
        let record = db.record(id).expect("cells reference archived candidates");
        let Ok(mut report) = run_backtest_with(&record.program, valid, &cost_model, config.initial_capital, &options)
        else {
            continue;
        };
        report.finalize_metrics(&valid_benchmark, config.risk_free_daily);
        let metrics = report.metrics.expect("finalized");
        let Some(score) = metrics.combined_score() else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((best_score, _, _)) => score > *best_score,
        };
        if better {
            best = Some((score, id, metrics));
        }
    }
    let (_, winner_id, validation_metrics) = best.ok_or(EvolutionError::NoValidCandidate)?;
    let winner = db.record(winner_id).expect("winner archived");
    let mut test_report = run_backtest_with(&winner.program, test, &cost_model, config.initial_capital, &options)
        .map_err(|e| EvolutionError::BenchmarkFailure {
            name: winner.program.name.clone(),
            reason: format!("validation winner failed on the test window: {e}"),
        })?;
    test_report.finalize_metrics(&test_benchmark, config.risk_free_daily);
    let test_metrics = test_report.metrics.clone().expect("finalized");
    let mut candidate = winner.clone();
    candidate.report = Some(test_report.clone());
    Ok(SelectionOutcome {
        candidate,
        validation_metrics,
        test_metrics,
        test_report,
    })
}
