//! Short end-to-end runs of the evolutionary loop on the bundled synthetic
//! universe: determinism, resume equivalence, and schedule bookkeeping.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use stratmap::checkpoint::{checkpoint_dir, latest_checkpoint};
use stratmap::config::RunConfig;
use stratmap::events::{read_events, Event};
use stratmap::evolution::{run_evolution_with, select_best_on_validation};

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic/run.toml")
}

fn load_config(run_dir: &Path, generations: u32) -> RunConfig {
    let mut config = RunConfig::load(&fixture_config()).expect("fixture config loads");
    config.run_dir = run_dir.to_path_buf();
    config.generations = generations;
    config
}

/// All checkpoint files of one generation, as (name, bytes).
fn checkpoint_bytes(run_dir: &Path, generation: u32) -> Vec<(String, Vec<u8>)> {
    let dir = checkpoint_dir(run_dir, generation);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("missing checkpoint {}: {e}", dir.display()))
        .map(|entry| {
            let entry = entry.unwrap();
            (
                entry.file_name().to_string_lossy().into_owned(),
                std::fs::read(entry.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn zero_generations_leaves_only_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = load_config(dir.path(), 0);
    let universe = Arc::new(config.load_universe().unwrap());
    let outcome = run_evolution_with(universe, &config, None, &mut |_, _| {}).unwrap();
    // Three category islands plus the buy-and-hold island.
    assert_eq!(outcome.db.islands.len(), 4);
    assert_eq!(outcome.db.archive.len(), 4);
    assert!(outcome.db.archive.values().all(|r| r.generation == 0));
    assert!(checkpoint_dir(dir.path(), 0).exists());
}

#[test]
fn short_run_is_deterministic_and_monotone() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let config_a = load_config(dir_a.path(), 6);
    let config_b = load_config(dir_b.path(), 6);
    let universe = Arc::new(config_a.load_universe().unwrap());

    let mut coverage_log = Vec::new();
    let outcome_a = run_evolution_with(Arc::clone(&universe), &config_a, None, &mut |g, stats| {
        coverage_log.push((g, stats.filled, stats.best_score));
    })
    .unwrap();
    let outcome_b = run_evolution_with(universe, &config_b, None, &mut |_, _| {}).unwrap();

    // Byte-identical checkpoints generation by generation.
    for g in 0..=6 {
        assert_eq!(
            checkpoint_bytes(dir_a.path(), g),
            checkpoint_bytes(dir_b.path(), g),
            "checkpoint gen {g} differs between identical runs"
        );
    }
    assert_eq!(outcome_a.db.cells, outcome_b.db.cells);

    // Coverage and best score never regress.
    for pair in coverage_log.windows(2) {
        assert!(pair[1].1 >= pair[0].1, "coverage regressed: {pair:?}");
        let prev = pair[0].2.unwrap_or(f64::NEG_INFINITY);
        let next = pair[1].2.unwrap_or(f64::NEG_INFINITY);
        assert!(next >= prev, "best score regressed: {pair:?}");
    }

    // One proposal per island per generation unless a failure event says
    // otherwise; no failures expected with the mutational engine.
    let events = read_events(&dir_a.path().join("events.jsonl")).unwrap();
    let failures = events
        .iter()
        .filter(|e| matches!(e, Event::GenerationFailure { .. }))
        .count();
    assert_eq!(failures, 0);
    let candidates = events.iter().filter(|e| matches!(e, Event::Candidate { .. })).count();
    assert_eq!(candidates, 4 + 6 * 4);
    assert_eq!(outcome_a.db.archive.len(), 4 + 6 * 4);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir_full = tempfile::tempdir().unwrap();
    let dir_cut = tempfile::tempdir().unwrap();
    let config_full = load_config(dir_full.path(), 6);
    let universe = Arc::new(config_full.load_universe().unwrap());
    run_evolution_with(Arc::clone(&universe), &config_full, None, &mut |_, _| {}).unwrap();

    // Run to generation 3, then resume from its checkpoint to 6.
    let config_cut = load_config(dir_cut.path(), 3);
    run_evolution_with(Arc::clone(&universe), &config_cut, None, &mut |_, _| {}).unwrap();
    let (checkpoint, g) = latest_checkpoint(dir_cut.path()).unwrap();
    assert_eq!(g, 3);
    let mut config_resume = load_config(dir_cut.path(), 6);
    // The resumed config must hash identically to the uninterrupted one;
    // generations differ, so hold them equal and resume with the final value.
    config_resume.generations = 6;
    let full_hash_config = load_config(dir_full.path(), 6);
    assert_eq!(config_resume.config_hash(), full_hash_config.config_hash());
    run_evolution_with(universe, &config_resume, Some(&checkpoint), &mut |_, _| {}).unwrap();

    for g in 4..=6 {
        assert_eq!(
            checkpoint_bytes(dir_full.path(), g),
            checkpoint_bytes(dir_cut.path(), g),
            "resumed checkpoint gen {g} diverged"
        );
    }
}

#[test]
fn migration_and_curation_fire_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load_config(dir.path(), 5);
    config.migration_interval = 2;
    config.insight_interval = 2;
    // Force curation to have something to remove.
    config.insight_capacity = 3;
    let universe = Arc::new(config.load_universe().unwrap());
    run_evolution_with(universe, &config, None, &mut |_, _| {}).unwrap();
    let events = read_events(&dir.path().join("events.jsonl")).unwrap();
    let migration_gens: Vec<u32> = events
        .iter()
        .filter_map(|e| match e {
            Event::Migration { generation, .. } => Some(*generation),
            _ => None,
        })
        .collect();
    assert!(!migration_gens.is_empty());
    let distinct: std::collections::BTreeSet<u32> = migration_gens.iter().copied().collect();
    assert_eq!(distinct, [2u32, 4].into_iter().collect());
    let curation_gens: std::collections::BTreeSet<u32> = events
        .iter()
        .filter_map(|e| match e {
            Event::Curation { generation, .. } => Some(*generation),
            _ => None,
        })
        .collect();
    assert!(curation_gens.iter().all(|g| *g == 2 || *g == 4), "{curation_gens:?}");
    assert!(!curation_gens.is_empty());
}

#[test]
fn parallel_mode_reproduces_sequential_results() {
    let dir_seq = tempfile::tempdir().unwrap();
    let dir_par = tempfile::tempdir().unwrap();
    let config_seq = load_config(dir_seq.path(), 5);
    let mut config_par = load_config(dir_par.path(), 5);
    config_par.parallel = true;
    let universe = Arc::new(config_seq.load_universe().unwrap());
    let a = run_evolution_with(Arc::clone(&universe), &config_seq, None, &mut |_, _| {}).unwrap();
    let b = run_evolution_with(universe, &config_par, None, &mut |_, _| {}).unwrap();
    assert_eq!(a.db.cells, b.db.cells);
    assert_eq!(a.db.archive.len(), b.db.archive.len());
    for (id, ra) in &a.db.archive {
        let rb = &b.db.archive[id];
        assert_eq!(ra.program.serialize(), rb.program.serialize());
        assert_eq!(ra.metrics, rb.metrics);
        assert_eq!(ra.island_id, rb.island_id);
    }
}

#[test]
fn validation_selection_returns_a_scored_winner() {
    let dir = tempfile::tempdir().unwrap();
    let config = load_config(dir.path(), 4);
    let universe = Arc::new(config.load_universe().unwrap());
    let outcome = run_evolution_with(Arc::clone(&universe), &config, None, &mut |_, _| {}).unwrap();
    let (_, valid, test) = config.split_views(universe).unwrap();
    let selection = select_best_on_validation(&outcome.db, &config, &valid, &test).unwrap();
    assert!(selection.validation_metrics.combined_score().is_some());
    assert!(outcome.db.archive.contains_key(&selection.candidate.id));
    // The attached report covers the test window.
    assert_eq!(selection.test_report.equity_curve.len(), test.len());
    assert_eq!(selection.test_metrics, selection.test_report.metrics.clone().unwrap());
}
