//! Per-generation database snapshots on disk.
//!
//! A checkpoint is a directory of structured text files: a candidate log in
//! id order, a cell-index snapshot, island state, and a manifest recording
//! the config hash plus a digest of every file. Loading verifies digests
//! and the config hash, so resumed runs provably continue the same
//! experiment. Nothing in a checkpoint carries a timestamp; two identical
//! runs write byte-identical checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsl::{parse_program_with, DslOptions};
use crate::feature_map::{CandidateRecord, EvolutionaryDatabase, FeatureDimension, FeatureVector};
use crate::generators::Hypothesis;
use crate::islands::Island;
use crate::metrics::MetricSet;

pub const FORMAT_VERSION: u32 = 1;
const CANDIDATES_FILE: &str = "candidates.jsonl";
const CELLS_FILE: &str = "cells.tsv";
const ISLANDS_FILE: &str = "islands.json";
const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {path}: {reason}")]
    CorruptCheckpoint { path: String, reason: String },
    #[error("config mismatch: checkpoint was written under config {found}, current config is {expected}")]
    ConfigMismatch { expected: String, found: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    generation: u32,
    config_hash: String,
    next_candidate_id: u64,
    /// file name -> sha256 of its bytes
    files: BTreeMap<String, String>,
}

/// One candidate as persisted; the program is stored as canonical text and
/// the feature vector as its cell key. Backtest reports are not persisted:
/// metrics carry everything later stages consult.
#[derive(Debug, Serialize, Deserialize)]
struct StoredCandidate {
    id: u64,
    island_id: u32,
    generation: u32,
    parent_id: Option<u64>,
    cousin_ids: Vec<u64>,
    hypothesis: Hypothesis,
    program: String,
    analysis: String,
    metrics: Option<MetricSet>,
    feature_vector: Option<String>,
}

/// Directory for generation `g` under a run's checkpoint root.
pub fn checkpoint_dir(run_dir: &Path, generation: u32) -> PathBuf {
    run_dir.join("checkpoints").join(format!("gen_{generation:04}"))
}

pub fn checkpoint_save(
    db: &EvolutionaryDatabase,
    config_hash: &str,
    generation: u32,
    run_dir: &Path,
) -> Result<PathBuf, CheckpointError> {
    let dir = checkpoint_dir(run_dir, generation);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let mut candidates = String::new();
    for record in db.archive.values() {
        let stored = StoredCandidate {
            id: record.id,
            island_id: record.island_id,
            generation: record.generation,
            parent_id: record.parent_id,
            cousin_ids: record.cousin_ids.clone(),
            hypothesis: record.hypothesis.clone(),
            program: record.program.serialize(),
            analysis: record.analysis.clone(),
            metrics: record.metrics.clone(),
            feature_vector: record.feature_vector.as_ref().map(|fv| fv.to_key()),
        };
        candidates.push_str(&serde_json::to_string(&stored).expect("candidate serializes"));
        candidates.push('\n');
    }

    let mut cells = String::new();
    for (vector, id) in &db.cells {
        cells.push_str(&format!("{}\t{}\n", vector.to_key(), id));
    }

    let islands = serde_json::to_string_pretty(&db.islands).expect("islands serialize");

    let mut files = BTreeMap::new();
    for (name, content) in [
        (CANDIDATES_FILE, candidates.as_str()),
        (CELLS_FILE, cells.as_str()),
        (ISLANDS_FILE, islands.as_str()),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(io_err(&path))?;
        files.insert(name.to_string(), sha256_hex(content.as_bytes()));
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        generation,
        config_hash: config_hash.to_string(),
        next_candidate_id: db.next_candidate_id(),
        files,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_text = toml::to_string(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, manifest_text).map_err(io_err(&manifest_path))?;
    Ok(dir)
}

/// Load a checkpoint directory, verifying file digests and the config hash.
/// Returns the reconstructed database and the generation it captured.
pub fn checkpoint_load(
    dir: &Path,
    expected_config_hash: &str,
    dimensions: &[FeatureDimension],
    dsl_options: &DslOptions,
) -> Result<(EvolutionaryDatabase, u32), CheckpointError> {
    let corrupt = |path: &Path, reason: String| CheckpointError::CorruptCheckpoint {
        path: path.display().to_string(),
        reason,
    };

    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        toml::from_str(&manifest_text).map_err(|e| corrupt(&manifest_path, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(corrupt(
            &manifest_path,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    if manifest.config_hash != expected_config_hash {
        return Err(CheckpointError::ConfigMismatch {
            expected: expected_config_hash.to_string(),
            found: manifest.config_hash,
        });
    }

    // Verify digests before trusting any content.
    let mut contents: BTreeMap<&str, String> = BTreeMap::new();
    for name in [CANDIDATES_FILE, CELLS_FILE, ISLANDS_FILE] {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let expected = manifest
            .files
            .get(name)
            .ok_or_else(|| corrupt(&manifest_path, format!("manifest lists no digest for {name}")))?;
        let actual = sha256_hex(text.as_bytes());
        if actual != *expected {
            return Err(corrupt(&path, "file digest does not match manifest".to_string()));
        }
        contents.insert(name, text);
    }

    let mut db = EvolutionaryDatabase::new(dimensions.to_vec());

    let candidates_path = dir.join(CANDIDATES_FILE);
    for (i, line) in contents[CANDIDATES_FILE].lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| corrupt(&candidates_path, format!("line {}: {reason}", i + 1));
        let stored: StoredCandidate = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let program = parse_program_with(&stored.program, dsl_options)
            .map_err(|e| bad(format!("stored program does not parse: {e}")))?;
        let feature_vector = match stored.feature_vector {
            None => None,
            Some(key) => Some(
                FeatureVector::from_key(&key, dimensions)
                    .map_err(|e| bad(format!("stored feature vector invalid: {e}")))?,
            ),
        };
        let record = CandidateRecord {
            id: stored.id,
            island_id: stored.island_id,
            generation: stored.generation,
            hypothesis: stored.hypothesis,
            program,
            metrics: stored.metrics,
            analysis: stored.analysis,
            feature_vector,
            parent_id: stored.parent_id,
            cousin_ids: stored.cousin_ids,
            report: None,
        };
        if db.archive.insert(record.id, record).is_some() {
            return Err(bad("duplicate candidate id".to_string()));
        }
    }

    let cells_path = dir.join(CELLS_FILE);
    for (i, line) in contents[CELLS_FILE].lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| corrupt(&cells_path, format!("line {}: {reason}", i + 1));
        let (key, id_text) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected key<TAB>id".to_string()))?;
        let vector = FeatureVector::from_key(key, dimensions).map_err(|e| bad(e.to_string()))?;
        let id: u64 = id_text.trim().parse().map_err(|_| bad("bad id".to_string()))?;
        if !db.archive.contains_key(&id) {
            return Err(bad(format!("cell points to unknown candidate {id}")));
        }
        db.cells.insert(vector, id);
    }

    let islands_path = dir.join(ISLANDS_FILE);
    let islands: Vec<Island> = serde_json::from_str(&contents[ISLANDS_FILE])
        .map_err(|e| corrupt(&islands_path, e.to_string()))?;
    db.islands = islands;

    db.set_next_candidate_id(manifest.next_candidate_id);
    Ok((db, manifest.generation))
}

/// Most recent checkpoint under `run_dir`, if any.
pub fn latest_checkpoint(run_dir: &Path) -> Option<(PathBuf, u32)> {
    let root = run_dir.join("checkpoints");
    let mut best: Option<(PathBuf, u32)> = None;
    for entry in std::fs::read_dir(root).ok()?.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("gen_") {
            if let Ok(g) = num.parse::<u32>() {
                if best.as_ref().is_none_or(|(_, b)| g > *b) {
                    best = Some((entry.path(), g));
                }
            }
        }
    }
    best
}
