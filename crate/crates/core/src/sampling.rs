//! Parent and cousin selection over the evolutionary database.
//!
//! Parents come from a two-stage mixture: with probability alpha a uniform
//! pick over the island's current map occupants, otherwise a uniform pick
//! over its whole population (falling back to the population when the
//! island holds no cells). Cousins combine the island's best scorers,
//! diverse relatives found by perturbing the parent's feature vector, and
//! uniform random members.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::feature_map::{Component, DimensionKind, EvolutionaryDatabase, FeatureDimension, FeatureVector};
use crate::islands::Island;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Weight of the map-occupant branch in parent selection.
    pub alpha: f64,
    /// Std deviation of the bin perturbation, shared by all continuous dims.
    pub sigma_d: f64,
    /// Bit flips applied to the categorical component; None = width/4,
    /// rounded to nearest and floored at 1.
    pub k_bf: Option<u32>,
    pub best_count: usize,
    pub diverse_count: usize,
    pub random_count: usize,
    /// Cell-lookup attempts allowed per requested diverse cousin.
    pub attempt_multiplier: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            sigma_d: 1.0,
            k_bf: None,
            best_count: 2,
            diverse_count: 3,
            random_count: 2,
            attempt_multiplier: 10,
        }
    }
}

impl SamplingConfig {
    pub fn effective_k_bf(&self, width: usize) -> u32 {
        self.k_bf
            .unwrap_or_else(|| ((width as f64 / 4.0).round() as u32).max(1))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("island {island} has no population to sample from")]
pub struct EmptyIsland {
    pub island: u32,
}

/// Island members that currently occupy a map cell, in population order.
pub fn map_members(island: &Island, db: &EvolutionaryDatabase) -> Vec<u64> {
    island
        .population
        .iter()
        .copied()
        .filter(|id| {
            db.record(*id)
                .and_then(|r| r.feature_vector.as_ref())
                .map_or(false, |v| db.cells.get(v).copied() == Some(*id))
        })
        .collect()
}

/// Draw one parent id from the island. Branch first (probability alpha for
/// the map-occupant pool), then pick uniformly inside the chosen pool.
pub fn sample_parent(
    island: &Island,
    db: &EvolutionaryDatabase,
    config: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<u64, EmptyIsland> {
    if island.population.is_empty() {
        return Err(EmptyIsland { island: island.id });
    }
    let members = map_members(island, db);
    let use_map = rng.random_bool(config.alpha);
    let pool: &[u64] = if use_map && !members.is_empty() {
        &members
    } else {
        &island.population
    };
    Ok(pool[rng.random_range(0..pool.len())])
}

/// Toggle `k_bf` independently chosen positions; the same position may be
/// picked more than once, so flips can cancel.
pub fn bitflip_perturb(bits: &str, k_bf: u32, rng: &mut ChaCha8Rng) -> String {
    let mut bytes: Vec<u8> = bits.bytes().collect();
    if bytes.is_empty() {
        return String::new();
    }
    for _ in 0..k_bf {
        let i = rng.random_range(0..bytes.len());
        bytes[i] = if bytes[i] == b'1' { b'0' } else { b'1' };
    }
    String::from_utf8(bytes).expect("bitstring stays ascii")
}

/// Jitter a feature vector: each continuous bin becomes the floor of a
/// normal draw centered on the parent bin (clamped into range); categorical
/// bits get `k_bf` flips.
pub fn perturb_feature_vector(
    parent: &FeatureVector,
    dims: &[FeatureDimension],
    config: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> FeatureVector {
    debug_assert_eq!(parent.components.len(), dims.len());
    let components = parent
        .components
        .iter()
        .zip(dims)
        .map(|(component, dim)| match (component, &dim.kind) {
            (Component::Bin(bin), DimensionKind::Continuous { bins, .. }) => {
                let normal = Normal::new(f64::from(*bin), config.sigma_d).expect("sigma_d is non-negative");
                let draw = normal.sample(rng).floor();
                let clamped = draw.max(0.0).min(f64::from(bins - 1));
                Component::Bin(clamped as u32)
            }
            (Component::Bits(bits), DimensionKind::Categorical { taxonomy }) => {
                let k = config.effective_k_bf(taxonomy.len());
                Component::Bits(bitflip_perturb(bits, k, rng))
            }
            _ => panic!("feature vector component does not match dimension kind"),
        })
        .collect();
    FeatureVector { components }
}

/// Select up to best + diverse + random cousins for a parent, deduplicated
/// in that priority order. Shortfalls are allowed everywhere: an island of
/// one member yields no cousins at all.
pub fn sample_cousins(
    parent_id: u64,
    island: &Island,
    db: &EvolutionaryDatabase,
    config: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<u64> {
    let mut best: Vec<u64> = island
        .population
        .iter()
        .copied()
        .filter(|id| *id != parent_id)
        .collect();
    best.sort_by(|a, b| {
        let sa = db.record(*a).map_or(f64::NEG_INFINITY, |r| r.sort_score());
        let sb = db.record(*b).map_or(f64::NEG_INFINITY, |r| r.sort_score());
        sb.partial_cmp(&sa).unwrap().then(a.cmp(b))
    });
    best.truncate(config.best_count);

    let mut diverse: Vec<u64> = Vec::new();
    if config.diverse_count > 0 {
        if let Some(parent_vector) = db.record(parent_id).and_then(|r| r.feature_vector.as_ref()) {
            let budget = config.attempt_multiplier * config.diverse_count;
            for _ in 0..budget {
                if diverse.len() >= config.diverse_count {
                    break;
                }
                let probe = perturb_feature_vector(parent_vector, &db.dimensions, config, rng);
                if let Some(&hit) = db.cells.get(&probe) {
                    if hit != parent_id && !diverse.contains(&hit) {
                        diverse.push(hit);
                    }
                }
            }
        }
    }

    let mut pool: Vec<u64> = island
        .population
        .iter()
        .copied()
        .filter(|id| *id != parent_id)
        .collect();
    let mut random: Vec<u64> = Vec::new();
    for _ in 0..config.random_count {
        if pool.is_empty() {
            break;
        }
        let i = rng.random_range(0..pool.len());
        random.push(pool.swap_remove(i));
    }

    let mut seen: BTreeSet<u64> = BTreeSet::new();
    best.into_iter()
        .chain(diverse)
        .chain(random)
        .filter(|id| seen.insert(*id))
        .collect()
}
