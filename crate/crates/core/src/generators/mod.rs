//! Strategy proposal engines and the shared idea-capital types they feed.
//!
//! Two engines implement [`StrategyGenerator`]: a seeded mutational engine
//! that edits parent programs directly, and an LLM-backed engine that turns
//! the same context into prompts. Both produce a six-part hypothesis, a
//! parsed program, and (after backtesting) an analysis plus a one-line
//! insight that accumulates in the owning island's repository.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsl::program::IndicatorKind;
use crate::dsl::{DslOptions, Program};
use crate::feature_map::CandidateRecord;

pub mod llm;
pub mod mutational;

pub use llm::{ChatEndpoint, ChatMessage, EndpointConfig, EndpointError, HttpEndpoint, LlmGenerator, ScriptedEndpoint};
pub use mutational::MutationalGenerator;

/// Structured research hypothesis carried by every candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub hypothesis: String,
    pub rationale: String,
    pub objectives: String,
    pub expected_insights: String,
    pub risks_limitations: String,
    pub experimentation_ideas: String,
}

impl Hypothesis {
    pub const FIELDS: [&'static str; 6] = [
        "hypothesis",
        "rationale",
        "objectives",
        "expected_insights",
        "risks_limitations",
        "experimentation_ideas",
    ];

    pub fn field(&self, name: &str) -> Option<&str> {
        match name {
            "hypothesis" => Some(&self.hypothesis),
            "rationale" => Some(&self.rationale),
            "objectives" => Some(&self.objectives),
            "expected_insights" => Some(&self.expected_insights),
            "risks_limitations" => Some(&self.risks_limitations),
            "experimentation_ideas" => Some(&self.experimentation_ideas),
            _ => None,
        }
    }

    /// All six parts must carry text; returns the first empty field name.
    pub fn validate(&self) -> Result<(), &'static str> {
        for name in Self::FIELDS {
            if self.field(name).expect("known field").trim().is_empty() {
                return Err(match name {
                    "hypothesis" => "hypothesis",
                    "rationale" => "rationale",
                    "objectives" => "objectives",
                    "expected_insights" => "expected_insights",
                    "risks_limitations" => "risks_limitations",
                    _ => "experimentation_ideas",
                });
            }
        }
        Ok(())
    }
}

/// One distilled lesson from a finished experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insight {
    pub island_id: u32,
    pub generation: u32,
    pub text: String,
    pub source_candidate_id: u64,
    /// Hash of the whitespace-normalized text; the curation dedup key.
    pub content_hash: String,
}

impl Insight {
    pub fn new(island_id: u32, generation: u32, text: impl Into<String>, source_candidate_id: u64) -> Self {
        let text = text.into();
        let content_hash = content_hash(&text);
        Self {
            island_id,
            generation,
            text,
            source_candidate_id,
            content_hash,
        }
    }
}

/// Collapse whitespace runs and trim so cosmetic edits hash identically.
pub fn normalize_insight_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn content_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(normalize_insight_text(text).as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Drop exact-duplicate insights (keeping the earliest copy) and truncate the
/// repository to the most recent `n_max` entries. Returns how many were
/// removed. Running it twice with the same `n_max` is a no-op the second time.
pub fn curate_insights(repository: &mut Vec<Insight>, n_max: usize) -> usize {
    let before = repository.len();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    // Two passes keep the borrow checker happy: mark survivors, then retain.
    let keep: Vec<bool> = repository
        .iter()
        .map(|insight| seen.insert(insight.content_hash.as_str()))
        .collect();
    let mut idx = 0;
    repository.retain(|_| {
        let k = keep[idx];
        idx += 1;
        k
    });
    if repository.len() > n_max {
        let overflow = repository.len() - n_max;
        repository.drain(0..overflow);
    }
    before - repository.len()
}

/// Everything a generator may look at when proposing one candidate.
pub struct GenerationContext<'a> {
    pub parent: &'a CandidateRecord,
    pub cousins: Vec<&'a CandidateRecord>,
    /// Ordered oldest-first, exactly as stored in the island repository.
    pub insights: &'a [Insight],
    pub data_schema_prompt: &'a str,
    pub taxonomy: &'a [String],
    pub dsl_options: &'a DslOptions,
}

/// A successful proposal, ready for backtesting.
#[derive(Debug, Clone)]
pub struct GeneratorOutcome {
    pub hypothesis: Hypothesis,
    pub program: Program,
    /// How many repair round-trips the proposal consumed (0 = first try).
    pub repair_attempts: u32,
    /// Raw endpoint exchanges for audit; empty in mutational mode.
    pub raw_transcripts: Vec<String>,
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("proposal failed after {attempts} repair attempts: {last_error}")]
    GenerationFailure { attempts: u32, last_error: String },
    #[error("hypothesis response missing required <{missing}> section")]
    MalformedHypothesis { missing: String },
    #[error(transparent)]
    Endpoint(#[from] llm::EndpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Supported,
    Refuted,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Supported => "supported",
            Verdict::Refuted => "refuted",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Post-backtest reflection on one candidate.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub text: String,
    pub insight_text: String,
    pub verdict: Verdict,
}

/// A proposal engine. Implementations must be deterministic given the
/// context and the supplied stream (the LLM engine is deterministic given a
/// deterministic endpoint).
pub trait StrategyGenerator: Send + Sync {
    fn propose(&self, ctx: &GenerationContext<'_>, rng: &mut ChaCha8Rng) -> Result<GeneratorOutcome, GenerateError>;

    /// Reflect on a backtested candidate; never fails (falls back to a
    /// templated summary when richer machinery is unavailable).
    fn analyze(&self, candidate: &CandidateRecord, parent: Option<&CandidateRecord>) -> Analysis;

    /// Periodic repository maintenance: dedup and cap at `n_max`, returning
    /// how many entries were removed. Engines may consolidate instead of
    /// truncating.
    fn curate(&self, repository: &mut Vec<Insight>, n_max: usize) -> usize {
        curate_insights(repository, n_max)
    }
}

/// Which behavioral family an indicator most naturally evidences.
pub fn category_for_kind(kind: IndicatorKind) -> &'static str {
    match kind {
        IndicatorKind::Sma | IndicatorKind::Ema | IndicatorKind::MacdHist => "momentum_trend",
        IndicatorKind::Momentum => "breakout_pattern",
        IndicatorKind::Rsi | IndicatorKind::BollingerZ | IndicatorKind::StochasticKdj => "mean_reversion",
        IndicatorKind::RollingVol => "volatility",
    }
}

/// Rebuild a program's category tags from its indicator kinds, keeping only
/// tags present in the run taxonomy. Sizing by inverse volatility marks the
/// risk-allocation family when the taxonomy knows it.
pub fn recompute_tags(program: &Program, taxonomy: &[String]) -> Vec<String> {
    let mut wanted: BTreeSet<&str> = program
        .indicator_defs
        .iter()
        .map(|(_, spec)| category_for_kind(spec.kind))
        .collect();
    if matches!(program.sizing, crate::dsl::program::SizingRule::InverseVolatility { .. }) {
        wanted.insert("risk_allocation");
    }
    taxonomy
        .iter()
        .filter(|t| wanted.contains(t.as_str()))
        .cloned()
        .collect()
}

/// Apply [`recompute_tags`] to a program whose declared tags stray outside
/// the taxonomy; programs already inside it are left alone.
pub fn sanitize_tags(program: &mut Program, taxonomy: &[String]) {
    let inside = program
        .category_tags
        .iter()
        .all(|t| taxonomy.iter().any(|cat| cat == t));
    if !inside {
        program.category_tags = recompute_tags(program, taxonomy);
    }
}
