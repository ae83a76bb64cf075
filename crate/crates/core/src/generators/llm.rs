//! Chat-endpoint backed proposal engine.
//!
//! Drives a two-phase prompt flow (hypothesis, then strategy code) against
//! any chat-completion style HTTP service, with a bounded repair loop shared
//! across both phases. A scripted endpoint stands in for the network in
//! tests.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dsl::parse_program_with;
use crate::feature_map::CandidateRecord;
use crate::generators::mutational::templated_analysis;
use crate::generators::{
    curate_insights, sanitize_tags, Analysis, GenerateError, GenerationContext, GeneratorOutcome, Hypothesis,
    Insight, StrategyGenerator, Verdict,
};

const HYPOTHESIS_TEMPLATE: &str = include_str!("../../prompts/hypothesis.txt");
const CODING_TEMPLATE: &str = include_str!("../../prompts/coding.txt");
const REPAIR_TEMPLATE: &str = include_str!("../../prompts/repair.txt");
const ANALYSIS_TEMPLATE: &str = include_str!("../../prompts/analysis.txt");
const CONSOLIDATE_TEMPLATE: &str = include_str!("../../prompts/consolidate.txt");
const DSL_SCHEMA: &str = include_str!("../../docs/dsl_schema.md");

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EndpointError {
    #[error("network error: {message}")]
    Network { message: String },
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("protocol error: {message}")]
    Protocol { message: String },
    #[error("no api token: set {var} or configure api_key")]
    MissingToken { var: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

/// One round-trip against a chat-completion service: message list in,
/// assistant text out.
pub trait ChatEndpoint: Send + Sync {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, EndpointError>;
}

fn default_api_key_env() -> String {
    "STRATMAP_API_TOKEN".to_string()
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    2
}
fn default_retry_backoff_ms() -> u64 {
    500
}
fn default_max_concurrency() -> usize {
    4
}
fn default_temperature() -> f64 {
    0.7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".to_string(),
            model: "local-model".to_string(),
            temperature: default_temperature(),
            api_key: None,
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            retry_backoff_ms: default_retry_backoff_ms(),
            max_concurrency: default_max_concurrency(),
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self { permits: Mutex::new(n.max(1)), cv: Condvar::new() }
    }
    fn acquire(&self) {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
    }
    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

pub struct HttpEndpoint {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpEndpoint {
    pub fn new(config: EndpointConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .expect("http client construction cannot fail with static options");
        let gate = Gate::new(config.max_concurrency);
        Self { config, client, gate }
    }

    fn token(&self) -> Result<String, EndpointError> {
        std::env::var(&self.config.api_key_env)
            .ok()
            .filter(|t| !t.is_empty())
            .or_else(|| self.config.api_key.clone())
            .ok_or_else(|| EndpointError::MissingToken { var: self.config.api_key_env.clone() })
    }

    fn url(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        if base.contains("/chat/") {
            base.to_string()
        } else {
            format!("{base}/v1/chat/completions")
        }
    }

    fn chat_once(&self, token: &str, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        });
        let response = self
            .client
            .post(self.url())
            .bearer_auth(token)
            .json(&body)
            .send()
            .map_err(|e| EndpointError::Network { message: e.to_string() })?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| EndpointError::Network { message: e.to_string() })?;
        if status >= 400 {
            return Err(EndpointError::Http { status, body: text.chars().take(2000).collect() });
        }
        let parsed: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| EndpointError::Protocol { message: format!("response is not json: {e}") })?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| EndpointError::Protocol {
                message: "response lacks choices[0].message.content".to_string(),
            })
    }
}

impl ChatEndpoint for HttpEndpoint {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        let token = self.token()?;
        self.gate.acquire();
        let result = (|| {
            let mut last = EndpointError::Network { message: "no attempt made".into() };
            for attempt in 0..=self.config.max_retries {
                match self.chat_once(&token, messages) {
                    Ok(text) => return Ok(text),
                    // Retry transient failures only; 4xx and malformed bodies
                    // will not improve on their own.
                    Err(e @ EndpointError::Network { .. }) | Err(e @ EndpointError::Http { status: 500..=599, .. }) => {
                        last = e;
                        if attempt < self.config.max_retries {
                            let backoff = self.config.retry_backoff_ms.saturating_mul(1 << attempt);
                            std::thread::sleep(Duration::from_millis(backoff));
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(last)
        })();
        self.gate.release();
        result
    }
}

/// Test endpoint replaying a fixed script of responses. Records every
/// request so assertions can inspect the prompts that were sent.
#[derive(Clone, Default)]
pub struct ScriptedEndpoint {
    responses: Arc<Mutex<VecDeque<Result<String, EndpointError>>>>,
    requests: Arc<Mutex<Vec<Vec<ChatMessage>>>>,
}

impl ScriptedEndpoint {
    pub fn new(script: Vec<Result<String, EndpointError>>) -> Self {
        Self {
            responses: Arc::new(Mutex::new(script.into())),
            requests: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn push(&self, response: Result<String, EndpointError>) {
        self.responses.lock().unwrap().push_back(response);
    }

    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.requests.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().unwrap().len()
    }
}

impl ChatEndpoint for ScriptedEndpoint {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        self.requests.lock().unwrap().push(messages.to_vec());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or(Err(EndpointError::Protocol { message: "script exhausted".to_string() }))
    }
}

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in pairs {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

fn extract_tag(text: &str, tag: &str) -> Option<String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    let body = text[start..end].trim();
    (!body.is_empty()).then(|| body.to_string())
}

fn parse_hypothesis(text: &str) -> Result<Hypothesis, String> {
    let mut fields = Vec::with_capacity(Hypothesis::FIELDS.len());
    for name in Hypothesis::FIELDS {
        match extract_tag(text, name) {
            Some(v) => fields.push(v),
            None => return Err((*name).to_string()),
        }
    }
    let mut it = fields.into_iter();
    Ok(Hypothesis {
        hypothesis: it.next().unwrap(),
        rationale: it.next().unwrap(),
        objectives: it.next().unwrap(),
        expected_insights: it.next().unwrap(),
        risks_limitations: it.next().unwrap(),
        experimentation_ideas: it.next().unwrap(),
    })
}

/// Pull strategy text out of a model response: a <program> tag wins, then a
/// fenced code block, else the whole trimmed reply.
fn extract_program_text(text: &str) -> String {
    if let Some(body) = extract_tag(text, "program") {
        return body;
    }
    if let Some(fence_start) = text.find("```") {
        let after = &text[fence_start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(fence_end) = body.find("```") {
            return body[..fence_end].trim().to_string();
        }
    }
    text.trim().to_string()
}

fn describe_record(record: &CandidateRecord) -> String {
    let metrics = match &record.metrics {
        None => "metrics: backtest failed".to_string(),
        Some(m) => format!(
            "metrics: sharpe {:?} sortino {:?} ir {:?} mdd {:.4} cr {:.4} trades {} score {:?}",
            m.sharpe, m.sortino, m.information_ratio, m.max_drawdown, m.cumulative_return, m.num_transactions,
            m.combined_score()
        ),
    };
    format!(
        "candidate {} (island {}, generation {})\nhypothesis: {}\nanalysis: {}\n{}\nprogram:\n{}",
        record.id,
        record.island_id,
        record.generation,
        record.hypothesis.hypothesis,
        if record.analysis.is_empty() { "(none yet)" } else { &record.analysis },
        metrics,
        record.program.serialize()
    )
}

fn describe_insights(insights: &[Insight], cap: usize) -> String {
    if insights.is_empty() {
        return "(no insights recorded yet)".to_string();
    }
    insights
        .iter()
        .rev()
        .take(cap)
        .rev()
        .map(|i| format!("- [g{} c{}] {}", i.generation, i.source_candidate_id, i.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct LlmGenerator {
    endpoint: Box<dyn ChatEndpoint>,
    repair_budget: u32,
}

impl LlmGenerator {
    pub fn new(endpoint: Box<dyn ChatEndpoint>) -> Self {
        Self { endpoint, repair_budget: 3 }
    }

    pub fn with_repair_budget(mut self, budget: u32) -> Self {
        self.repair_budget = budget;
        self
    }

    fn chat_logged(&self, messages: &[ChatMessage], transcripts: &mut Vec<String>) -> Result<String, EndpointError> {
        let response = self.endpoint.chat(messages)?;
        let mut entry = String::new();
        for m in messages {
            entry.push_str(&format!(">>> {}\n{}\n", m.role, m.content));
        }
        entry.push_str(&format!("<<< assistant\n{response}\n"));
        transcripts.push(entry);
        Ok(response)
    }
}

impl StrategyGenerator for LlmGenerator {
    fn propose(&self, ctx: &GenerationContext<'_>, _rng: &mut ChaCha8Rng) -> Result<GeneratorOutcome, GenerateError> {
        let mut transcripts = Vec::new();
        let mut repairs_used: u32 = 0;

        let taxonomy_text = ctx.taxonomy.join(", ");
        let parent_text = describe_record(ctx.parent);
        let cousins_text = if ctx.cousins.is_empty() {
            "(no cousins sampled)".to_string()
        } else {
            ctx.cousins.iter().map(|c| describe_record(c)).collect::<Vec<_>>().join("\n---\n")
        };
        let insights_text = describe_insights(ctx.insights, 40);

        // Phase one: hypothesis. Malformed replies are re-prompted with the
        // missing field named, drawing down the shared repair budget.
        let hypothesis_prompt = fill(
            HYPOTHESIS_TEMPLATE,
            &[
                ("taxonomy", &taxonomy_text),
                ("data_schema", ctx.data_schema_prompt),
                ("parent", &parent_text),
                ("cousins", &cousins_text),
                ("insights", &insights_text),
            ],
        );
        let mut conversation = vec![ChatMessage::user(hypothesis_prompt)];
        let hypothesis = loop {
            let response = self.chat_logged(&conversation, &mut transcripts)?;
            match parse_hypothesis(&response) {
                Ok(h) => break h,
                Err(missing) => {
                    if repairs_used >= self.repair_budget {
                        return Err(GenerateError::MalformedHypothesis { missing });
                    }
                    repairs_used += 1;
                    conversation.push(ChatMessage::assistant(response));
                    conversation.push(ChatMessage::user(format!(
                        "Your reply is missing or has an empty <{missing}> tag. Resend the full response with all six tags present and non-empty."
                    )));
                }
            }
        };

        // Phase two: strategy code, validated by the parser; parse failures
        // feed the error position back through the repair template.
        let coding_prompt = fill(
            CODING_TEMPLATE,
            &[
                ("dsl_schema", DSL_SCHEMA),
                ("data_schema", ctx.data_schema_prompt),
                ("hypothesis", &hypothesis.hypothesis),
                ("parent", &parent_text),
                ("taxonomy", &taxonomy_text),
            ],
        );
        let mut conversation = vec![ChatMessage::user(coding_prompt)];
        loop {
            let response = self.chat_logged(&conversation, &mut transcripts)?;
            let program_text = extract_program_text(&response);
            match parse_program_with(&program_text, ctx.dsl_options) {
                Ok(mut program) => {
                    sanitize_tags(&mut program, ctx.taxonomy);
                    return Ok(GeneratorOutcome {
                        hypothesis,
                        program,
                        repair_attempts: repairs_used,
                        raw_transcripts: transcripts,
                    });
                }
                Err(parse_error) => {
                    if repairs_used >= self.repair_budget {
                        return Err(GenerateError::GenerationFailure {
                            attempts: repairs_used,
                            last_error: parse_error.to_string(),
                        });
                    }
                    repairs_used += 1;
                    let repair_prompt = fill(
                        REPAIR_TEMPLATE,
                        &[
                            ("parse_error", &parse_error.to_string()),
                            ("original", &program_text),
                            ("dsl_schema", DSL_SCHEMA),
                        ],
                    );
                    conversation.push(ChatMessage::assistant(response));
                    conversation.push(ChatMessage::user(repair_prompt));
                }
            }
        }
    }

    fn analyze(&self, candidate: &CandidateRecord, parent: Option<&CandidateRecord>) -> Analysis {
        let fallback = templated_analysis(candidate, parent);
        let metrics_text = match &candidate.metrics {
            None => "backtest failed; no metrics".to_string(),
            Some(m) => serde_json::to_string(m).unwrap_or_else(|_| "unavailable".to_string()),
        };
        let parent_metrics_text = match parent.and_then(|p| p.metrics.as_ref()) {
            None => "(no parent metrics)".to_string(),
            Some(m) => serde_json::to_string(m).unwrap_or_else(|_| "unavailable".to_string()),
        };
        let prompt = fill(
            ANALYSIS_TEMPLATE,
            &[
                ("hypothesis", &candidate.hypothesis.hypothesis),
                ("metrics", &metrics_text),
                ("parent_metrics", &parent_metrics_text),
            ],
        );
        let Ok(response) = self.endpoint.chat(&[ChatMessage::user(prompt)]) else {
            return fallback;
        };
        let Some(start) = response.find('{') else { return fallback };
        let Some(end) = response.rfind('}') else { return fallback };
        let Ok(parsed) = serde_json::from_str::<serde_json::Value>(&response[start..=end]) else {
            return fallback;
        };
        let (Some(text), Some(insight)) = (parsed["analysis"].as_str(), parsed["insight"].as_str()) else {
            return fallback;
        };
        let verdict = match parsed["verdict"].as_str() {
            Some("supported") => Verdict::Supported,
            Some("refuted") => Verdict::Refuted,
            Some("inconclusive") => Verdict::Inconclusive,
            _ => fallback.verdict,
        };
        Analysis {
            text: text.to_string(),
            insight_text: insight.to_string(),
            verdict,
        }
    }

    fn curate(&self, repository: &mut Vec<Insight>, n_max: usize) -> usize {
        let before = repository.len();
        if before <= n_max {
            return curate_insights(repository, n_max);
        }
        // Try a single consolidation pass: summarize the oldest entries into
        // one insight, keeping the newest verbatim. Any endpoint failure
        // degrades to plain dedup and truncation.
        let keep_newest = n_max.saturating_sub(1);
        let old_count = before - keep_newest;
        let old_text = repository[..old_count]
            .iter()
            .map(|i| format!("- {}", i.text))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = fill(CONSOLIDATE_TEMPLATE, &[("insights", &old_text)]);
        match self.endpoint.chat(&[ChatMessage::user(prompt)]) {
            Ok(summary) if !summary.trim().is_empty() => {
                let island_id = repository[0].island_id;
                let generation = repository[old_count - 1].generation;
                let source = repository[old_count - 1].source_candidate_id;
                let merged = Insight::new(island_id, generation, format!("consolidated: {}", summary.trim()), source);
                let mut kept: Vec<Insight> = repository.split_off(old_count);
                repository.clear();
                repository.push(merged);
                repository.append(&mut kept);
                let removed = before - repository.len();
                removed + curate_insights(repository, n_max)
            }
            _ => curate_insights(repository, n_max),
        }
    }
}
