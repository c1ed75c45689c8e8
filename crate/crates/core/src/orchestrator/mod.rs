//! Decoding against a chat-completions endpoint: SINGLE, SEP and TOPK
//! regimes, answer extraction and output filtering, and the resumable
//! run driver.

pub mod cache;
pub mod llm;
pub mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{normalize_answer, AnswerError};
use crate::cocoa::STAR_TEMPERATURE;
use crate::types::{Dataset, FilterReason, Method, QueryRecord, Regime, SampleRecord};
use crate::vce::{clean_segment, parse_verbalized};

pub use cache::{run_dataset, RunManifest, RunOptions, RunPaths};
pub use llm::{ChatMessage, ChatRequest, ChatResponse, Choice, HttpLlmClient, HttpLlmConfig, LlmClient, LlmError};
pub use prompt::PromptTemplate;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: usize = 256;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;
/// Outputs longer than this many times `max_tokens` (whitespace tokens) are
/// filtered as overlong.
pub const OVERLONG_FACTOR: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("endpoint does not support n={requested} completions per call ({detail}); TOPK runs cannot fall back to SEP")]
    TopkUnsupported { requested: usize, detail: String },
    #[error("query {query_id}: {source}")]
    Upstream { query_id: String, source: LlmError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub method: Method,
    pub regime: Regime,
    /// Samples per query (M).
    pub samples: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed_base: Option<u64>,
    pub request_logprobs: bool,
    /// Extra low-temperature decode for the primary answer (CoCoA).
    pub star_temperature: Option<f64>,
    /// Concurrent queries in flight; not part of the config hash.
    #[serde(skip, default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl DecodeConfig {
    /// Defaults for a method: regime, M and logprob requests follow the
    /// method, temperature 0.7.
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            regime: method.default_regime(),
            samples: method.default_samples(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed_base: Some(0),
            request_logprobs: method.needs_logprobs(),
            star_temperature: method.is_cocoa().then_some(STAR_TEMPERATURE),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        let err = |m: String| Err(DecodeError::Config(m));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return err(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.samples == 0 {
            return err("samples must be at least 1".into());
        }
        if self.max_tokens == 0 {
            return err("max_tokens must be positive".into());
        }
        if !self.method.allows_regime(self.regime) {
            return err(format!("method {} cannot run with regime {}", self.method, self.regime));
        }
        match self.regime {
            Regime::Single if self.samples != 1 => return err("SINGLE regime decodes exactly one sample".into()),
            Regime::Sep | Regime::Topk if self.samples < 2 => {
                return err(format!("{} needs at least 2 samples", self.regime))
            }
            _ => {}
        }
        if self.method.needs_logprobs() && !self.request_logprobs {
            return err(format!("method {} needs token log-probabilities", self.method));
        }
        if self.method.is_cocoa() != self.star_temperature.is_some() {
            return err("a primary-answer decode is used exactly for cocoa methods".into());
        }
        if let Some(t) = self.star_temperature {
            if !(t > 0.0) {
                return err("star temperature must be positive".into());
            }
        }
        Ok(())
    }

    /// Records produced per query.
    pub fn samples_per_query(&self) -> usize {
        self.samples + usize::from(self.star_temperature.is_some())
    }

    /// Seeds of the M regime samples (SEP gets seed_base..seed_base+M-1).
    pub fn sample_seeds(&self) -> Vec<Option<u64>> {
        match self.regime {
            Regime::Sep => (0..self.samples as u64).map(|i| self.seed_base.map(|s| s + i)).collect(),
            Regime::Single | Regime::Topk => vec![self.seed_base],
        }
    }

    /// Seed of the primary-answer decode, disjoint from the SEP seeds.
    pub fn star_seed(&self) -> Option<u64> {
        self.seed_base.map(|s| s + self.samples as u64)
    }
}

/// Answer text from an output that should end with "Answer: ...". The last
/// labelled line wins; otherwise the first non-empty line.
pub fn extract_plain_answer(raw_text: &str) -> Option<String> {
    let lower = raw_text.to_lowercase();
    let answer = match lower.rfind("answer:") {
        Some(pos) => {
            let rest = &raw_text[pos + "answer:".len()..];
            rest.trim_start().lines().next().unwrap_or("").to_string()
        }
        None => raw_text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").to_string(),
    };
    let cleaned = clean_segment(&answer.replace(['*', '`'], ""));
    (!cleaned.is_empty()).then_some(cleaned)
}

struct Parsed {
    answer: String,
    confidence: Option<f64>,
}

fn assess(raw_text: &str, logprobs: Option<&[f64]>, dataset: Dataset, cfg: &DecodeConfig) -> Result<Parsed, FilterReason> {
    if raw_text.trim().is_empty() {
        return Err(FilterReason::EmptyOutput);
    }
    if raw_text.split_whitespace().count() > OVERLONG_FACTOR * cfg.max_tokens {
        return Err(FilterReason::OverlongOutput);
    }
    if logprobs.is_some_and(|lps| lps.is_empty() || lps.iter().any(|lp| !(*lp <= 0.0))) {
        return Err(FilterReason::MalformedStructure);
    }
    let parsed = if cfg.method.is_verbalized() {
        let v = parse_verbalized(raw_text)?;
        Parsed { answer: v.answer, confidence: Some(v.confidence) }
    } else {
        let answer = extract_plain_answer(raw_text).ok_or(FilterReason::MalformedStructure)?;
        Parsed { answer, confidence: None }
    };
    if dataset == Dataset::Boolq {
        if let Err(AnswerError::AmbiguousYesNo(_)) = normalize_answer(&parsed.answer, dataset) {
            return Err(FilterReason::MalformedStructure);
        }
    }
    Ok(parsed)
}

/// Build a record from one returned choice (or `None` when the request
/// failed permanently).
pub fn build_record(
    query: &QueryRecord,
    sample_index: usize,
    regime: Regime,
    temperature: f64,
    seed: Option<u64>,
    choice: Option<&Choice>,
    cfg: &DecodeConfig,
) -> SampleRecord {
    let raw_text = choice.and_then(|c| c.message.content.clone()).unwrap_or_default();
    let token_logprobs = if cfg.request_logprobs { choice.and_then(Choice::token_logprobs) } else { None };
    let mut record = SampleRecord {
        query_id: query.id.clone(),
        sample_index,
        regime,
        temperature,
        seed,
        raw_text,
        extracted_answer: None,
        verbalized_confidence: None,
        token_logprobs,
        filtered: false,
        filter_reason: None,
    };
    if choice.is_none() {
        record.mark_filtered(FilterReason::MalformedStructure);
        return record;
    }
    match assess(&record.raw_text, record.token_logprobs.as_deref(), query.dataset, cfg) {
        Ok(p) => {
            record.extracted_answer = Some(p.answer);
            record.verbalized_confidence = p.confidence;
        }
        Err(reason) => {
            if reason == FilterReason::MalformedStructure
                && record.token_logprobs.as_ref().is_some_and(|l| l.iter().any(|lp| !(*lp <= 0.0)))
            {
                record.token_logprobs = None;
            }
            record.mark_filtered(reason);
        }
    }
    record
}

fn request(cfg: &DecodeConfig, model: &str, prompt: &str, temperature: f64, n: usize, seed: Option<u64>) -> ChatRequest {
    ChatRequest {
        model: model.to_string(),
        messages: vec![ChatMessage::user(prompt)],
        temperature,
        n,
        seed,
        max_tokens: cfg.max_tokens,
        logprobs: cfg.request_logprobs,
    }
}

/// Outcome of one call: choices, or `None` after exhausting retries.
fn call(
    client: &dyn LlmClient,
    req: &ChatRequest,
    query_id: &str,
) -> Result<Option<Vec<Choice>>, DecodeError> {
    match client.complete(req) {
        Ok(resp) => Ok(Some(resp.choices)),
        Err(LlmError::PersistentFailure { attempts, last }) => {
            log::warn!("query {query_id}: giving up after {attempts} attempts: {last}");
            Ok(None)
        }
        Err(source) => Err(DecodeError::Upstream { query_id: query_id.to_string(), source }),
    }
}

/// Decode one query: `samples_per_query()` records, some possibly filtered.
pub fn decode_query(query: &QueryRecord, cfg: &DecodeConfig, client: &dyn LlmClient) -> Result<Vec<SampleRecord>, DecodeError> {
    let template = PromptTemplate::for_query(query.dataset, cfg.method);
    let prompt = template.render(query);
    let model = client.model_id();
    let mut records = Vec::with_capacity(cfg.samples_per_query());
    let mut next = 0usize;

    if let Some(t_star) = cfg.star_temperature {
        let seed = cfg.star_seed();
        let choices = call(client, &request(cfg, model, &prompt, t_star, 1, seed), &query.id)?;
        let choice = choices.as_ref().and_then(|c| c.first());
        records.push(build_record(query, next, Regime::Single, t_star, seed, choice, cfg));
        next += 1;
    }

    match cfg.regime {
        Regime::Single | Regime::Sep => {
            for seed in cfg.sample_seeds() {
                let choices = call(client, &request(cfg, model, &prompt, cfg.temperature, 1, seed), &query.id)?;
                let choice = choices.as_ref().and_then(|c| c.first());
                records.push(build_record(query, next, cfg.regime, cfg.temperature, seed, choice, cfg));
                next += 1;
            }
        }
        Regime::Topk => {
            let req = request(cfg, model, &prompt, cfg.temperature, cfg.samples, cfg.seed_base);
            let choices = match call(client, &req, &query.id) {
                Err(DecodeError::Upstream { source: LlmError::Rejected { status, body }, .. }) => {
                    return Err(DecodeError::TopkUnsupported {
                        requested: cfg.samples,
                        detail: format!("HTTP {status}: {body}"),
                    })
                }
                other => other?,
            };
            if let Some(c) = &choices {
                if c.len() != cfg.samples {
                    return Err(DecodeError::TopkUnsupported {
                        requested: cfg.samples,
                        detail: format!("endpoint returned {} choices", c.len()),
                    });
                }
            }
            for i in 0..cfg.samples {
                let choice = choices.as_ref().map(|c| &c[i]);
                records.push(build_record(query, next, Regime::Topk, cfg.temperature, cfg.seed_base, choice, cfg));
                next += 1;
            }
        }
    }
    Ok(records)
}
