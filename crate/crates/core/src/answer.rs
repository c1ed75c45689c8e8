//! Answer normalization and correctness judging.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::types::{CorrectnessJudgment, Dataset, MatchRule, QueryRecord};

/// Absolute tolerance for numeric (GSM8K) answer equality.
pub const NUMERIC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnswerError {
    #[error("empty answer")]
    EmptyAnswer,
    #[error("no number found in `{0}`")]
    NoNumberFound(String),
    #[error("answer carries both yes and no cues: `{0}`")]
    AmbiguousYesNo(String),
}

const YES_CUES: &[&str] = &["yes", "yeah", "yep", "true", "correct"];
const NO_CUES: &[&str] = &["no", "nope", "false", "incorrect"];

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\$?\d[\d,]*(?:\.\d+)?").expect("number regex"))
}

fn article_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(?:a|an|the)\b").expect("article regex"))
}

/// Lowercase, drop punctuation and articles, collapse whitespace.
fn normalize_text(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let without_articles = article_pattern().replace_all(&stripped, " ");
    without_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical decimal form: no sign noise, no currency, no grouping commas,
/// no trailing fractional zeros.
fn canonical_number(token: &str) -> String {
    let mut s: String = token.chars().filter(|c| *c != ',' && *c != '$').collect();
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn last_number(text: &str) -> Option<String> {
    number_pattern()
        .find_iter(text)
        .last()
        .map(|m| canonical_number(m.as_str()))
}

fn yes_no(text: &str) -> Result<Option<&'static str>, AnswerError> {
    let normalized = normalize_text(text);
    let mut yes = 0usize;
    let mut no = 0usize;
    for token in normalized.split_whitespace() {
        if YES_CUES.contains(&token) {
            yes += 1;
        } else if NO_CUES.contains(&token) {
            no += 1;
        }
    }
    match (yes, no) {
        (0, 0) => Ok(None),
        (y, n) if y == n => Err(AnswerError::AmbiguousYesNo(text.to_string())),
        (y, n) if y > n => Ok(Some("yes")),
        _ => Ok(Some("no")),
    }
}

/// Canonical comparison form of an answer for the given dataset.
///
/// `text` must be the answer segment only: for GSM8K the last number in the
/// string wins, so a trailing "Confidence: 80" would be picked up.
pub fn normalize_answer(text: &str, dataset: Dataset) -> Result<String, AnswerError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(AnswerError::EmptyAnswer);
    }
    match dataset {
        Dataset::Gsm8k => {
            last_number(trimmed).ok_or_else(|| AnswerError::NoNumberFound(trimmed.to_string()))
        }
        Dataset::Boolq => {
            if let Some(canonical) = yes_no(trimmed)? {
                return Ok(canonical.to_string());
            }
            non_empty(normalize_text(trimmed))
        }
        _ => non_empty(normalize_text(trimmed)),
    }
}

fn non_empty(s: String) -> Result<String, AnswerError> {
    if s.is_empty() {
        Err(AnswerError::EmptyAnswer)
    } else {
        Ok(s)
    }
}

/// Matching options for [`judge_correct`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchConfig {
    /// `None` picks the per-dataset default (on for TriviaQA only).
    pub containment: Option<bool>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { containment: None }
    }
}

impl MatchConfig {
    pub fn containment_for(&self, dataset: Dataset) -> bool {
        self.containment
            .unwrap_or(matches!(dataset, Dataset::Triviaqa))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Judgment {
    pub correct: bool,
    pub detail: CorrectnessJudgment,
}

fn contains_phrase(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let padded_hay = format!(" {haystack} ");
    let padded_needle = format!(" {needle} ");
    padded_hay.contains(&padded_needle)
}

/// Judge `answer` against the query's gold aliases.
///
/// Aliases that fail to normalize are skipped; an answer that fails to
/// normalize is an error the caller must record as incorrect.
pub fn judge_correct(
    answer: &str,
    query: &QueryRecord,
    cfg: &MatchConfig,
) -> Result<Judgment, AnswerError> {
    let dataset = query.dataset;
    let normalized = normalize_answer(answer, dataset)?;
    let judgment = |matched: Option<&String>, rule: MatchRule| Judgment {
        correct: matched.is_some(),
        detail: CorrectnessJudgment {
            query_id: query.id.clone(),
            matched_alias: matched.cloned(),
            rule,
        },
    };

    match dataset {
        Dataset::Boolq => {
            let hit = query
                .gold_answers
                .iter()
                .find(|g| normalize_answer(g, dataset).ok().as_deref() == Some(normalized.as_str()));
            Ok(judgment(hit, MatchRule::YesNo))
        }
        Dataset::Gsm8k => {
            let value: f64 = normalized
                .parse()
                .map_err(|_| AnswerError::NoNumberFound(answer.to_string()))?;
            let hit = query.gold_answers.iter().find(|g| {
                normalize_answer(g, dataset)
                    .ok()
                    .and_then(|n| n.parse::<f64>().ok())
                    .is_some_and(|gold| (gold - value).abs() <= NUMERIC_TOLERANCE)
            });
            Ok(judgment(hit, MatchRule::Numeric))
        }
        _ => {
            let aliases: Vec<(&String, String)> = query
                .gold_answers
                .iter()
                .filter_map(|g| normalize_answer(g, dataset).ok().map(|n| (g, n)))
                .collect();
            if let Some((g, _)) = aliases.iter().find(|(_, n)| *n == normalized) {
                return Ok(judgment(Some(g), MatchRule::NormalizedExact));
            }
            if cfg.containment_for(dataset) {
                let hit = aliases
                    .iter()
                    .find(|(_, n)| contains_phrase(&normalized, n))
                    .map(|(g, _)| *g);
                return Ok(judgment(hit, MatchRule::AliasContainment));
            }
            Ok(judgment(None, MatchRule::NormalizedExact))
        }
    }
}
