//! Records shared by every estimator, the orchestrator and the evaluator.
//!
//! Field names are the on-disk JSONL names; changing them breaks existing
//! caches.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("record {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("unknown {kind} `{value}`")]
    UnknownName { kind: &'static str, value: String },
}

fn invalid(id: &str, reason: impl Into<String>) -> RecordError {
    RecordError::Invalid {
        id: id.to_string(),
        reason: reason.into(),
    }
}

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(
                #[serde(rename = $text)]
                $variant,
            )+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text,)+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = RecordError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let lowered = s.trim().to_ascii_lowercase();
                $(
                    if lowered == $text.to_ascii_lowercase() {
                        return Ok($name::$variant);
                    }
                )+
                Err(RecordError::UnknownName { kind: $kind, value: s.to_string() })
            }
        }
    };
}

named_enum!(
    /// Benchmark a query came from. Drives answer normalization and matching.
    Dataset, "dataset", {
        Boolq => "boolq",
        Squad2 => "squad2",
        Triviaqa => "triviaqa",
        Gsm8k => "gsm8k",
        Custom => "custom",
    }
);

named_enum!(
    /// Multi-sample decoding regime.
    Regime, "regime", {
        Single => "SINGLE",
        Sep => "SEP",
        Topk => "TOPK",
    }
);

named_enum!(
    FilterReason, "filter reason", {
        UnparseableConfidence => "unparseable_confidence",
        EmptyOutput => "empty_output",
        OverlongOutput => "overlong_output",
        MalformedStructure => "malformed_structure",
    }
);

named_enum!(
    /// Confidence estimator.
    Method, "method", {
        VceSingle => "vce_single",
        VceMulti => "vce_multi",
        Msp => "msp",
        Consistency => "consistency",
        Cocoa => "cocoa",
        CocoaOr => "cocoa_or",
    }
);

named_enum!(
    MatchRule, "match rule", {
        YesNo => "yesno",
        NormalizedExact => "normalized_exact",
        AliasContainment => "alias_containment",
        Numeric => "numeric",
    }
);

impl Method {
    /// Whether raw completions are parsed as "Answer: .. Confidence: ..".
    pub fn is_verbalized(self) -> bool {
        matches!(self, Method::VceSingle | Method::VceMulti)
    }

    pub fn is_cocoa(self) -> bool {
        matches!(self, Method::Cocoa | Method::CocoaOr)
    }

    /// Regime used when the caller does not pick one.
    pub fn default_regime(self) -> Regime {
        match self {
            Method::VceSingle | Method::Msp => Regime::Single,
            Method::VceMulti | Method::Consistency | Method::Cocoa | Method::CocoaOr => Regime::Sep,
        }
    }

    pub fn default_samples(self) -> usize {
        match self {
            Method::VceSingle | Method::Msp => 1,
            Method::VceMulti | Method::Consistency => 5,
            Method::Cocoa | Method::CocoaOr => 10,
        }
    }

    /// Regimes a method may be decoded with.
    pub fn allows_regime(self, regime: Regime) -> bool {
        match self {
            Method::VceSingle | Method::Msp => regime == Regime::Single,
            Method::VceMulti | Method::Consistency => matches!(regime, Regime::Sep | Regime::Topk),
            Method::Cocoa | Method::CocoaOr => regime == Regime::Sep,
        }
    }

    pub fn needs_logprobs(self) -> bool {
        matches!(self, Method::Msp | Method::Cocoa | Method::CocoaOr)
    }
}

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub dataset: Dataset,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub gold_answers: Vec<String>,
    #[serde(default = "default_true")]
    pub answerable: bool,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

fn default_true() -> bool {
    true
}

impl QueryRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.id.trim().is_empty() {
            return Err(invalid(&self.id, "empty id"));
        }
        if self.question.trim().is_empty() {
            return Err(invalid(&self.id, "empty question"));
        }
        if self.answerable && self.gold_answers.iter().all(|g| g.trim().is_empty()) {
            return Err(invalid(&self.id, "answerable query without gold answers"));
        }
        Ok(())
    }
}

/// One generated completion and everything extracted from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub query_id: String,
    pub sample_index: usize,
    pub regime: Regime,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub raw_text: String,
    pub extracted_answer: Option<String>,
    pub verbalized_confidence: Option<f64>,
    pub token_logprobs: Option<Vec<f64>>,
    pub filtered: bool,
    pub filter_reason: Option<FilterReason>,
}

impl SampleRecord {
    pub fn is_usable(&self) -> bool {
        !self.filtered && self.extracted_answer.is_some()
    }

    pub fn mark_filtered(&mut self, reason: FilterReason) {
        self.filtered = true;
        self.filter_reason = Some(reason);
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        let id = format!("{}#{}", self.query_id, self.sample_index);
        if self.filtered != self.filter_reason.is_some() {
            return Err(invalid(&id, "filtered flag and filter_reason disagree"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid(&id, "temperature must be positive"));
        }
        if let Some(lps) = &self.token_logprobs {
            if lps.iter().any(|lp| !(*lp <= 0.0)) {
                return Err(invalid(&id, "token log-probability above zero or NaN"));
            }
        }
        if let Some(c) = self.verbalized_confidence {
            if !(0.0..=100.0).contains(&c) {
                return Err(invalid(&id, "verbalized confidence outside [0, 100]"));
            }
        }
        Ok(())
    }
}

/// Fusion components recorded for CoCoA scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub u: f64,
    pub u_cons: f64,
}

/// Output of one estimator for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub query_id: String,
    pub method: Method,
    pub confidence: f64,
    pub raw_uncertainty: Option<f64>,
    pub components: Option<ScoreComponents>,
    pub chosen_answer: String,
    pub correct: bool,
    /// Set when the chosen answer could not be normalized; the score then
    /// counts as incorrect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_error: Option<String>,
}

impl UncertaintyScore {
    pub fn validate(&self) -> Result<(), RecordError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(invalid(&self.query_id, "confidence outside [0, 1]"));
        }
        if self.components.is_some() != self.method.is_cocoa() {
            return Err(invalid(
                &self.query_id,
                "components must be present exactly for cocoa methods",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessJudgment {
    pub query_id: String,
    pub matched_alias: Option<String>,
    pub rule: MatchRule,
}
