use crate::answer::{judge_correct, MatchConfig};
use crate::types::{Method, QueryRecord, ScoreComponents, UncertaintyScore};

/// Estimator output before correctness is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub confidence: f64,
    pub raw_uncertainty: Option<f64>,
    pub components: Option<ScoreComponents>,
    pub chosen_answer: String,
}

impl Estimate {
    /// Judge the chosen answer and produce the final score. Answers that fail
    /// to normalize count as incorrect and keep the error text.
    pub fn judge(self, query: &QueryRecord, method: Method, cfg: &MatchConfig) -> UncertaintyScore {
        let (correct, judge_error) = match judge_correct(&self.chosen_answer, query, cfg) {
            Ok(j) => (j.correct, None),
            Err(e) => (false, Some(e.to_string())),
        };
        UncertaintyScore {
            query_id: query.id.clone(),
            method,
            confidence: self.confidence,
            raw_uncertainty: self.raw_uncertainty,
            components: self.components,
            chosen_answer: self.chosen_answer,
            correct,
            judge_error,
        }
    }
}
