//! Verbalized confidence: parsing self-reports and the agreement-weighted
//! multi-sample aggregate.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::normalize_answer;
use crate::estimate::Estimate;
use crate::types::{Dataset, FilterReason, SampleRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VceError {
    #[error("sample {0} has no verbalized confidence")]
    MissingConfidence(String),
    #[error("sample {0} is filtered")]
    Filtered(String),
    #[error("no usable samples to aggregate")]
    AllFiltered,
    #[error("need at least {need} usable samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("all self-reported confidences are zero")]
    AllZeroConfidence,
}

/// Answer segment and confidence (0-100 scale) pulled from a self-report.
#[derive(Debug, Clone, PartialEq)]
pub struct VerbalizedAnswer {
    pub answer: String,
    pub confidence: f64,
}

fn confidence_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)confidence(?:\s+(?:level|score))?\s*(?:[:=]|is|of)?\s*(\d+(?:\.\d+)?)\s*%?")
            .expect("confidence regex")
    })
}

fn answer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:final\s+)?answer\s*[:=]").expect("answer regex"))
}

/// Text after the last "Answer:" label, if any.
fn after_last_label(text: &str) -> Option<&str> {
    answer_pattern().find_iter(text).last().map(|m| first_line(&text[m.end()..]))
}

fn strip_markdown(text: &str) -> String {
    text.chars()
        .filter(|c| !matches!(c, '*' | '_' | '`' | '#'))
        .collect()
}

pub(crate) fn clean_segment(segment: &str) -> String {
    segment
        .trim()
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | '|' | '(' | '-') || c.is_whitespace())
        .trim()
        .to_string()
}

/// Parse "Answer: ... Confidence: <n>" style output.
///
/// The confidence is clamped into [0, 100]; text without a numeric
/// confidence is filtered as unparseable.
pub fn parse_verbalized(raw_text: &str) -> Result<VerbalizedAnswer, FilterReason> {
    let text = strip_markdown(raw_text);
    if text.trim().is_empty() {
        return Err(FilterReason::EmptyOutput);
    }
    let conf_match = confidence_pattern()
        .captures(&text)
        .ok_or(FilterReason::UnparseableConfidence)?;
    let whole = conf_match.get(0).expect("group 0");
    let value: f64 = conf_match[1]
        .parse()
        .map_err(|_| FilterReason::UnparseableConfidence)?;
    let confidence = value.clamp(0.0, 100.0);

    let before = &text[..whole.start()];
    let after = &text[whole.end()..];
    let answer = match after_last_label(before).or_else(|| after_last_label(after)) {
        Some(segment) => clean_segment(segment),
        None => clean_segment(first_line(before)),
    };
    if answer.is_empty() {
        return Err(FilterReason::MalformedStructure);
    }
    Ok(VerbalizedAnswer { answer, confidence })
}

fn first_line(s: &str) -> &str {
    let trimmed = s.trim_start();
    trimmed.lines().next().unwrap_or("")
}

/// Single-sample VCE: the self-report rescaled to [0, 1].
pub fn vce_single(sample: &SampleRecord) -> Result<Estimate, VceError> {
    let id = || format!("{}#{}", sample.query_id, sample.sample_index);
    if sample.filtered {
        return Err(VceError::Filtered(id()));
    }
    let confidence = sample
        .verbalized_confidence
        .ok_or_else(|| VceError::MissingConfidence(id()))?;
    let answer = sample
        .extracted_answer
        .clone()
        .ok_or_else(|| VceError::Filtered(id()))?;
    Ok(Estimate {
        confidence: confidence / 100.0,
        raw_uncertainty: None,
        components: None,
        chosen_answer: answer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VceAggregate {
    /// Normalized majority answer.
    pub majority_answer: String,
    /// Surface form of the lowest-index sample giving the majority answer.
    pub representative: String,
    pub agreeing_mass: f64,
    pub total_mass: f64,
    pub confidence: f64,
}

#[derive(Debug)]
struct Group {
    count: usize,
    mass: f64,
    first_index: usize,
    representative: String,
}

/// Agreement-weighted confidence: self-reported mass on the majority answer
/// divided by the total self-reported mass.
///
/// Majority ties go to the larger confidence mass, then the lowest sample
/// index. Answers that fail to normalize are grouped by their raw lowercase
/// text, so they still carry mass (and are judged incorrect if they win).
pub fn vce_aggregate(
    samples: &[SampleRecord],
    dataset: Dataset,
    min_samples: usize,
) -> Result<VceAggregate, VceError> {
    let usable: Vec<(&SampleRecord, String, f64)> = samples
        .iter()
        .filter(|s| !s.filtered)
        .filter_map(|s| {
            let answer = s.extracted_answer.as_deref()?;
            let confidence = s.verbalized_confidence?;
            let key = normalize_answer(answer, dataset)
                .unwrap_or_else(|_| answer.trim().to_lowercase());
            Some((s, key, confidence))
        })
        .collect();
    if usable.is_empty() {
        return Err(VceError::AllFiltered);
    }
    let need = min_samples.max(2);
    if usable.len() < need {
        return Err(VceError::TooFewSamples {
            got: usable.len(),
            need,
        });
    }

    let mut groups: HashMap<&str, Group> = HashMap::new();
    let mut total_mass = 0.0;
    for (sample, key, confidence) in &usable {
        total_mass += confidence;
        let group = groups.entry(key.as_str()).or_insert_with(|| Group {
            count: 0,
            mass: 0.0,
            first_index: sample.sample_index,
            representative: sample.extracted_answer.clone().unwrap_or_default(),
        });
        group.count += 1;
        group.mass += confidence;
        if sample.sample_index < group.first_index {
            group.first_index = sample.sample_index;
            group.representative = sample.extracted_answer.clone().unwrap_or_default();
        }
    }
    if total_mass <= 0.0 {
        return Err(VceError::AllZeroConfidence);
    }

    let (key, winner) = groups
        .iter()
        .max_by(|(_, a), (_, b)| {
            a.count
                .cmp(&b.count)
                .then(a.mass.total_cmp(&b.mass))
                .then(b.first_index.cmp(&a.first_index))
        })
        .expect("non-empty groups");

    Ok(VceAggregate {
        majority_answer: key.to_string(),
        representative: winner.representative.clone(),
        agreeing_mass: winner.mass,
        total_mass,
        confidence: winner.mass / total_mass,
    })
}

impl VceAggregate {
    pub fn into_estimate(self) -> Estimate {
        Estimate {
            confidence: self.confidence.clamp(0.0, 1.0),
            raw_uncertainty: None,
            components: None,
            chosen_answer: self.representative,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Regime;
    use proptest::prelude::*;

    fn sample(index: usize, answer: &str, confidence: f64) -> SampleRecord {
        SampleRecord {
            query_id: "q".into(),
            sample_index: index,
            regime: Regime::Sep,
            temperature: 0.7,
            seed: Some(index as u64),
            raw_text: format!("Answer: {answer}. Confidence: {confidence}."),
            extracted_answer: Some(answer.into()),
            verbalized_confidence: Some(confidence),
            token_logprobs: None,
            filtered: false,
            filter_reason: None,
        }
    }

    fn samples(answers: &[&str], confidences: &[f64]) -> Vec<SampleRecord> {
        answers
            .iter()
            .zip(confidences)
            .enumerate()
            .map(|(i, (a, c))| sample(i, a, *c))
            .collect()
    }

    /// Direct evaluation of the weighted ratio for a given majority key.
    fn brute_force_ratio(answers: &[&str], confidences: &[f64], majority: &str) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, c) in answers.iter().zip(confidences) {
            den += c;
            if normalize_answer(a, Dataset::Triviaqa).unwrap() == majority {
                num += c;
            }
        }
        num / den
    }

    #[test]
    fn parses_documented_response() {
        let parsed = parse_verbalized("Answer: 42. Confidence: 80.").unwrap();
        assert_eq!(parsed.answer, "42");
        assert_eq!(parsed.confidence, 80.0);
    }

    #[test]
    fn clamps_and_tolerates_percent_and_markdown() {
        let parsed = parse_verbalized("Answer: Paris\nConfidence: 110%").unwrap();
        assert_eq!(parsed.answer, "Paris");
        assert_eq!(parsed.confidence, 100.0);

        let parsed = parse_verbalized("**Answer:** Mount Everest\n**Confidence:** 92.5%").unwrap();
        assert_eq!(parsed.answer, "Mount Everest");
        assert_eq!(parsed.confidence, 92.5);

        let parsed = parse_verbalized("confidence level: 75 / answer: blue").unwrap();
        assert_eq!(parsed.answer, "blue");
        assert_eq!(parsed.confidence, 75.0);
    }

    #[test]
    fn unparseable_reports_are_filtered() {
        assert_eq!(
            parse_verbalized("I think it's Paris."),
            Err(FilterReason::UnparseableConfidence)
        );
        assert_eq!(
            parse_verbalized("Answer: Paris. Confidence: high"),
            Err(FilterReason::UnparseableConfidence)
        );
        assert_eq!(parse_verbalized("  "), Err(FilterReason::EmptyOutput));
        assert_eq!(
            parse_verbalized("Answer: . Confidence: 50"),
            Err(FilterReason::MalformedStructure)
        );
    }

    #[test]
    fn single_sample_rescale() {
        for (raw, expected) in [(80.0, 0.80), (0.0, 0.0), (98.8, 0.988)] {
            let est = vce_single(&sample(0, "a", raw)).unwrap();
            assert_eq!(est.confidence, expected);
        }
        let mut s = sample(0, "a", 50.0);
        s.verbalized_confidence = None;
        assert!(matches!(vce_single(&s), Err(VceError::MissingConfidence(_))));
    }

    #[test]
    fn aggregate_majority_mass_ratio() {
        let answers = ["Paris", "paris.", "Lyon"];
        let confs = [80.0, 90.0, 100.0];
        let agg = vce_aggregate(&samples(&answers, &confs), Dataset::Triviaqa, 2).unwrap();
        assert_eq!(agg.majority_answer, "paris");
        assert_eq!(agg.confidence, 170.0 / 270.0);
        assert_eq!(agg.confidence, brute_force_ratio(&answers, &confs, "paris"));
        assert!((agg.confidence - 0.6296).abs() < 1e-4);
    }

    #[test]
    fn aggregate_unanimous_is_one() {
        let agg = vce_aggregate(
            &samples(&["A", "A", "A"], &[10.0, 50.0, 90.0]),
            Dataset::Triviaqa,
            2,
        )
        .unwrap();
        assert_eq!(agg.confidence, 1.0);
    }

    #[test]
    fn aggregate_tie_breaks_on_mass_then_index() {
        let agg = vce_aggregate(&samples(&["A", "B"], &[60.0, 40.0]), Dataset::Triviaqa, 2).unwrap();
        assert_eq!(agg.majority_answer, "a");
        assert_eq!(agg.confidence, 0.6);

        let agg = vce_aggregate(&samples(&["A", "B"], &[40.0, 60.0]), Dataset::Triviaqa, 2).unwrap();
        assert_eq!(agg.majority_answer, "b");

        let agg = vce_aggregate(&samples(&["B", "A"], &[50.0, 50.0]), Dataset::Triviaqa, 2).unwrap();
        assert_eq!(agg.majority_answer, "b");
        assert_eq!(agg.representative, "B");
    }

    #[test]
    fn aggregate_errors() {
        let mut s = samples(&["A", "B"], &[60.0, 40.0]);
        for x in &mut s {
            x.mark_filtered(FilterReason::UnparseableConfidence);
        }
        assert_eq!(vce_aggregate(&s, Dataset::Triviaqa, 2), Err(VceError::AllFiltered));

        let s = samples(&["A"], &[60.0]);
        assert!(matches!(
            vce_aggregate(&s, Dataset::Triviaqa, 2),
            Err(VceError::TooFewSamples { got: 1, need: 2 })
        ));

        let s = samples(&["A", "B"], &[0.0, 0.0]);
        assert_eq!(vce_aggregate(&s, Dataset::Triviaqa, 2), Err(VceError::AllZeroConfidence));
    }

    #[test]
    fn zero_confidence_counts_in_denominator_only_as_zero() {
        let agg = vce_aggregate(&samples(&["A", "A", "B"], &[0.0, 50.0, 50.0]), Dataset::Triviaqa, 2)
            .unwrap();
        assert_eq!(agg.confidence, 0.5);
    }

    #[test]
    fn aggregate_uses_normalized_equality() {
        let agg = vce_aggregate(
            &samples(&["The Nile.", "nile", "Amazon"], &[50.0, 50.0, 90.0]),
            Dataset::Triviaqa,
            2,
        )
        .unwrap();
        assert_eq!(agg.majority_answer, "nile");
        assert_eq!(agg.representative, "The Nile.");
    }

    fn answer_strategy() -> impl Strategy<Value = Vec<(usize, f64)>> {
        prop::collection::vec((0usize..3, 1.0f64..100.0), 2..8)
    }

    const LABELS: [&str; 3] = ["alpha", "beta", "gamma"];

    fn build(pairs: &[(usize, f64)]) -> Vec<SampleRecord> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, (a, c))| sample(i, LABELS[*a], *c))
            .collect()
    }

    proptest! {
        #[test]
        fn unanimity_gives_one(confs in prop::collection::vec(0.1f64..100.0, 2..8)) {
            let answers = vec!["same"; confs.len()];
            let agg = vce_aggregate(&samples(&answers, &confs), Dataset::Triviaqa, 2).unwrap();
            prop_assert_eq!(agg.confidence, 1.0);
        }

        #[test]
        fn permutation_invariant(pairs in answer_strategy(), rotate in 0usize..8) {
            let base = vce_aggregate(&build(&pairs), Dataset::Triviaqa, 2).unwrap();
            let mut permuted = pairs.clone();
            let k = rotate % permuted.len();
            permuted.rotate_left(k);
            permuted.reverse();
            // Permuting values also permutes indices, which only matter for
            // exact count+mass ties; skip those.
            let p = vce_aggregate(&build(&permuted), Dataset::Triviaqa, 2).unwrap();
            let tie = {
                let mut stats = [(0usize, 0.0f64); 3];
                for (a, c) in &pairs { stats[*a].0 += 1; stats[*a].1 += c; }
                let best = stats.iter().filter(|s| s.0 > 0).map(|s| (s.0, s.1)).fold((0, 0.0), |m, s| if (s.0, s.1) > m { s } else { m });
                stats.iter().filter(|s| s.0 == best.0 && s.1 == best.1).count() > 1
            };
            if !tie {
                prop_assert_eq!(&p.majority_answer, &base.majority_answer);
                prop_assert!((p.confidence - base.confidence).abs() < 1e-12);
            }
        }

        #[test]
        fn positive_scaling_invariant(pairs in answer_strategy(), scale in 0.01f64..0.99) {
            let base = vce_aggregate(&build(&pairs), Dataset::Triviaqa, 2).unwrap();
            let scaled: Vec<(usize, f64)> = pairs.iter().map(|(a, c)| (*a, c * scale)).collect();
            let s = vce_aggregate(&build(&scaled), Dataset::Triviaqa, 2).unwrap();
            prop_assert_eq!(&s.majority_answer, &base.majority_answer);
            prop_assert!((s.confidence - base.confidence).abs() < 1e-12);
        }

        #[test]
        fn disagreeing_mass_lowers_confidence(pairs in answer_strategy(), bump in 0.5f64..50.0) {
            let base = vce_aggregate(&build(&pairs), Dataset::Triviaqa, 2).unwrap();
            let dissent = pairs.iter().position(|(a, _)| LABELS[*a] != base.majority_answer);
            if let Some(i) = dissent {
                let mut bumped = pairs.clone();
                bumped[i].1 += bump;
                let after = vce_aggregate(&build(&bumped), Dataset::Triviaqa, 2).unwrap();
                // Only meaningful when the majority did not flip.
                if after.majority_answer == base.majority_answer {
                    prop_assert!(after.confidence < base.confidence);
                }
            }
        }
    }
}
