//! Run-level scoring: per-query estimates, the run normalizer for the
//! likelihood-based methods, and correctness judging.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::answer::MatchConfig;
use crate::cocoa::{cocoa_inputs, cocoa_score, fit_run_normalizer, CocoaError, FusionMode};
use crate::consistency::{consistency_score, pairwise_similarities, ConsistencyError, SimilarityOptions};
use crate::estimate::Estimate;
use crate::exec::Execution;
use crate::msp::{fit_normalizer, msp_uncertainty, to_confidence, MspError, NormalizationStats, DEFAULT_CLIP_PERCENTILE};
use crate::orchestrator::cache::group_samples;
use crate::simclient::{SimError, SimilarityClient};
use crate::types::{Method, QueryRecord, Regime, SampleRecord, ScoreComponents, UncertaintyScore};
use crate::vce::{vce_aggregate, vce_single, VceError};

/// Query dropped because too few usable samples remained.
pub const DROP_INSUFFICIENT: &str = "insufficient_samples";
/// Query dropped because every self-reported confidence was zero.
pub const DROP_ZERO_CONFIDENCE: &str = "all_zero_confidence";
/// Query with no cached samples at all.
pub const DROP_MISSING: &str = "missing_samples";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("query {query_id}: {source}")]
    Msp { query_id: String, source: MspError },
    #[error("similarity backend failed for query {query_id}: {source}")]
    Similarity { query_id: String, source: SimError },
    #[error("query {query_id}: {message}")]
    Invalid { query_id: String, message: String },
    #[error("cannot fit the run normalizer: {0}")]
    Normalizer(MspError),
    #[error("method {method} cannot be scored from a {cached} cache")]
    IncompatibleCache { method: Method, cached: Method },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringConfig {
    pub method: Method,
    pub similarity: SimilarityOptions,
    pub clip_percentile: f64,
    pub matching: MatchConfig,
    pub execution: Execution,
}

impl ScoringConfig {
    pub fn new(method: Method, similarity: SimilarityOptions) -> Self {
        Self {
            method,
            similarity,
            clip_percentile: DEFAULT_CLIP_PERCENTILE,
            matching: MatchConfig::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringOutcome {
    /// Scores in query order, dropped queries omitted.
    pub scores: Vec<UncertaintyScore>,
    /// Dropped queries by reason.
    pub dropped: BTreeMap<String, usize>,
    pub normalizer: Option<NormalizationStats>,
}

/// Whether samples decoded for `cached` can be scored as `method`.
pub fn compatible(cached: Method, method: Method) -> bool {
    cached == method
        || (cached.is_cocoa() && matches!(method, Method::Cocoa | Method::CocoaOr | Method::Consistency | Method::Msp))
}

enum Stage {
    Ready(Estimate),
    /// Raw `u` (and `u_cons`) awaiting the run normalizer.
    Pending { u: f64, u_cons: Option<f64>, answer: String },
    Dropped(String),
}

/// Split a group into the low-temperature primary sample (if any) and the
/// alternatives.
fn split_star<'a>(samples: &[&'a SampleRecord]) -> (Option<&'a SampleRecord>, Vec<&'a SampleRecord>) {
    match samples {
        [first, rest @ ..] if !rest.is_empty() && first.regime == Regime::Single && rest.iter().all(|s| s.regime != Regime::Single) => {
            (Some(*first), rest.to_vec())
        }
        _ => (None, samples.to_vec()),
    }
}

fn first_filter_reason(samples: &[&SampleRecord]) -> String {
    samples
        .iter()
        .find_map(|s| s.filter_reason)
        .map_or_else(|| DROP_INSUFFICIENT.to_string(), |r| r.to_string())
}

fn drop_unusable(sample: &SampleRecord) -> Stage {
    Stage::Dropped(sample.filter_reason.map_or_else(|| DROP_INSUFFICIENT.to_string(), |r| r.to_string()))
}

fn stage_query(
    query: &QueryRecord,
    samples: &[&SampleRecord],
    cfg: &ScoringConfig,
    client: &dyn SimilarityClient,
) -> Result<Stage, ScoringError> {
    if samples.is_empty() {
        return Ok(Stage::Dropped(DROP_MISSING.into()));
    }
    let msp_err = |source| ScoringError::Msp { query_id: query.id.clone(), source };
    let (star, alternatives) = split_star(samples);
    match cfg.method {
        Method::VceSingle => {
            let sample = samples[0];
            match vce_single(sample) {
                Ok(e) => Ok(Stage::Ready(e)),
                Err(VceError::Filtered(_)) => Ok(drop_unusable(sample)),
                Err(e) => Err(ScoringError::Invalid { query_id: query.id.clone(), message: e.to_string() }),
            }
        }
        Method::VceMulti => {
            let owned: Vec<SampleRecord> = alternatives.iter().map(|s| (*s).clone()).collect();
            match vce_aggregate(&owned, query.dataset, 2) {
                Ok(agg) => Ok(Stage::Ready(agg.into_estimate())),
                Err(VceError::AllFiltered) => Ok(Stage::Dropped(first_filter_reason(&alternatives))),
                Err(VceError::TooFewSamples { .. }) => Ok(Stage::Dropped(DROP_INSUFFICIENT.into())),
                Err(VceError::AllZeroConfidence) => Ok(Stage::Dropped(DROP_ZERO_CONFIDENCE.into())),
                Err(e) => Err(ScoringError::Invalid { query_id: query.id.clone(), message: e.to_string() }),
            }
        }
        Method::Msp => {
            let sample = star.unwrap_or(samples[0]);
            if !sample.is_usable() {
                return Ok(drop_unusable(sample));
            }
            let u = msp_uncertainty(sample).map_err(msp_err)?;
            let answer = sample.extracted_answer.clone().unwrap_or_default();
            Ok(Stage::Pending { u, u_cons: None, answer })
        }
        Method::Consistency => {
            let usable: Vec<&SampleRecord> = alternatives.iter().copied().filter(|s| s.is_usable()).collect();
            if usable.is_empty() {
                return Ok(Stage::Dropped(first_filter_reason(&alternatives)));
            }
            if usable.len() < 2 {
                return Ok(Stage::Dropped(DROP_INSUFFICIENT.into()));
            }
            let answers: Vec<&str> = usable.iter().filter_map(|s| s.extracted_answer.as_deref()).collect();
            let matrix = pairwise_similarities(&answers, &cfg.similarity, client).map_err(|e| match e {
                ConsistencyError::Backend(source) => ScoringError::Similarity { query_id: query.id.clone(), source },
                other => ScoringError::Invalid { query_id: query.id.clone(), message: other.to_string() },
            })?;
            Ok(Stage::Ready(Estimate {
                confidence: consistency_score(&matrix),
                raw_uncertainty: None,
                components: None,
                chosen_answer: answers[0].to_string(),
            }))
        }
        Method::Cocoa | Method::CocoaOr => {
            let Some(star) = star else {
                return Err(ScoringError::Invalid {
                    query_id: query.id.clone(),
                    message: "no primary-answer sample in the cache".into(),
                });
            };
            match cocoa_inputs(star, &alternatives, &cfg.similarity, client) {
                Ok(inp) => Ok(Stage::Pending { u: inp.u, u_cons: Some(inp.u_cons), answer: inp.chosen_answer }),
                Err(CocoaError::UnusableStar) => Ok(drop_unusable(star)),
                Err(CocoaError::TooFewAlternatives { .. }) => {
                    if alternatives.iter().all(|s| s.filtered) {
                        Ok(Stage::Dropped(first_filter_reason(&alternatives)))
                    } else {
                        Ok(Stage::Dropped(DROP_INSUFFICIENT.into()))
                    }
                }
                Err(CocoaError::Msp(e)) => Err(msp_err(e)),
                Err(CocoaError::Similarity(ConsistencyError::Backend(source))) => {
                    Err(ScoringError::Similarity { query_id: query.id.clone(), source })
                }
                Err(e) => Err(ScoringError::Invalid { query_id: query.id.clone(), message: e.to_string() }),
            }
        }
    }
}

/// Score every query of a run. Per-query work runs under `cfg.execution`;
/// the normalizer fit is a barrier over all queries.
pub fn score_run(
    queries: &[QueryRecord],
    samples: &[SampleRecord],
    cfg: &ScoringConfig,
    client: &dyn SimilarityClient,
) -> Result<ScoringOutcome, ScoringError> {
    let groups = group_samples(queries, samples);
    let staged = cfg
        .execution
        .try_map(&groups, |(q, s)| stage_query(q, s, cfg, client))?;

    let fusion = match cfg.method {
        Method::CocoaOr => FusionMode::OrRule,
        _ => FusionMode::Product,
    };
    let pending: Vec<(f64, f64)> = staged
        .iter()
        .filter_map(|s| match s {
            Stage::Pending { u, u_cons, .. } => Some((*u, u_cons.unwrap_or(1.0))),
            _ => None,
        })
        .collect();
    let normalizer = match cfg.method {
        Method::Msp => {
            let us: Vec<f64> = pending.iter().map(|(u, _)| *u).collect();
            Some(fit_normalizer(&us, cfg.clip_percentile).map_err(ScoringError::Normalizer)?)
        }
        Method::Cocoa | Method::CocoaOr => Some(
            fit_run_normalizer(&pending, fusion, cfg.clip_percentile).map_err(|e| match e {
                CocoaError::Msp(m) => ScoringError::Normalizer(m),
                other => ScoringError::Normalizer(MspError::NonFinite(match other {
                    CocoaError::BadUncertainty(v) | CocoaError::BadDissimilarity(v) => v,
                    _ => f64::NAN,
                })),
            })?,
        ),
        _ => None,
    };

    let mut scores = Vec::new();
    let mut dropped = BTreeMap::new();
    for ((query, _), stage) in groups.iter().zip(staged) {
        let estimate = match stage {
            Stage::Ready(e) => e,
            Stage::Dropped(reason) => {
                *dropped.entry(reason).or_insert(0) += 1;
                continue;
            }
            Stage::Pending { u, u_cons, answer } => {
                let stats = normalizer.as_ref().expect("normalizer fitted for pending stages");
                match u_cons {
                    None => Estimate {
                        confidence: to_confidence(u, stats),
                        raw_uncertainty: Some(u),
                        components: None,
                        chosen_answer: answer,
                    },
                    Some(u_cons) => {
                        let (confidence, parts) = cocoa_score(u, u_cons, fusion, stats).map_err(|e| {
                            ScoringError::Invalid { query_id: query.id.clone(), message: e.to_string() }
                        })?;
                        Estimate {
                            confidence,
                            raw_uncertainty: Some(parts.fused),
                            components: Some(ScoreComponents::from(parts)),
                            chosen_answer: answer,
                        }
                    }
                }
            }
        };
        scores.push(estimate.judge(query, cfg.method, &cfg.matching));
    }
    Ok(ScoringOutcome { scores, dropped, normalizer })
}
