//! Confidence-consistency fusion.
//!
//! Per query: `u` is the sequence NLL of the primary answer and `u_cons` the
//! mean dissimilarity between it and the alternative samples. The product
//! `u * u_cons` (or the OR-rule `max(norm(u), u_cons)`) is then mapped to a
//! confidence over the whole run with the same clip-and-rescale used for MSP.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{symmetric_similarities, ConsistencyError, SimilarityOptions};
use crate::msp::{fit_normalizer, msp_uncertainty, to_confidence, MspError, NormalizationStats};
use crate::simclient::SimilarityClient;
use crate::types::{SampleRecord, ScoreComponents};

/// Default number of alternative samples.
pub const DEFAULT_ALTERNATIVES: usize = 10;
/// Temperature of the dedicated primary-answer decode.
pub const STAR_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CocoaError {
    #[error(transparent)]
    Msp(#[from] MspError),
    #[error(transparent)]
    Similarity(#[from] ConsistencyError),
    #[error("need at least {need} usable alternatives, got {got}")]
    TooFewAlternatives { got: usize, need: usize },
    #[error("or-rule fusion needs a fitted normalizer for u")]
    MissingStats,
    #[error("primary sample is filtered or has no answer")]
    UnusableStar,
    #[error("u_cons {0} outside [0, 1]")]
    BadDissimilarity(f64),
    #[error("u {0} is negative or not finite")]
    BadUncertainty(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Product,
    OrRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CocoaComponents {
    pub u: f64,
    pub u_cons: f64,
    pub fused: f64,
}

/// Mean of `1 - s(star, alt)` over the alternatives.
pub fn cocoa_dissimilarity(
    star_answer: &str,
    alternatives: &[&str],
    opts: &SimilarityOptions,
    client: &dyn SimilarityClient,
) -> Result<f64, CocoaError> {
    if alternatives.is_empty() {
        return Err(CocoaError::TooFewAlternatives { got: 0, need: 1 });
    }
    let mut texts = Vec::with_capacity(alternatives.len() + 1);
    texts.push(star_answer);
    texts.extend_from_slice(alternatives);
    let index_pairs: Vec<(usize, usize)> = (1..texts.len()).map(|i| (0, i)).collect();
    let sims = symmetric_similarities(&texts, &index_pairs, opts, client)?;
    let total: f64 = sims.iter().map(|s| 1.0 - s).sum();
    Ok((total / alternatives.len() as f64).clamp(0.0, 1.0))
}

/// Fused uncertainty. The OR rule maps `u` into [0, 1] with `stats` first so
/// both arguments of the max share a scale.
pub fn cocoa_fuse(
    u: f64,
    u_cons: f64,
    mode: FusionMode,
    stats: Option<&NormalizationStats>,
) -> Result<f64, CocoaError> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(CocoaError::BadUncertainty(u));
    }
    if !(0.0..=1.0).contains(&u_cons) {
        return Err(CocoaError::BadDissimilarity(u_cons));
    }
    match mode {
        FusionMode::Product => Ok(u * u_cons),
        FusionMode::OrRule => {
            let stats = stats.ok_or(CocoaError::MissingStats)?;
            Ok((1.0 - to_confidence(u, stats)).max(u_cons))
        }
    }
}

/// Raw per-query inputs to fusion: `(u, u_cons)` plus the primary answer.
#[derive(Debug, Clone, PartialEq)]
pub struct CocoaInputs {
    pub u: f64,
    pub u_cons: f64,
    pub chosen_answer: String,
}

pub fn cocoa_inputs(
    star: &SampleRecord,
    alternatives: &[&SampleRecord],
    opts: &SimilarityOptions,
    client: &dyn SimilarityClient,
) -> Result<CocoaInputs, CocoaError> {
    if star.filtered {
        return Err(CocoaError::UnusableStar);
    }
    let star_answer = star.extracted_answer.as_deref().ok_or(CocoaError::UnusableStar)?;
    let u = msp_uncertainty(star)?;
    let alts: Vec<&str> = alternatives
        .iter()
        .filter(|s| s.is_usable())
        .filter_map(|s| s.extracted_answer.as_deref())
        .collect();
    if alts.is_empty() {
        return Err(CocoaError::TooFewAlternatives { got: 0, need: 1 });
    }
    let u_cons = cocoa_dissimilarity(star_answer, &alts, opts, client)?;
    Ok(CocoaInputs {
        u,
        u_cons,
        chosen_answer: star_answer.to_string(),
    })
}

/// Normalizer for a run: fitted on the products in product mode, on the raw
/// `u` values in OR mode (whose fused values are already in [0, 1]).
pub fn fit_run_normalizer(
    inputs: &[(f64, f64)],
    mode: FusionMode,
    clip_percentile: f64,
) -> Result<NormalizationStats, CocoaError> {
    let values: Vec<f64> = match mode {
        FusionMode::Product => inputs.iter().map(|(u, c)| u * c).collect(),
        FusionMode::OrRule => inputs.iter().map(|(u, _)| *u).collect(),
    };
    Ok(fit_normalizer(&values, clip_percentile)?)
}

/// Final confidence and recorded components for one query, given the run
/// normalizer from [`fit_run_normalizer`].
pub fn cocoa_score(
    u: f64,
    u_cons: f64,
    mode: FusionMode,
    run_stats: &NormalizationStats,
) -> Result<(f64, CocoaComponents), CocoaError> {
    let fused = cocoa_fuse(u, u_cons, mode, Some(run_stats))?;
    let confidence = match mode {
        FusionMode::Product => to_confidence(fused, run_stats),
        FusionMode::OrRule => (1.0 - fused).clamp(0.0, 1.0),
    };
    Ok((confidence, CocoaComponents { u, u_cons, fused }))
}

impl From<CocoaComponents> for ScoreComponents {
    fn from(c: CocoaComponents) -> Self {
        ScoreComponents { u: c.u, u_cons: c.u_cons }
    }
}
