//! Sequence-likelihood uncertainty and the clip-and-rescale map that turns
//! any run of uncertainties into confidence-like scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::Estimate;
use crate::types::SampleRecord;

pub const DEFAULT_CLIP_PERCENTILE: f64 = 0.98;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MspError {
    #[error("empty token log-probability list")]
    EmptyLogprobs,
    #[error("token log-probability {0} is positive or NaN")]
    PositiveLogprob(f64),
    #[error("need at least 2 values to fit a normalizer, got {0}")]
    TooFewValues(usize),
    #[error("clip percentile {0} outside (0, 1]")]
    BadPercentile(f64),
    #[error("non-finite uncertainty value {0}")]
    NonFinite(f64),
    #[error("sample {0} has no token log-probabilities; the endpoint did not return them")]
    MissingLogprobs(String),
}

/// Frozen clip point and floor fitted over one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min_u: f64,
    /// Clip point; the 98th percentile under the default configuration.
    pub q98: f64,
    pub clip_percentile: f64,
    pub n_fitted: usize,
}

/// Negative log-likelihood of a generated sequence.
pub fn sequence_nll(token_logprobs: &[f64]) -> Result<f64, MspError> {
    if token_logprobs.is_empty() {
        return Err(MspError::EmptyLogprobs);
    }
    let mut total = 0.0;
    for &lp in token_logprobs {
        if !(lp <= 0.0) {
            return Err(MspError::PositiveLogprob(lp));
        }
        total -= lp;
    }
    Ok(total)
}

/// Percentile by linear interpolation between order statistics of a sorted
/// slice (`p` in [0, 1]).
pub fn interpolated_percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (sorted.len() - 1) as f64 * p;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn fit_normalizer(u_values: &[f64], clip_percentile: f64) -> Result<NormalizationStats, MspError> {
    if !(clip_percentile > 0.0 && clip_percentile <= 1.0) {
        return Err(MspError::BadPercentile(clip_percentile));
    }
    if u_values.len() < 2 {
        return Err(MspError::TooFewValues(u_values.len()));
    }
    if let Some(bad) = u_values.iter().find(|u| !u.is_finite()) {
        return Err(MspError::NonFinite(*bad));
    }
    let mut sorted = u_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = interpolated_percentile(&sorted, clip_percentile);
    // Floor of the clipped values; clipping only lowers the top, so this is
    // the raw minimum unless every value sits above the clip point.
    let min_u = sorted[0].min(q);
    Ok(NormalizationStats {
        min_u,
        q98: q,
        clip_percentile,
        n_fitted: u_values.len(),
    })
}

/// Clip at the fitted percentile and rescale so that `min_u` maps to 1 and
/// the clip point to 0.
pub fn to_confidence(u: f64, stats: &NormalizationStats) -> f64 {
    let span = stats.q98 - stats.min_u;
    if span <= 0.0 {
        return 1.0;
    }
    let clipped = u.min(stats.q98);
    (1.0 - (clipped - stats.min_u) / span).clamp(0.0, 1.0)
}

/// Raw MSP uncertainty for one sample; confidence is filled in once the run
/// normalizer is known (see [`msp_score`]).
pub fn msp_uncertainty(sample: &SampleRecord) -> Result<f64, MspError> {
    let lps = sample
        .token_logprobs
        .as_deref()
        .ok_or_else(|| MspError::MissingLogprobs(format!("{}#{}", sample.query_id, sample.sample_index)))?;
    sequence_nll(lps)
}

pub fn msp_score(sample: &SampleRecord, stats: &NormalizationStats) -> Result<Estimate, MspError> {
    let u = msp_uncertainty(sample)?;
    Ok(Estimate {
        confidence: to_confidence(u, stats),
        raw_uncertainty: Some(u),
        components: None,
        chosen_answer: sample
            .extracted_answer
            .clone()
            .unwrap_or_else(|| sample.raw_text.trim().to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent percentile oracle: walk the sorted list to the bracketing
    /// pair instead of indexing by floor.
    fn oracle_percentile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let target = p * (v.len() as f64 - 1.0);
        let mut i = 0;
        while (i as f64 + 1.0) <= target && i + 1 < v.len() {
            i += 1;
        }
        if i + 1 == v.len() {
            return v[i];
        }
        let w = target - i as f64;
        v[i] * (1.0 - w) + v[i + 1] * w
    }

    #[test]
    fn nll_hand_sums() {
        assert_eq!(sequence_nll(&[0.0]).unwrap(), 0.0);
        assert_eq!(sequence_nll(&[-0.5, -1.5]).unwrap(), 2.0);
        assert!((sequence_nll(&[-0.1; 10]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sequence_nll(&[]), Err(MspError::EmptyLogprobs));
        assert_eq!(sequence_nll(&[-0.2, 0.3]), Err(MspError::PositiveLogprob(0.3)));
    }

    #[test]
    fn percentile_of_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let stats = fit_normalizer(&values, 0.98).unwrap();
        let oracle = oracle_percentile(&values, 0.98);
        assert!((oracle - 98.02).abs() < 1e-9);
        assert!((stats.q98 - oracle).abs() < 1e-12);
        assert_eq!(stats.min_u, 1.0);
        assert_eq!(stats.n_fitted, 100);
    }

    #[test]
    fn percentile_two_points_and_constant() {
        let stats = fit_normalizer(&[0.0, 10.0], 0.98).unwrap();
        assert!((stats.q98 - 9.8).abs() < 1e-12);
        assert_eq!(stats.min_u, 0.0);

        let stats = fit_normalizer(&[3.5; 7], 0.98).unwrap();
        assert_eq!(stats.q98, 3.5);
        assert_eq!(stats.min_u, 3.5);
        assert_eq!(to_confidence(3.5, &stats), 1.0);
        assert_eq!(to_confidence(100.0, &stats), 1.0);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert_eq!(fit_normalizer(&[1.0], 0.98), Err(MspError::TooFewValues(1)));
        assert_eq!(fit_normalizer(&[1.0, 2.0], 0.0), Err(MspError::BadPercentile(0.0)));
        assert!(matches!(fit_normalizer(&[1.0, f64::NAN], 0.98), Err(MspError::NonFinite(_))));
    }

    #[test]
    fn confidence_endpoints_and_midpoint() {
        let stats = NormalizationStats {
            min_u: 1.0,
            q98: 9.0,
            clip_percentile: 0.98,
            n_fitted: 10,
        };
        assert_eq!(to_confidence(1.0, &stats), 1.0);
        assert_eq!(to_confidence(9.0, &stats), 0.0);
        assert_eq!(to_confidence(50.0, &stats), 0.0);
        assert_eq!(to_confidence(5.0, &stats), 0.5);
        // Values below the fitted floor stay in range.
        assert_eq!(to_confidence(0.0, &stats), 1.0);
    }

    proptest! {
        #[test]
        fn fit_matches_oracle(values in prop::collection::vec(0.0f64..50.0, 2..200), p in 0.5f64..1.0) {
            let stats = fit_normalizer(&values, p).unwrap();
            prop_assert!((stats.q98 - oracle_percentile(&values, p)).abs() < 1e-9);
            prop_assert!(stats.min_u <= stats.q98);
        }

        #[test]
        fn confidence_is_monotone(values in prop::collection::vec(0.0f64..50.0, 2..50), a in 0.0f64..60.0, b in 0.0f64..60.0) {
            let stats = fit_normalizer(&values, 0.98).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(to_confidence(lo, &stats) >= to_confidence(hi, &stats));
        }

        #[test]
        fn fitted_set_spans_unit_interval(values in prop::collection::vec(0.0f64..50.0, 2..100)) {
            let stats = fit_normalizer(&values, 0.98).unwrap();
            prop_assume!(stats.q98 > stats.min_u);
            let conf: Vec<f64> = values.iter().map(|u| to_confidence(*u, &stats)).collect();
            prop_assert!(conf.iter().all(|c| (0.0..=1.0).contains(c)));
            prop_assert!(conf.iter().any(|c| *c == 1.0));
            prop_assert!(conf.iter().any(|c| *c == 0.0));
        }
    }
}
