//! Calibration (ECE, reliability bins), discrimination (AUROC), selective
//! prediction and temperature-sweep tables.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Dataset, Method, UncertaintyScore};

pub const DEFAULT_BIN_COUNT: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no scores to evaluate")]
    EmptyInput,
    #[error("confidence {value} at position {index} outside [0, 1]")]
    InvalidConfidence { index: usize, value: f64 },
    #[error("bin count must be positive")]
    ZeroBins,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("a sweep needs at least 2 distinct temperatures, got {0}")]
    TooFewTemperatures(usize),
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub bin_count: usize,
    pub bins: Vec<Bin>,
}

fn validate(scores: &[(f64, bool)]) -> Result<(), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some((index, (value, _))) = scores
        .iter()
        .enumerate()
        .find(|(_, (c, _))| !(0.0..=1.0).contains(c))
    {
        return Err(MetricsError::InvalidConfidence { index, value: *value });
    }
    Ok(())
}

/// Equal-width bin index; bin b covers [b/B, (b+1)/B) and the last bin also
/// takes 1.0. The floor estimate is corrected so the boundaries agree with
/// the division-based bin edges exactly.
pub fn bin_index(confidence: f64, bin_count: usize) -> usize {
    let b = bin_count as f64;
    let mut idx = ((confidence * b).floor() as usize).min(bin_count - 1);
    if idx > 0 && confidence < idx as f64 / b {
        idx -= 1;
    } else if idx + 1 < bin_count && confidence >= (idx + 1) as f64 / b {
        idx += 1;
    }
    idx
}

/// Expected calibration error with equal-width bins over [0, 1].
pub fn compute_ece(scores: &[(f64, bool)], bin_count: usize) -> Result<(f64, ReliabilityBins), MetricsError> {
    if bin_count == 0 {
        return Err(MetricsError::ZeroBins);
    }
    validate(scores)?;
    let mut counts = vec![0usize; bin_count];
    let mut conf_sum = vec![0.0f64; bin_count];
    let mut correct = vec![0usize; bin_count];
    for &(c, ok) in scores {
        let b = bin_index(c, bin_count);
        counts[b] += 1;
        conf_sum[b] += c;
        correct[b] += usize::from(ok);
    }
    let n = scores.len() as f64;
    let mut ece = 0.0;
    let bins = (0..bin_count)
        .map(|b| {
            let lo = b as f64 / bin_count as f64;
            let hi = (b + 1) as f64 / bin_count as f64;
            if counts[b] == 0 {
                return Bin { lo, hi, count: 0, mean_confidence: None, accuracy: None };
            }
            let k = counts[b] as f64;
            let conf = conf_sum[b] / k;
            let acc = correct[b] as f64 / k;
            ece += k / n * (acc - conf).abs();
            Bin { lo, hi, count: counts[b], mean_confidence: Some(conf), accuracy: Some(acc) }
        })
        .collect();
    Ok((ece, ReliabilityBins { bin_count, bins }))
}

/// AUROC as P(conf_correct > conf_incorrect) + 0.5 P(tie). `None` when only
/// one class is present.
///
/// Sorted sweep in O(n log n); pair counts are kept in integer half-units so
/// the result equals an all-pairs count bit for bit.
pub fn compute_auroc(scores: &[(f64, bool)]) -> Option<f64> {
    let positives = scores.iter().filter(|(_, ok)| *ok).count() as u64;
    let negatives = scores.len() as u64 - positives;
    if positives == 0 || negatives == 0 || scores.iter().any(|(c, _)| c.is_nan()) {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut negatives_below: u64 = 0;
    let mut doubled_wins: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        doubled_wins += pos as u128 * (2 * negatives_below + neg) as u128;
        negatives_below += neg;
        i = j;
    }
    Some(doubled_wins as f64 / (2 * positives as u128 * negatives as u128) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveRow {
    pub threshold: f64,
    pub coverage: f64,
    pub filtered_accuracy: Option<f64>,
    pub kept: usize,
}

/// Keep scores strictly above `threshold`.
pub fn selective_prediction(scores: &[(f64, bool)], threshold: f64) -> Result<SelectiveRow, MetricsError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::InvalidThreshold(threshold));
    }
    let kept: Vec<bool> = scores.iter().filter(|(c, _)| *c > threshold).map(|(_, ok)| *ok).collect();
    let coverage = if scores.is_empty() { 0.0 } else { kept.len() as f64 / scores.len() as f64 };
    let filtered_accuracy = if kept.is_empty() {
        None
    } else {
        Some(kept.iter().filter(|ok| **ok).count() as f64 / kept.len() as f64)
    };
    Ok(SelectiveRow { threshold, coverage, filtered_accuracy, kept: kept.len() })
}

pub fn score_pairs(scores: &[UncertaintyScore]) -> Vec<(f64, bool)> {
    scores.iter().map(|s| (s.confidence, s.correct)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: Dataset,
    pub method: Method,
    pub n_effective: usize,
    pub accuracy: f64,
    pub avg_confidence: f64,
    pub ece: f64,
    pub auroc: Option<f64>,
    /// Average confidence minus accuracy.
    pub overconfidence: f64,
    pub bins: ReliabilityBins,
    pub selective: Vec<SelectiveRow>,
}

pub fn evaluate(
    dataset: Dataset,
    method: Method,
    scores: &[UncertaintyScore],
    thresholds: &[f64],
    bin_count: usize,
) -> Result<EvaluationReport, MetricsError> {
    let pairs = score_pairs(scores);
    let (ece, bins) = compute_ece(&pairs, bin_count)?;
    let n = pairs.len() as f64;
    let accuracy = pairs.iter().filter(|(_, ok)| *ok).count() as f64 / n;
    let avg_confidence = pairs.iter().map(|(c, _)| c).sum::<f64>() / n;
    let selective = thresholds
        .iter()
        .map(|t| selective_prediction(&pairs, *t))
        .collect::<Result<_, _>>()?;
    Ok(EvaluationReport {
        dataset,
        method,
        n_effective: pairs.len(),
        accuracy,
        avg_confidence,
        ece,
        auroc: compute_auroc(&pairs),
        overconfidence: avg_confidence - accuracy,
        bins,
        selective,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub auroc: Option<f64>,
    pub overconfidence: f64,
    pub n_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub dataset: Dataset,
    pub method: Method,
    pub rows: Vec<SweepRow>,
}

/// One row per temperature, ascending.
pub fn sweep_aggregate(reports: &[(f64, EvaluationReport)]) -> Result<SweepTable, MetricsError> {
    let mut temps: Vec<f64> = reports.iter().map(|(t, _)| *t).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    if temps.len() < 2 {
        return Err(MetricsError::TooFewTemperatures(temps.len()));
    }
    let mut rows: Vec<SweepRow> = reports
        .iter()
        .map(|(t, r)| SweepRow {
            temperature: *t,
            accuracy: r.accuracy,
            ece: r.ece,
            auroc: r.auroc,
            overconfidence: r.overconfidence,
            n_effective: r.n_effective,
        })
        .collect();
    rows.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
    let (dataset, method) = (reports[0].1.dataset, reports[0].1.method);
    Ok(SweepTable { dataset, method, rows })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Reliability-diagram data: `lo,hi,count,mean_conf,acc`.
pub fn write_bins_csv<W: Write>(bins: &ReliabilityBins, out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lo", "hi", "count", "mean_conf", "acc"])?;
    for b in &bins.bins {
        w.write_record([
            b.lo.to_string(),
            b.hi.to_string(),
            b.count.to_string(),
            opt(b.mean_confidence),
            opt(b.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep data: `T,acc,ece,auroc,overconf`.
pub fn write_sweep_csv<W: Write>(table: &SweepTable, out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T", "acc", "ece", "auroc", "overconf"])?;
    for r in &table.rows {
        w.write_record([
            r.temperature.to_string(),
            r.accuracy.to_string(),
            r.ece.to_string(),
            opt(r.auroc),
            r.overconfidence.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
