//! Scoring plus metrics, and the on-disk artifacts of a run.

use std::fs::File;
use std::io::BufWriter;

use thiserror::Error;

use crate::metrics::{evaluate, write_bins_csv, EvaluationReport, MetricsError, DEFAULT_BIN_COUNT, DEFAULT_THRESHOLD};
use crate::orchestrator::cache::{write_atomic, write_jsonl, CacheError, RunManifest, RunPaths};
use crate::scoring::{score_run, ScoringConfig, ScoringError, ScoringOutcome};
use crate::simclient::SimilarityClient;
use crate::types::{Method, QueryRecord, SampleRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("cache: {0}")]
    Cache(#[from] CacheError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub thresholds: Vec<f64>,
    pub bin_count: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { thresholds: vec![DEFAULT_THRESHOLD], bin_count: DEFAULT_BIN_COUNT }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub outcome: ScoringOutcome,
    pub report: EvaluationReport,
}

pub fn score_and_evaluate(
    manifest: &RunManifest,
    queries: &[QueryRecord],
    samples: &[SampleRecord],
    scoring: &ScoringConfig,
    client: &dyn SimilarityClient,
    settings: &EvalSettings,
) -> Result<Evaluated, PipelineError> {
    let outcome = score_run(queries, samples, scoring, client)?;
    let report = evaluate(manifest.dataset, scoring.method, &outcome.scores, &settings.thresholds, settings.bin_count)?;
    Ok(Evaluated { outcome, report })
}

/// Canonical report.json bytes.
pub fn report_json(report: &EvaluationReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

/// Record scoring results in the manifest.
pub fn apply_to_manifest(manifest: &mut RunManifest, evaluated: &Evaluated, scoring: &ScoringConfig) {
    manifest.n_effective = evaluated.outcome.scores.len();
    manifest.filter_counts = evaluated.outcome.dropped.clone();
    manifest.normalizer = evaluated.outcome.normalizer;
    manifest.similarity_backend = matches!(scoring.method, Method::Consistency | Method::Cocoa | Method::CocoaOr)
        .then(|| scoring.similarity.backend.to_string());
}

/// Write scores.jsonl, report.json, bins.csv and the updated manifest.
pub fn write_artifacts(paths: &RunPaths, manifest: &mut RunManifest, evaluated: &Evaluated, scoring: &ScoringConfig) -> Result<(), PipelineError> {
    write_jsonl(&paths.scores(), &evaluated.outcome.scores)?;
    write_atomic(&paths.report(), report_json(&evaluated.report).as_bytes())?;
    let bins_path = paths.bins();
    let file = File::create(&bins_path).map_err(|source| PipelineError::Io { path: bins_path.display().to_string(), source })?;
    write_bins_csv(&evaluated.report.bins, BufWriter::new(file))?;
    apply_to_manifest(manifest, evaluated, scoring);
    manifest.write(&paths.manifest())?;
    Ok(())
}
