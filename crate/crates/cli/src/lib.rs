//! Command implementations behind the `uqgate` binary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use uqgate_core::consistency::{SimilarityBackend, SimilarityOptions};
use uqgate_core::datasets::{self, DatasetError};
use uqgate_core::metrics::{sweep_aggregate, write_sweep_csv, EvaluationReport, DEFAULT_BIN_COUNT, DEFAULT_THRESHOLD};
use uqgate_core::msp::MspError;
use uqgate_core::orchestrator::cache::{self, config_hash, load_run, CacheError, RunError, RunLock, RunManifest};
use uqgate_core::orchestrator::prompt::PromptTemplate;
use uqgate_core::orchestrator::{run_dataset, DecodeConfig, DecodeError, HttpLlmClient, HttpLlmConfig, RunOptions, RunPaths};
use uqgate_core::pipeline::{report_json, score_and_evaluate, write_artifacts, EvalSettings, PipelineError};
use uqgate_core::scoring::{compatible, ScoringConfig, ScoringError};
use uqgate_core::simclient::{HttpSimilarityClient, HttpSimilarityConfig, LexicalSimilarity, SimilarityClient};
use uqgate_core::{Dataset, Method, Regime};

pub const DEFAULT_SWEEP: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const DEFAULT_MODEL: &str = "default";

/// Failure of one command, tagged with the stage that failed.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Upstream,
    CacheCorrupt,
    Other,
}

impl CliError {
    pub fn new(stage: &'static str, kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { stage, kind, message: message.into() }
    }

    fn config(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(stage, ErrorKind::Config, message)
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Other => 1,
            ErrorKind::Config => 2,
            ErrorKind::Upstream => 3,
            ErrorKind::CacheCorrupt => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

fn cache_kind(e: &CacheError) -> ErrorKind {
    match e {
        CacheError::Corrupt { .. } | CacheError::Incomplete(_) => ErrorKind::CacheCorrupt,
        CacheError::Exists(_) | CacheError::ConfigMismatch { .. } | CacheError::Locked(_) | CacheError::MissingManifest(_) => {
            ErrorKind::Config
        }
        CacheError::Io { .. } => ErrorKind::Other,
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        let kind = match &e {
            RunError::Cache(c) => cache_kind(c),
            RunError::Decode(DecodeError::Config(_)) | RunError::Config(_) => ErrorKind::Config,
            RunError::Decode(_) => ErrorKind::Upstream,
        };
        Self::new("decode", kind, e.to_string())
    }
}

impl From<CacheError> for CliError {
    fn from(e: CacheError) -> Self {
        Self::new("cache", cache_kind(&e), e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let kind = match e {
            DatasetError::Io { .. } => ErrorKind::Other,
            _ => ErrorKind::Config,
        };
        Self::new("dataset", kind, e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let kind = match &e {
            PipelineError::Scoring(ScoringError::Similarity { .. })
            | PipelineError::Scoring(ScoringError::Msp { source: MspError::MissingLogprobs(_), .. }) => ErrorKind::Upstream,
            PipelineError::Scoring(ScoringError::IncompatibleCache { .. }) => ErrorKind::Config,
            PipelineError::Cache(c) => cache_kind(c),
            _ => ErrorKind::Other,
        };
        Self::new("score", kind, e.to_string())
    }
}

fn io_error(stage: &'static str, path: &Path, e: std::io::Error) -> CliError {
    CliError::new(stage, ErrorKind::Other, format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "uqgate", version, about = "Confidence estimation and calibration runs against OpenAI-compatible endpoints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a raw benchmark file into QueryRecord JSONL.
    Ingest(IngestArgs),
    /// Decode, score and evaluate one configuration.
    Run(RunArgs),
    /// Run one configuration per temperature and tabulate the results.
    Sweep(RunArgs),
    /// Recompute scores and metrics from a run directory's cache.
    Rescore(RescoreArgs),
    /// Merge run reports into one comparison table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// boolq, squad2, triviaqa, gsm8k or custom.
    #[arg(long)]
    pub kind: Dataset,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Keep a seeded random subset of this size.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// Flat TOML file of defaults; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// QueryRecord JSONL.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// vce_single, vce_multi, msp, consistency, cocoa or cocoa_or.
    #[arg(long)]
    pub method: Option<Method>,
    /// single, sep or topk.
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Selective-prediction thresholds (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub threshold: Option<Vec<f64>>,
    /// Temperature grid for `sweep` (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    /// Base URL of an OpenAI-compatible server.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub sim_endpoint: Option<String>,
    /// embedding, nli or lexical.
    #[arg(long)]
    pub sim_backend: Option<SimilarityBackend>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Evaluate a seeded random subset of this many queries.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub resume: bool,
    /// Use only the cache and the lexical similarity fallback.
    #[arg(long)]
    pub offline: bool,
    /// Discard an unusable cache instead of failing.
    #[arg(long)]
    pub rebuild_cache: bool,
}

#[derive(Args, Debug)]
pub struct RescoreArgs {
    /// Run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Score as this method (default: the run's method).
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub offline: bool,
    #[arg(long)]
    pub sim_endpoint: Option<String>,
    #[arg(long)]
    pub sim_backend: Option<SimilarityBackend>,
    #[arg(long, value_delimiter = ',')]
    pub threshold: Option<Vec<f64>>,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub dataset: PathBuf,
    pub method: Method,
    pub decode: DecodeConfig,
    pub model: String,
    pub endpoint: Option<String>,
    pub sim_endpoint: Option<String>,
    pub similarity: SimilarityOptions,
    pub thresholds: Vec<f64>,
    pub out: PathBuf,
    pub sweep: Vec<f64>,
    pub limit: Option<usize>,
    pub seed: u64,
    pub resume: bool,
    pub offline: bool,
    pub rebuild: bool,
}

fn toml_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Array(items) => items.iter().map(toml_text).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn take<T: FromStr>(slot: &mut Option<T>, table: &mut BTreeMap<String, String>, key: &str) -> Result<(), CliError>
where
    T::Err: fmt::Display,
{
    if let Some(raw) = table.remove(key) {
        if slot.is_none() {
            *slot = Some(raw.parse().map_err(|e| CliError::config("config", format!("{key} = {raw:?}: {e}")))?);
        }
    }
    Ok(())
}

fn take_list(slot: &mut Option<Vec<f64>>, table: &mut BTreeMap<String, String>, key: &str) -> Result<(), CliError> {
    if let Some(raw) = table.remove(key) {
        if slot.is_none() {
            let parsed: Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
            *slot = Some(parsed.map_err(|e| CliError::config("config", format!("{key} = {raw:?}: {e}")))?);
        }
    }
    Ok(())
}

fn take_flag(slot: &mut bool, table: &mut BTreeMap<String, String>, key: &str) -> Result<(), CliError> {
    let mut v: Option<bool> = None;
    take(&mut v, table, key)?;
    *slot |= v.unwrap_or(false);
    Ok(())
}

impl RunArgs {
    /// Fill unset flags from the `--config` file.
    pub fn merge_config(mut self) -> Result<Self, CliError> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let text = fs::read_to_string(&path).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        let parsed: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        let mut table: BTreeMap<String, String> =
            parsed.iter().map(|(k, v)| (k.replace('-', "_"), toml_text(v))).collect();
        take(&mut self.dataset, &mut table, "dataset")?;
        take(&mut self.method, &mut table, "method")?;
        take(&mut self.regime, &mut table, "regime")?;
        take(&mut self.samples, &mut table, "samples")?;
        take(&mut self.temperature, &mut table, "temperature")?;
        take_list(&mut self.threshold, &mut table, "threshold")?;
        take_list(&mut self.sweep, &mut table, "sweep")?;
        take(&mut self.endpoint, &mut table, "endpoint")?;
        take(&mut self.model, &mut table, "model")?;
        take(&mut self.sim_endpoint, &mut table, "sim_endpoint")?;
        take(&mut self.sim_backend, &mut table, "sim_backend")?;
        take(&mut self.seed, &mut table, "seed")?;
        take(&mut self.out, &mut table, "out")?;
        take(&mut self.max_tokens, &mut table, "max_tokens")?;
        take(&mut self.max_in_flight, &mut table, "max_in_flight")?;
        take(&mut self.limit, &mut table, "limit")?;
        take_flag(&mut self.resume, &mut table, "resume")?;
        take_flag(&mut self.offline, &mut table, "offline")?;
        take_flag(&mut self.rebuild_cache, &mut table, "rebuild_cache")?;
        if let Some(key) = table.keys().next() {
            return Err(CliError::config("config", format!("unknown key `{key}` in {}", path.display())));
        }
        Ok(self)
    }

    pub fn into_spec(self) -> Result<RunSpec, CliError> {
        let args = self.merge_config()?;
        let missing = |flag: &str| CliError::config("config", format!("--{flag} is required"));
        let method = args.method.ok_or_else(|| missing("method"))?;
        let mut decode = DecodeConfig::for_method(method);
        if let Some(r) = args.regime {
            decode.regime = r;
        }
        if let Some(m) = args.samples {
            decode.samples = m;
        }
        if let Some(t) = args.temperature {
            decode.temperature = t;
        }
        if let Some(m) = args.max_tokens {
            decode.max_tokens = m;
        }
        if let Some(m) = args.max_in_flight {
            decode.max_in_flight = m.max(1);
        }
        let seed = args.seed.unwrap_or(0);
        decode.seed_base = Some(seed);
        decode.validate().map_err(|e| CliError::config("config", e.to_string()))?;

        let backend = if args.offline {
            SimilarityBackend::LexicalFallback
        } else {
            args.sim_backend.unwrap_or(match method {
                Method::Cocoa | Method::CocoaOr => SimilarityBackend::NliEntailment,
                _ => SimilarityBackend::EmbeddingCosine,
            })
        };
        let thresholds = args.threshold.unwrap_or_else(|| vec![DEFAULT_THRESHOLD]);
        if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(CliError::config("config", format!("threshold {t} outside [0, 1]")));
        }
        Ok(RunSpec {
            dataset: args.dataset.ok_or_else(|| missing("dataset"))?,
            method,
            decode,
            model: args.model.unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            endpoint: args.endpoint,
            sim_endpoint: args.sim_endpoint,
            similarity: SimilarityOptions::new(backend),
            thresholds,
            out: args.out.ok_or_else(|| missing("out"))?,
            sweep: args.sweep.unwrap_or_else(|| DEFAULT_SWEEP.to_vec()),
            limit: args.limit,
            seed,
            resume: args.resume,
            offline: args.offline,
            rebuild: args.rebuild_cache,
        })
    }
}

fn needs_similarity(method: Method) -> bool {
    matches!(method, Method::Consistency | Method::Cocoa | Method::CocoaOr)
}

/// Similarity scorer for a method: lexical offline, otherwise the sidecar
/// after a successful health probe.
pub fn similarity_client(
    method: Method,
    opts: &SimilarityOptions,
    sim_endpoint: Option<&str>,
) -> Result<Box<dyn SimilarityClient>, CliError> {
    if !needs_similarity(method) || opts.backend == SimilarityBackend::LexicalFallback {
        return Ok(Box::new(LexicalSimilarity));
    }
    let url = sim_endpoint.ok_or_else(|| {
        CliError::config("config", format!("{method} with {} similarity needs --sim-endpoint (or --offline)", opts.backend))
    })?;
    let client = HttpSimilarityClient::new(HttpSimilarityConfig::new(url));
    client
        .wait_healthy(10, Duration::from_millis(500))
        .map_err(|e| CliError::new("similarity", ErrorKind::Upstream, e.to_string()))?;
    Ok(Box::new(client))
}

fn load_queries(spec: &RunSpec) -> Result<(Vec<uqgate_core::QueryRecord>, Option<datasets::SubsampleInfo>), CliError> {
    let queries = datasets::read_queries(&spec.dataset)?;
    if queries.is_empty() {
        return Err(CliError::config("dataset", format!("{} has no queries", spec.dataset.display())));
    }
    Ok(match spec.limit {
        Some(n) => {
            let (q, info) = datasets::subsample(queries, n, spec.seed);
            (q, Some(info))
        }
        None => (queries, None),
    })
}

/// One-line summary: dataset, method, N, accuracy, ECE, AUROC.
pub fn summary_row(report: &EvaluationReport) -> String {
    format!(
        "{:<9} {:<12} N={:<5} ACC={:.3} ECE={:.3} AUROC={}",
        report.dataset.as_str(),
        report.method.as_str(),
        report.n_effective,
        report.accuracy,
        report.ece,
        report.auroc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.3}"))
    )
}

/// Decode (or reuse the cache), score, evaluate and write every artifact.
pub fn cmd_run(spec: &RunSpec) -> Result<EvaluationReport, CliError> {
    let (queries, subsample) = load_queries(spec)?;
    let paths = RunPaths::new(&spec.out);
    let _lock = RunLock::acquire(&paths)?;

    let (samples, mut manifest) = if spec.offline {
        let run = load_run(&paths)?;
        let dataset = queries[0].dataset;
        let template = PromptTemplate::for_query(dataset, spec.method);
        let expected = config_hash(&run.manifest.model_id, &queries, &spec.decode, &template);
        if expected != run.manifest.config_hash {
            return Err(CacheError::ConfigMismatch {
                path: paths.dir.clone(),
                expected,
                found: run.manifest.config_hash.clone(),
            }
            .into());
        }
        (run.samples, run.manifest)
    } else {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| CliError::config("config", "--endpoint is required unless --offline"))?;
        let client = HttpLlmClient::new(HttpLlmConfig::new(endpoint, spec.model.clone()));
        let opts = RunOptions { resume: spec.resume, rebuild: spec.rebuild, subsample };
        run_dataset(&queries, &spec.decode, &client, &paths, &opts)?
    };

    let sim = similarity_client(spec.method, &spec.similarity, spec.sim_endpoint.as_deref())?;
    let scoring = ScoringConfig::new(spec.method, spec.similarity);
    let settings = EvalSettings { thresholds: spec.thresholds.clone(), bin_count: DEFAULT_BIN_COUNT };
    let evaluated = score_and_evaluate(&manifest, &queries, &samples, &scoring, sim.as_ref(), &settings)?;
    write_artifacts(&paths, &mut manifest, &evaluated, &scoring)?;
    Ok(evaluated.report)
}

fn temperature_dir(t: f64) -> String {
    format!("T{t}")
}

/// One run per temperature under `out/T<t>/`, then `out/sweep.csv`.
pub fn cmd_sweep(spec: &RunSpec) -> Result<Vec<(f64, EvaluationReport)>, CliError> {
    let mut grid = spec.sweep.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() < 2 {
        return Err(CliError::config("config", "a sweep needs at least two temperatures"));
    }
    let mut reports = Vec::new();
    for t in grid {
        let mut run = spec.clone();
        run.decode.temperature = t;
        run.decode.validate().map_err(|e| CliError::config("config", e.to_string()))?;
        run.out = spec.out.join(temperature_dir(t));
        run.resume = true;
        reports.push((t, cmd_run(&run)?));
    }
    let table = sweep_aggregate(&reports).map_err(|e| CliError::new("report", ErrorKind::Other, e.to_string()))?;
    let path = spec.out.join("sweep.csv");
    let file = fs::File::create(&path).map_err(|e| io_error("report", &path, e))?;
    write_sweep_csv(&table, file).map_err(|e| CliError::new("report", ErrorKind::Other, e.to_string()))?;
    log::info!("sweep table written to {}", path.display());
    Ok(reports)
}

fn read_report(path: &Path) -> Result<EvaluationReport, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error("report", path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::new("report", ErrorKind::Other, format!("{}: {e}", path.display())))
}

/// Rescore a cached run. Thresholds and bin count default to those of the
/// run's existing report so an untouched cache reproduces it exactly.
pub fn cmd_rescore(args: &RescoreArgs) -> Result<EvaluationReport, CliError> {
    let paths = RunPaths::new(&args.run);
    let run = load_run(&paths)?;
    let method = args.method.unwrap_or(run.manifest.method);
    if !compatible(run.manifest.method, method) {
        return Err(PipelineError::Scoring(ScoringError::IncompatibleCache { method, cached: run.manifest.method }).into());
    }
    let previous = paths.report().exists().then(|| read_report(&paths.report())).transpose()?;
    let thresholds = args.threshold.clone().unwrap_or_else(|| match &previous {
        Some(r) if !r.selective.is_empty() => r.selective.iter().map(|s| s.threshold).collect(),
        _ => vec![DEFAULT_THRESHOLD],
    });
    let bin_count = previous.as_ref().map_or(DEFAULT_BIN_COUNT, |r| r.bins.bins.len().max(1));
    let recorded = run.manifest.similarity_backend.as_deref().and_then(|b| b.parse().ok());
    let backend = if args.offline {
        SimilarityBackend::LexicalFallback
    } else {
        args.sim_backend.or(recorded).unwrap_or(match method {
            Method::Cocoa | Method::CocoaOr => SimilarityBackend::NliEntailment,
            _ => SimilarityBackend::EmbeddingCosine,
        })
    };
    let similarity = SimilarityOptions::new(backend);
    let sim = similarity_client(method, &similarity, args.sim_endpoint.as_deref())?;
    let scoring = ScoringConfig::new(method, similarity);
    let settings = EvalSettings { thresholds, bin_count };
    let evaluated = score_and_evaluate(&run.manifest, &run.queries, &run.samples, &scoring, sim.as_ref(), &settings)?;
    let json = report_json(&evaluated.report);
    match &args.out {
        Some(path) => cache::write_atomic(path, json.as_bytes())?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(json.as_bytes())
                .map_err(|e| CliError::new("report", ErrorKind::Other, e.to_string()))?;
        }
    }
    Ok(evaluated.report)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub dataset: String,
    pub method: String,
    pub n: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub auroc: Option<f64>,
    pub threshold: Option<f64>,
    pub filtered_accuracy: Option<f64>,
    pub kept: usize,
}

impl ReportRow {
    pub fn from_report(run: &str, r: &EvaluationReport) -> Self {
        let sel = r.selective.first();
        Self {
            run: run.to_string(),
            dataset: r.dataset.to_string(),
            method: r.method.to_string(),
            n: r.n_effective,
            accuracy: r.accuracy,
            ece: r.ece,
            auroc: r.auroc,
            threshold: sel.map(|s| s.threshold),
            filtered_accuracy: sel.and_then(|s| s.filtered_accuracy),
            kept: sel.map_or(0, |s| s.kept),
        }
    }

    /// Filtered minus overall accuracy, in percentage points.
    pub fn improvement_pp(&self) -> Option<f64> {
        self.filtered_accuracy.map(|f| 100.0 * (f - self.accuracy))
    }

    pub fn remaining(&self) -> String {
        let pct = if self.n == 0 { 0.0 } else { 100.0 * self.kept as f64 / self.n as f64 };
        format!("{} / {} ({:.1}%)", self.kept, self.n, pct)
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let mut out = format!(
        "{:<24} {:<9} {:<10} {:>5} {:>7} {:>7} {:>7} {:>6} {:>12} {:>12} {:>17} {}\n",
        "run", "dataset", "method", "N", "ACC", "ECE", "AUROC", "t", "Overall ACC", "Filtered ACC", "Improvement (pp)", "Remaining"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<24} {:<9} {:<10} {:>5} {:>7.3} {:>7.3} {:>7} {:>6} {:>12.3} {:>12} {:>17} {}\n",
            r.run,
            r.dataset,
            r.method,
            r.n,
            r.accuracy,
            r.ece,
            fmt_opt(r.auroc, 3),
            fmt_opt(r.threshold, 2),
            r.accuracy,
            fmt_opt(r.filtered_accuracy, 3),
            fmt_opt(r.improvement_pp(), 1),
            r.remaining()
        ));
    }
    out
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::new("report", ErrorKind::Other, e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run", "dataset", "method", "n", "acc", "ece", "auroc", "threshold", "overall_acc", "filtered_acc", "improvement_pp", "remaining",
    ])
    .map_err(err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.run.clone(),
            r.dataset.clone(),
            r.method.clone(),
            r.n.to_string(),
            r.accuracy.to_string(),
            r.ece.to_string(),
            opt(r.auroc),
            opt(r.threshold),
            r.accuracy.to_string(),
            opt(r.filtered_accuracy),
            opt(r.improvement_pp()),
            r.remaining(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::new("report", ErrorKind::Other, e.to_string()))
}

pub fn cmd_report(args: &ReportArgs) -> Result<Vec<ReportRow>, CliError> {
    let mut rows = Vec::new();
    for dir in &args.runs {
        let paths = RunPaths::new(dir);
        let report = read_report(&paths.report())?;
        let name = RunManifest::read(&paths.manifest())
            .map(|m| m.run_id)
            .unwrap_or_else(|_| dir.display().to_string());
        rows.push(ReportRow::from_report(&name, &report));
    }
    if let Some(path) = &args.csv {
        let file = fs::File::create(path).map_err(|e| io_error("report", path, e))?;
        write_report_csv(&rows, file)?;
    }
    Ok(rows)
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<usize, CliError> {
    let records = datasets::ingest(&args.input, args.kind)?;
    let records = match args.limit {
        Some(n) => datasets::subsample(records, n, args.seed).0,
        None => records,
    };
    let file = fs::File::create(&args.output).map_err(|e| io_error("dataset", &args.output, e))?;
    datasets::write_queries(&records, std::io::BufWriter::new(file))?;
    log::info!("wrote {} records to {}", records.len(), args.output.display());
    Ok(records.len())
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&a).map(drop),
        Command::Run(a) => {
            let report = cmd_run(&a.into_spec()?)?;
            println!("{}", summary_row(&report));
            Ok(())
        }
        Command::Sweep(a) => {
            for (_, report) in cmd_sweep(&a.into_spec()?)? {
                println!("{}", summary_row(&report));
            }
            Ok(())
        }
        Command::Rescore(a) => {
            let report = cmd_rescore(&a)?;
            eprintln!("{}", summary_row(&report));
            Ok(())
        }
        Command::Report(a) => {
            print!("{}", render_table(&cmd_report(&a)?));
            Ok(())
        }
    }
}
