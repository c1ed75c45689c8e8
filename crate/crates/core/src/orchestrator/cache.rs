//! Run directory layout, append-only sample cache, manifest and resume.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::prompt::PromptTemplate;
use super::{decode_query, DecodeConfig, DecodeError, LlmClient};
use crate::datasets::SubsampleInfo;
use crate::exec::Execution;
use crate::msp::NormalizationStats;
use crate::types::{Dataset, Method, QueryRecord, SampleRecord};

pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const BINS_FILE: &str = "bins.csv";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cache corrupt at {path} line {line}: {message} (rerun with --rebuild-cache to start over)")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{0} already holds samples; pass --resume to continue it or choose another --out")]
    Exists(PathBuf),
    #[error("{path} was produced by a different configuration (hash {found}, expected {expected})")]
    ConfigMismatch { path: PathBuf, expected: String, found: String },
    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error("{0} has no manifest.json")]
    MissingManifest(PathBuf),
    #[error("{0}: run is incomplete; resume it before rescoring")]
    Incomplete(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("invalid run: {0}")]
    Config(String),
}

/// Paths of every artifact inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn samples(&self) -> PathBuf {
        self.dir.join(SAMPLES_FILE)
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }
    pub fn queries(&self) -> PathBuf {
        self.dir.join(QUERIES_FILE)
    }
    pub fn scores(&self) -> PathBuf {
        self.dir.join(SCORES_FILE)
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join(REPORT_FILE)
    }
    pub fn bins(&self) -> PathBuf {
        self.dir.join(BINS_FILE)
    }
    pub fn lock(&self) -> PathBuf {
        self.dir.join(LOCK_FILE)
    }
}

/// Advisory lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    _file: File,
}

impl RunLock {
    pub fn acquire(paths: &RunPaths) -> Result<Self, CacheError> {
        fs::create_dir_all(&paths.dir).map_err(io_err(&paths.dir))?;
        let path = paths.lock();
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(CacheError::Locked(paths.dir.clone())),
            Err(fs::TryLockError::Error(e)) => Err(CacheError::Io { path, source: e }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model_id: String,
    pub dataset: Dataset,
    pub method: Method,
    pub decode: DecodeConfig,
    pub prompt_template: String,
    pub n_requested: usize,
    pub n_effective: usize,
    /// Queries dropped before scoring, by reason.
    pub filter_counts: BTreeMap<String, usize>,
    /// Filtered sample records, by reason.
    pub sample_filter_counts: BTreeMap<String, usize>,
    pub normalizer: Option<NormalizationStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<SubsampleInfo>,
    pub started: String,
    pub finished: Option<String>,
    pub config_hash: String,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CacheError> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                CacheError::MissingManifest(path.parent().unwrap_or(path).to_path_buf())
            } else {
                CacheError::Io { path: path.to_path_buf(), source: e }
            }
        })?;
        serde_json::from_str(&text).map_err(|e| CacheError::Corrupt {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CacheError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    /// Whether `n_effective = n_requested - sum(filter_counts)` holds.
    pub fn reconciles(&self) -> bool {
        let dropped: usize = self.filter_counts.values().sum();
        self.n_requested.checked_sub(dropped) == Some(self.n_effective)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CacheError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Hash of everything that determines the decoded samples.
pub fn config_hash(model_id: &str, queries: &[QueryRecord], cfg: &DecodeConfig, template: &PromptTemplate) -> String {
    let mut query_digest = Sha256::new();
    for q in queries {
        query_digest.update(serde_json::to_vec(q).expect("query serializes"));
        query_digest.update(b"\n");
    }
    let canonical = serde_json::json!({
        "model_id": model_id,
        "decode": cfg,
        "template": { "name": template.name, "text": template.text },
        "queries": hex(&query_digest.finalize()),
    });
    hex(&Sha256::digest(canonical.to_string().as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CacheError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Parse a JSONL file of one record type; every line must parse.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CacheError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CacheError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Contents of a sample cache file.
#[derive(Debug)]
pub struct SampleScan {
    pub records: Vec<SampleRecord>,
    /// Byte length of the complete-line prefix.
    pub valid_len: u64,
    /// A trailing partial line was present.
    pub torn: bool,
}

pub fn scan_samples(path: &Path) -> Result<SampleScan, CacheError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Ok(SampleScan { records: vec![], valid_len: 0, torn: false })
        }
        Err(e) => return Err(CacheError::Io { path: path.to_path_buf(), source: e }),
    };
    let valid_len = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
    let torn = valid_len < bytes.len();
    let mut records = Vec::new();
    for (i, line) in bytes[..valid_len].split(|b| *b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let corrupt = |message: String| CacheError::Corrupt { path: path.to_path_buf(), line: i + 1, message };
        let record: SampleRecord = serde_json::from_slice(line).map_err(|e| corrupt(e.to_string()))?;
        record.validate().map_err(|e| corrupt(e.to_string()))?;
        records.push(record);
    }
    Ok(SampleScan { records, valid_len: valid_len as u64, torn })
}

/// Check grouping against the query order. Returns the number of leading
/// queries whose sample sets are complete and how many records they cover.
fn complete_prefix(
    path: &Path,
    records: &[SampleRecord],
    queries: &[QueryRecord],
    per_query: usize,
) -> Result<(usize, usize), CacheError> {
    let mut q = 0usize;
    let mut i = 0usize;
    while i < records.len() {
        let corrupt = |message: String| CacheError::Corrupt { path: path.to_path_buf(), line: i + 1, message };
        let Some(query) = queries.get(q) else {
            return Err(corrupt(format!("record for {} beyond the query list", records[i].query_id)));
        };
        let group_len = records[i..].iter().take_while(|r| r.query_id == query.id).count();
        if group_len == 0 {
            return Err(corrupt(format!("expected samples of {}, found {}", query.id, records[i].query_id)));
        }
        for (k, r) in records[i..i + group_len].iter().enumerate() {
            if r.sample_index != k {
                return Err(corrupt(format!("{}: sample_index {} out of order", r.query_id, r.sample_index)));
            }
        }
        if group_len > per_query {
            return Err(corrupt(format!("{} has {} samples, expected {}", query.id, group_len, per_query)));
        }
        if group_len < per_query {
            if i + group_len != records.len() {
                return Err(corrupt(format!("incomplete sample set for {} followed by more records", query.id)));
            }
            break;
        }
        i += group_len;
        q += 1;
    }
    Ok((q, i))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Discard an unusable cache instead of failing.
    pub rebuild: bool,
    pub subsample: Option<SubsampleInfo>,
}

fn dataset_of(queries: &[QueryRecord]) -> Result<Dataset, RunError> {
    let first = queries.first().ok_or_else(|| RunError::Config("no queries".into()))?;
    if let Some(other) = queries.iter().find(|q| q.dataset != first.dataset) {
        return Err(RunError::Config(format!(
            "mixed datasets in one run ({} and {})",
            first.dataset, other.dataset
        )));
    }
    Ok(first.dataset)
}

fn wipe(paths: &RunPaths) -> Result<(), CacheError> {
    for p in [paths.samples(), paths.manifest(), paths.queries(), paths.scores(), paths.report(), paths.bins()] {
        match fs::remove_file(&p) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(CacheError::Io { path: p, source: e }),
        }
    }
    Ok(())
}

/// Decode every query into the run directory, resuming from any complete
/// prefix already cached there. Samples are appended in query order one
/// chunk of `max_in_flight` queries at a time.
pub fn run_dataset(
    queries: &[QueryRecord],
    cfg: &DecodeConfig,
    client: &dyn LlmClient,
    paths: &RunPaths,
    opts: &RunOptions,
) -> Result<(Vec<SampleRecord>, RunManifest), RunError> {
    cfg.validate()?;
    let dataset = dataset_of(queries)?;
    let template = PromptTemplate::for_query(dataset, cfg.method);
    let hash = config_hash(client.model_id(), queries, cfg, &template);
    fs::create_dir_all(&paths.dir).map_err(io_err(&paths.dir))?;

    let samples_path = paths.samples();
    let has_samples = fs::metadata(&samples_path).map(|m| m.len() > 0).unwrap_or(false);
    let mut previous: Option<RunManifest> = None;
    if has_samples && !opts.resume && !opts.rebuild {
        return Err(CacheError::Exists(paths.dir.clone()).into());
    }
    if has_samples && opts.resume {
        match RunManifest::read(&paths.manifest()) {
            Ok(m) if m.config_hash == hash => previous = Some(m),
            Ok(m) if !opts.rebuild => {
                return Err(CacheError::ConfigMismatch {
                    path: paths.dir.clone(),
                    expected: hash,
                    found: m.config_hash,
                }
                .into())
            }
            Err(e) if !opts.rebuild => return Err(e.into()),
            _ => {}
        }
    }

    let per_query = cfg.samples_per_query();
    let mut resumed = None;
    if previous.is_some() {
        let scanned = scan_samples(&samples_path).and_then(|scan| {
            let (done_q, done_r) = complete_prefix(&samples_path, &scan.records, queries, per_query)?;
            Ok((scan, done_q, done_r))
        });
        match scanned {
            Ok((scan, done_q, done_r)) => {
                let mut records = scan.records;
                if scan.torn || done_r < records.len() {
                    log::warn!(
                        "dropping {} partial record(s){} from {}",
                        records.len() - done_r,
                        if scan.torn { " and a torn line" } else { "" },
                        samples_path.display()
                    );
                    records.truncate(done_r);
                    write_jsonl(&samples_path, &records)?;
                }
                log::info!("resuming after {done_q} complete queries");
                resumed = Some((records, done_q));
            }
            Err(e) if !opts.rebuild => return Err(e.into()),
            Err(e) => {
                log::warn!("rebuilding cache: {e}");
                previous = None;
            }
        }
    }
    let (records, done) = match resumed {
        Some(r) => r,
        None => {
            if has_samples {
                wipe(paths)?;
            }
            (Vec::new(), 0)
        }
    };
    finish_run(queries, cfg, client, paths, opts, records, done, previous, hash, dataset, &template)
}

#[allow(clippy::too_many_arguments)]
fn finish_run(
    queries: &[QueryRecord],
    cfg: &DecodeConfig,
    client: &dyn LlmClient,
    paths: &RunPaths,
    opts: &RunOptions,
    mut records: Vec<SampleRecord>,
    done: usize,
    previous: Option<RunManifest>,
    hash: String,
    dataset: Dataset,
    template: &PromptTemplate,
) -> Result<(Vec<SampleRecord>, RunManifest), RunError> {
    let mut manifest = RunManifest {
        run_id: format!("{}-{}-T{}-{}", dataset, cfg.method, cfg.temperature, &hash[..12]),
        model_id: client.model_id().to_string(),
        dataset,
        method: cfg.method,
        decode: cfg.clone(),
        prompt_template: template.name.clone(),
        n_requested: queries.len(),
        n_effective: queries.len(),
        filter_counts: BTreeMap::new(),
        sample_filter_counts: BTreeMap::new(),
        normalizer: None,
        similarity_backend: None,
        subsample: opts.subsample.clone().or_else(|| previous.as_ref().and_then(|m| m.subsample.clone())),
        started: previous.as_ref().map_or_else(now_rfc3339, |m| m.started.clone()),
        finished: None,
        config_hash: hash,
    };
    manifest.write(&paths.manifest())?;
    write_jsonl(&paths.queries(), queries)?;

    let samples_path = paths.samples();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&samples_path)
        .map_err(io_err(&samples_path))?;
    let pending = &queries[done..];
    let chunk_size = cfg.max_in_flight.max(1);
    let pool = Execution::Bounded(chunk_size);
    for (c, chunk) in pending.chunks(chunk_size).enumerate() {
        let results = pool.map(chunk, |q| decode_query(q, cfg, client));
        let mut buf = String::new();
        let mut failure = None;
        let mut batch = Vec::new();
        for result in results {
            match result {
                Ok(recs) => {
                    for r in &recs {
                        buf.push_str(&serde_json::to_string(r).expect("record serializes"));
                        buf.push('\n');
                    }
                    batch.extend(recs);
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        file.write_all(buf.as_bytes()).map_err(io_err(&samples_path))?;
        file.sync_data().map_err(io_err(&samples_path))?;
        records.extend(batch);
        if let Some(e) = failure {
            return Err(e.into());
        }
        log::info!("decoded {}/{} queries", done + (c * chunk_size + chunk.len()), queries.len());
    }

    manifest.sample_filter_counts = sample_filter_counts(&records);
    manifest.finished = Some(now_rfc3339());
    manifest.write(&paths.manifest())?;
    Ok((records, manifest))
}

pub fn sample_filter_counts(records: &[SampleRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        if let Some(reason) = r.filter_reason {
            *counts.entry(reason.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

/// A finished run loaded for rescoring: manifest, queries and samples.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub queries: Vec<QueryRecord>,
    pub samples: Vec<SampleRecord>,
}

impl LoadedRun {
    /// Samples grouped by query, in query order.
    pub fn grouped(&self) -> Vec<(&QueryRecord, Vec<&SampleRecord>)> {
        group_samples(&self.queries, &self.samples)
    }
}

pub fn group_samples<'a>(
    queries: &'a [QueryRecord],
    samples: &'a [SampleRecord],
) -> Vec<(&'a QueryRecord, Vec<&'a SampleRecord>)> {
    let mut by_id: HashMap<&str, Vec<&SampleRecord>> = HashMap::new();
    for s in samples {
        by_id.entry(s.query_id.as_str()).or_default().push(s);
    }
    queries
        .iter()
        .map(|q| {
            let mut group = by_id.remove(q.id.as_str()).unwrap_or_default();
            group.sort_by_key(|s| s.sample_index);
            (q, group)
        })
        .collect()
}

/// Load a completed run directory without touching it.
pub fn load_run(paths: &RunPaths) -> Result<LoadedRun, CacheError> {
    let manifest = RunManifest::read(&paths.manifest())?;
    let queries: Vec<QueryRecord> = read_jsonl(&paths.queries())?;
    let samples_path = paths.samples();
    if !samples_path.exists() {
        return Err(CacheError::Io {
            path: samples_path,
            source: io::Error::new(io::ErrorKind::NotFound, "no samples.jsonl"),
        });
    }
    let scan = scan_samples(&samples_path)?;
    let per_query = manifest.decode.samples_per_query();
    let (done, covered) = complete_prefix(&samples_path, &scan.records, &queries, per_query)?;
    if scan.torn || done != queries.len() || covered != scan.records.len() {
        return Err(CacheError::Incomplete(paths.dir.clone()));
    }
    Ok(LoadedRun { manifest, queries, samples: scan.records })
}
