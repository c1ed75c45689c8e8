//! Client side of the similarity sidecar protocol.
//!
//! Wire format:
//!
//! ```text
//! POST /similarity {"backend":"embedding"|"nli","pairs":[["a","b"],...]}
//!   -> {"scores":[0.93,...]}
//! GET  /health -> {"status":"ok","models":{"embedding":"<id>","nli":"<id>"}}
//! ```
//!
//! Embedding scores arrive as cosines already rescaled to [0, 1]; NLI scores
//! are directional entailment probabilities for `a => b`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_PAIRS_PER_BATCH: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("similarity request has no pairs")]
    EmptyRequest,
    #[error("pair {0} contains an empty text")]
    EmptyText(usize),
    #[error("similarity sidecar unavailable after {attempts} attempts: {last}")]
    SidecarDown { attempts: usize, last: String },
    #[error("sidecar returned {got} scores for {expected} pairs")]
    BatchShapeMismatch { expected: usize, got: usize },
    #[error("sidecar score {score} at position {index} outside [0, 1]")]
    ScoreOutOfRange { index: usize, score: f64 },
    #[error("backend {0:?} is not served by this client")]
    Unsupported(SimBackend),
}

/// Model family the sidecar should score with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimBackend {
    Embedding,
    Nli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRequest {
    pub backend: SimBackend,
    pub pairs: Vec<(String, String)>,
    /// Sent as the `X-Batch-Id` header, not in the body.
    #[serde(skip)]
    pub batch_id: String,
}

impl SimilarityRequest {
    pub fn new(backend: SimBackend, pairs: Vec<(String, String)>) -> Self {
        Self {
            backend,
            pairs,
            batch_id: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.pairs.is_empty() {
            return Err(SimError::EmptyRequest);
        }
        if let Some(i) = self
            .pairs
            .iter()
            .position(|(a, b)| a.trim().is_empty() || b.trim().is_empty())
        {
            return Err(SimError::EmptyText(i));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    #[serde(default)]
    pub models: BTreeMap<String, String>,
}

/// Scores text pairs. Implementations must return one score per pair, in
/// request order, each in [0, 1].
pub trait SimilarityClient: Send + Sync {
    fn score_pairs(&self, req: &SimilarityRequest) -> Result<Vec<f64>, SimError>;
}

/// Lowercased alphanumeric tokens.
pub fn lexical_tokens(text: &str) -> std::collections::BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token-set Jaccard similarity. Two texts without tokens are identical.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let ta = lexical_tokens(a);
    let tb = lexical_tokens(b);
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let inter = ta.intersection(&tb).count();
    let union = ta.union(&tb).count();
    inter as f64 / union as f64
}

/// Offline scorer: Jaccard for every backend. Never touches the network.
#[derive(Debug, Default, Clone, Copy)]
pub struct LexicalSimilarity;

impl SimilarityClient for LexicalSimilarity {
    fn score_pairs(&self, req: &SimilarityRequest) -> Result<Vec<f64>, SimError> {
        req.validate()?;
        Ok(req.pairs.iter().map(|(a, b)| jaccard(a, b)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct HttpSimilarityConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: usize,
    pub backoff: Duration,
    pub batch_size: usize,
}

impl HttpSimilarityConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(250),
            batch_size: MAX_PAIRS_PER_BATCH,
        }
    }
}

type MemoKey = (SimBackend, String, String);

/// Sidecar client with batching, jittered retries and per-run memoization.
pub struct HttpSimilarityClient {
    cfg: HttpSimilarityConfig,
    agent: ureq::Agent,
    memo: Mutex<HashMap<MemoKey, f64>>,
    batches: std::sync::atomic::AtomicU64,
}

impl HttpSimilarityClient {
    pub fn new(cfg: HttpSimilarityConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
        Self {
            cfg,
            agent,
            memo: Mutex::new(HashMap::new()),
            batches: std::sync::atomic::AtomicU64::new(0),
        }
    }

    pub fn health(&self) -> Result<HealthStatus, SimError> {
        let url = format!("{}/health", self.cfg.base_url);
        let resp = self.agent.get(&url).call().map_err(|e| SimError::SidecarDown {
            attempts: 1,
            last: e.to_string(),
        })?;
        resp.into_json::<HealthStatus>().map_err(|e| SimError::SidecarDown {
            attempts: 1,
            last: e.to_string(),
        })
    }

    /// Poll `/health` until it reports ok or `attempts` run out.
    pub fn wait_healthy(&self, attempts: usize, interval: Duration) -> Result<HealthStatus, SimError> {
        let mut last = String::from("never probed");
        for _ in 0..attempts.max(1) {
            match self.health() {
                Ok(h) if h.status == "ok" => return Ok(h),
                Ok(h) => last = format!("status {}", h.status),
                Err(e) => last = e.to_string(),
            }
            thread::sleep(interval);
        }
        Err(SimError::SidecarDown {
            attempts: attempts.max(1),
            last,
        })
    }

    fn post_batch(&self, backend: SimBackend, pairs: &[(String, String)]) -> Result<Vec<f64>, SimError> {
        let url = format!("{}/similarity", self.cfg.base_url);
        let body = serde_json::json!({ "backend": backend, "pairs": pairs });
        let batch_no = self.batches.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let attempts = self.cfg.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let base = self.cfg.backoff.as_millis() as u64 * (1u64 << (attempt - 1).min(6));
                let jitter = rand::thread_rng().gen_range(0..=base / 2 + 1);
                thread::sleep(Duration::from_millis(base + jitter));
            }
            let result = self
                .agent
                .post(&url)
                .set("X-Batch-Id", &format!("batch-{batch_no}"))
                .send_json(body.clone());
            match result {
                Ok(resp) => {
                    let parsed: SimilarityResponse = match resp.into_json() {
                        Ok(p) => p,
                        Err(e) => {
                            last = format!("bad response body: {e}");
                            continue;
                        }
                    };
                    if parsed.scores.len() != pairs.len() {
                        return Err(SimError::BatchShapeMismatch {
                            expected: pairs.len(),
                            got: parsed.scores.len(),
                        });
                    }
                    if let Some((index, score)) = parsed
                        .scores
                        .iter()
                        .enumerate()
                        .find(|(_, s)| !(0.0..=1.0).contains(*s))
                    {
                        return Err(SimError::ScoreOutOfRange { index, score: *score });
                    }
                    return Ok(parsed.scores);
                }
                Err(ureq::Error::Status(code, resp)) => {
                    last = format!("HTTP {code}: {}", resp.into_string().unwrap_or_default());
                    if (400..500).contains(&code) && code != 429 {
                        break;
                    }
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(SimError::SidecarDown { attempts, last })
    }
}

impl SimilarityClient for HttpSimilarityClient {
    fn score_pairs(&self, req: &SimilarityRequest) -> Result<Vec<f64>, SimError> {
        req.validate()?;
        let mut out = vec![f64::NAN; req.pairs.len()];
        let mut missing: Vec<usize> = Vec::new();
        {
            let memo = self.memo.lock().expect("memo lock");
            for (i, (a, b)) in req.pairs.iter().enumerate() {
                match memo.get(&(req.backend, a.clone(), b.clone())) {
                    Some(s) => out[i] = *s,
                    None => missing.push(i),
                }
            }
        }
        for chunk in missing.chunks(self.cfg.batch_size.max(1)) {
            let pairs: Vec<(String, String)> = chunk.iter().map(|&i| req.pairs[i].clone()).collect();
            let scores = self.post_batch(req.backend, &pairs)?;
            let mut memo = self.memo.lock().expect("memo lock");
            for (&i, s) in chunk.iter().zip(scores) {
                out[i] = s;
                memo.insert((req.backend, req.pairs[i].0.clone(), req.pairs[i].1.clone()), s);
            }
        }
        Ok(out)
    }
}
