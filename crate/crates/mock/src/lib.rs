//! Deterministic stand-ins for a chat-completions endpoint and the
//! similarity sidecar, served over loopback HTTP for tests.

use std::collections::BTreeSet;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tiny_http::{Header, Method, Request, Response, Server};

const WORKERS: usize = 4;
const VCE_MARKER: &str = "provide your confidence";

#[derive(Debug, Error)]
pub enum MockError {
    #[error("cannot bind mock server: {0}")]
    Bind(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad script: {0}")]
    Script(#[from] serde_json::Error),
}

/// One scripted completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    /// Per-token log-probabilities; synthesized from the text when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

impl Completion {
    pub fn new(content: impl Into<String>, logprobs: Option<Vec<f64>>) -> Self {
        Self { content: content.into(), logprobs }
    }

    fn token_logprobs(&self) -> Vec<f64> {
        self.logprobs
            .clone()
            .unwrap_or_else(|| self.content.split_whitespace().map(|_| -0.05).collect())
    }
}

/// Completions served for prompts containing `matches`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matches: String,
    #[serde(default)]
    pub completions: Vec<Completion>,
    /// Used instead of `completions` for verbalized-confidence prompts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vce_completions: Vec<Completion>,
    /// Used for requests at temperature <= 0.3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low_temperature: Option<Completion>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, MockError> {
        let text = std::fs::read_to_string(path).map_err(|source| MockError::Io { path: path.display().to_string(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    fn find(&self, prompt: &str) -> Option<&ScriptEntry> {
        self.entries.iter().find(|e| prompt.contains(&e.matches))
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockLlmOptions {
    /// Answer 400 to any request with n > 1.
    pub reject_multi: bool,
    /// Answer 500 to the first k requests.
    pub fail_first: usize,
    /// Answer 429 (Retry-After: 0) to the first k requests after the failures.
    pub rate_limit_first: usize,
    /// Sleep before every response.
    pub delay: Duration,
    /// Never include logprobs.
    pub omit_logprobs: bool,
}

/// What the mock saw in one chat request.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub n: usize,
    pub seed: Option<u64>,
    pub logprobs: bool,
    pub max_tokens: Option<u64>,
}

struct Running {
    addr: String,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl Running {
    fn start<F>(handler: F) -> Result<Self, MockError>
    where
        F: Fn(Request) + Send + Sync + 'static,
    {
        let server = Server::http("127.0.0.1:0").map_err(|e| MockError::Bind(e.to_string()))?;
        let addr = format!("http://{}", server.server_addr());
        let server = Arc::new(server);
        let handler = Arc::new(handler);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..WORKERS)
            .map(|_| {
                let (server, handler, stop) = (server.clone(), handler.clone(), stop.clone());
                thread::spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        if let Ok(Some(req)) = server.recv_timeout(Duration::from_millis(50)) {
                            handler(req);
                        }
                    }
                })
            })
            .collect();
        Ok(Self { addr, stop, workers })
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").expect("static header")
}

fn respond_json(req: Request, status: u16, body: &Value) {
    let resp = Response::from_string(body.to_string()).with_status_code(status).with_header(json_header());
    let _ = req.respond(resp);
}

fn read_body(req: &mut Request) -> Result<Value, String> {
    let mut body = String::new();
    req.as_reader().read_to_string(&mut body).map_err(|e| e.to_string())?;
    serde_json::from_str(&body).map_err(|e| e.to_string())
}

/// Scripted OpenAI-compatible `/v1/chat/completions` endpoint.
///
/// Choice selection: with n > 1 the first n completions (cycling); with
/// n = 1 completion `seed % len`. Low-temperature requests use the entry's
/// `low_temperature` completion when present.
pub struct MockLlmServer {
    running: Running,
    log: Arc<Mutex<Vec<RecordedRequest>>>,
}

impl MockLlmServer {
    pub fn start(script: Script, opts: MockLlmOptions) -> Result<Self, MockError> {
        let log = Arc::new(Mutex::new(Vec::new()));
        let counter = Arc::new(AtomicUsize::new(0));
        let state = (Arc::new(script), opts, log.clone(), counter);
        let running = Running::start(move |req| handle_llm(req, &state.0, &state.1, &state.2, &state.3))?;
        Ok(Self { running, log })
    }

    /// Base URL, e.g. `http://127.0.0.1:40123`.
    pub fn url(&self) -> &str {
        &self.running.addr
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().expect("log lock").clone()
    }
}

fn handle_llm(
    mut req: Request,
    script: &Script,
    opts: &MockLlmOptions,
    log: &Mutex<Vec<RecordedRequest>>,
    counter: &AtomicUsize,
) {
    if req.method() != &Method::Post || !req.url().ends_with("/chat/completions") {
        return respond_json(req, 404, &json!({"error": {"message": "not found"}}));
    }
    let body = match read_body(&mut req) {
        Ok(b) => b,
        Err(e) => return respond_json(req, 400, &json!({"error": {"message": e}})),
    };
    let prompt: String = body["messages"]
        .as_array()
        .map(|ms| ms.iter().filter_map(|m| m["content"].as_str()).collect::<Vec<_>>().join("\n"))
        .unwrap_or_default();
    let recorded = RecordedRequest {
        model: body["model"].as_str().unwrap_or("").to_string(),
        prompt: prompt.clone(),
        temperature: body["temperature"].as_f64().unwrap_or(1.0),
        n: body["n"].as_u64().unwrap_or(1) as usize,
        seed: body["seed"].as_u64(),
        logprobs: body["logprobs"].as_bool().unwrap_or(false),
        max_tokens: body["max_tokens"].as_u64(),
    };
    log.lock().expect("log lock").push(recorded.clone());
    let k = counter.fetch_add(1, Ordering::SeqCst);
    if !opts.delay.is_zero() {
        thread::sleep(opts.delay);
    }
    if k < opts.fail_first {
        return respond_json(req, 500, &json!({"error": {"message": "scripted failure"}}));
    }
    if k < opts.fail_first + opts.rate_limit_first {
        let resp = Response::from_string("{\"error\":{\"message\":\"slow down\"}}")
            .with_status_code(429)
            .with_header(json_header())
            .with_header(Header::from_bytes("Retry-After", "0").expect("static header"));
        let _ = req.respond(resp);
        return;
    }
    if opts.reject_multi && recorded.n > 1 {
        return respond_json(req, 400, &json!({"error": {"message": "n > 1 is not supported"}}));
    }
    let Some(entry) = script.find(&prompt) else {
        return respond_json(req, 404, &json!({"error": {"message": "no scripted completion for prompt"}}));
    };
    let pool = if prompt.contains(VCE_MARKER) && !entry.vce_completions.is_empty() {
        &entry.vce_completions
    } else {
        &entry.completions
    };
    let chosen: Vec<Completion> = match (&entry.low_temperature, recorded.temperature <= 0.3) {
        (Some(c), true) => vec![c.clone(); recorded.n],
        _ if pool.is_empty() => {
            return respond_json(req, 500, &json!({"error": {"message": "empty completion list"}}))
        }
        _ if recorded.n > 1 => (0..recorded.n).map(|i| pool[i % pool.len()].clone()).collect(),
        _ => vec![pool[(recorded.seed.unwrap_or(0) as usize) % pool.len()].clone()],
    };
    let choices: Vec<Value> = chosen
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut choice = json!({
                "index": i,
                "message": {"role": "assistant", "content": c.content},
                "finish_reason": "stop",
            });
            if recorded.logprobs && !opts.omit_logprobs {
                let toks: Vec<Value> = c
                    .token_logprobs()
                    .iter()
                    .enumerate()
                    .map(|(t, lp)| json!({"token": format!("t{t}"), "logprob": lp}))
                    .collect();
                choice["logprobs"] = json!({ "content": toks });
            }
            choice
        })
        .collect();
    respond_json(
        req,
        200,
        &json!({"id": format!("mock-{k}"), "object": "chat.completion", "model": recorded.model, "choices": choices}),
    );
}

#[derive(Debug, Clone, Default)]
pub struct MockSidecarOptions {
    /// `/health` answers 503 for this many probes.
    pub unhealthy_probes: usize,
    /// `/similarity` answers 500 for this many calls.
    pub fail_first: usize,
    /// Scores of 1.5 instead of valid values.
    pub bad_scores: bool,
    /// One score fewer than requested.
    pub short_response: bool,
}

/// What the sidecar saw in one `/similarity` call.
#[derive(Debug, Clone, PartialEq)]
pub struct SidecarCall {
    pub backend: String,
    pub pairs: Vec<(String, String)>,
    pub batch_id: Option<String>,
}

/// Similarity sidecar: `embedding` is token Jaccard, `nli` is the share of
/// hypothesis tokens found in the premise. Identical texts score 1.
pub struct MockSidecar {
    running: Running,
    calls: Arc<Mutex<Vec<SidecarCall>>>,
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Score a pair the way the mock sidecar does.
pub fn mock_similarity(backend: &str, a: &str, b: &str) -> f64 {
    if a.trim() == b.trim() {
        return 1.0;
    }
    let (ta, tb) = (tokens(a), tokens(b));
    let inter = ta.intersection(&tb).count() as f64;
    match backend {
        "nli" => {
            if tb.is_empty() {
                1.0
            } else {
                inter / tb.len() as f64
            }
        }
        _ => {
            let union = ta.union(&tb).count() as f64;
            if union == 0.0 {
                1.0
            } else {
                inter / union
            }
        }
    }
}

impl MockSidecar {
    pub fn start(opts: MockSidecarOptions) -> Result<Self, MockError> {
        let calls = Arc::new(Mutex::new(Vec::new()));
        let probes = Arc::new(AtomicUsize::new(0));
        let sims = Arc::new(AtomicUsize::new(0));
        let log = calls.clone();
        let running = Running::start(move |req| handle_sidecar(req, &opts, &log, &probes, &sims))?;
        Ok(Self { running, calls })
    }

    pub fn url(&self) -> &str {
        &self.running.addr
    }

    pub fn calls(&self) -> Vec<SidecarCall> {
        self.calls.lock().expect("calls lock").clone()
    }
}

fn handle_sidecar(
    mut req: Request,
    opts: &MockSidecarOptions,
    log: &Mutex<Vec<SidecarCall>>,
    probes: &AtomicUsize,
    sims: &AtomicUsize,
) {
    match (req.method().clone(), req.url().to_string().as_str()) {
        (Method::Get, "/health") => {
            if probes.fetch_add(1, Ordering::SeqCst) < opts.unhealthy_probes {
                return respond_json(req, 503, &json!({"status": "loading", "models": {}}));
            }
            respond_json(
                req,
                200,
                &json!({"status": "ok", "models": {"embedding": "mock-jaccard", "nli": "mock-overlap"}}),
            )
        }
        (Method::Post, "/similarity") => {
            let batch_id = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("X-Batch-Id"))
                .map(|h| h.value.to_string());
            let body = match read_body(&mut req) {
                Ok(b) => b,
                Err(e) => return respond_json(req, 400, &json!({"error": e})),
            };
            let backend = body["backend"].as_str().unwrap_or("").to_string();
            if backend != "embedding" && backend != "nli" {
                return respond_json(req, 400, &json!({"error": format!("unknown backend {backend}")}));
            }
            let pairs: Vec<(String, String)> = match serde_json::from_value(body["pairs"].clone()) {
                Ok(p) => p,
                Err(e) => return respond_json(req, 400, &json!({"error": e.to_string()})),
            };
            log.lock().expect("calls lock").push(SidecarCall { backend: backend.clone(), pairs: pairs.clone(), batch_id });
            if sims.fetch_add(1, Ordering::SeqCst) < opts.fail_first {
                return respond_json(req, 500, &json!({"error": "scripted failure"}));
            }
            let mut scores: Vec<f64> = if opts.bad_scores {
                vec![1.5; pairs.len()]
            } else {
                pairs.iter().map(|(a, b)| mock_similarity(&backend, a, b)).collect()
            };
            if opts.short_response {
                scores.pop();
            }
            respond_json(req, 200, &json!({ "scores": scores }))
        }
        _ => respond_json(req, 404, &json!({"error": "not found"})),
    }
}
