//! Confidence estimation for LLM question answering: verbalized, likelihood,
//! consistency and fused estimators, calibration and discrimination metrics,
//! and a resumable decoding harness for OpenAI-compatible endpoints.

pub mod answer;
pub mod cocoa;
pub mod consistency;
pub mod datasets;
pub mod estimate;
pub mod exec;
pub mod metrics;
pub mod msp;
pub mod orchestrator;
pub mod pipeline;
pub mod scoring;
pub mod simclient;
pub mod types;
pub mod vce;

pub use answer::{judge_correct, normalize_answer, MatchConfig};
pub use estimate::Estimate;
pub use exec::Execution;
pub use metrics::{compute_auroc, compute_ece, evaluate, selective_prediction, EvaluationReport};
pub use types::{Dataset, FilterReason, MatchRule, Method, QueryRecord, Regime, SampleRecord, UncertaintyScore};
