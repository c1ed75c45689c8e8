//! Sample consistency: mean pairwise semantic similarity of k answers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simclient::{jaccard, SimBackend, SimError, SimilarityClient, SimilarityRequest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsistencyError {
    #[error("need at least 2 answers, got {0}")]
    TooFewAnswers(usize),
    #[error(transparent)]
    Backend(#[from] SimError),
    #[error("invalid similarity matrix: {0}")]
    InvalidMatrix(String),
}

/// How pairwise similarity is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityBackend {
    EmbeddingCosine,
    NliEntailment,
    LexicalFallback,
}

impl std::str::FromStr for SimilarityBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "embedding" | "embedding_cosine" => Ok(Self::EmbeddingCosine),
            "nli" | "nli_entailment" => Ok(Self::NliEntailment),
            "lexical" | "lexical_fallback" => Ok(Self::LexicalFallback),
            other => Err(format!("unknown similarity backend `{other}`")),
        }
    }
}

impl std::fmt::Display for SimilarityBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EmbeddingCosine => "embedding_cosine",
            Self::NliEntailment => "nli_entailment",
            Self::LexicalFallback => "lexical_fallback",
        })
    }
}

/// Collapses the two NLI directions into one symmetric similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliSymmetrization {
    #[default]
    Mean,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityOptions {
    pub backend: SimilarityBackend,
    pub symmetrization: NliSymmetrization,
}

impl SimilarityOptions {
    pub fn new(backend: SimilarityBackend) -> Self {
        Self {
            backend,
            symmetrization: NliSymmetrization::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub k: usize,
    pub backend: SimilarityBackend,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn new(backend: SimilarityBackend, values: Vec<Vec<f64>>) -> Result<Self, ConsistencyError> {
        let k = values.len();
        if k < 2 {
            return Err(ConsistencyError::TooFewAnswers(k));
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != k {
                return Err(ConsistencyError::InvalidMatrix(format!("row {i} has {} entries", row.len())));
            }
            if row[i] != 1.0 {
                return Err(ConsistencyError::InvalidMatrix(format!("diagonal entry {i} is {}", row[i])));
            }
            for (j, v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(v) {
                    return Err(ConsistencyError::InvalidMatrix(format!("entry ({i},{j}) = {v}")));
                }
                if *v != values[j][i] {
                    return Err(ConsistencyError::InvalidMatrix(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { k, backend, values })
    }

    pub fn upper_triangle(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.k).flat_map(move |i| ((i + 1)..self.k).map(move |j| self.values[i][j]))
    }
}

/// Symmetric similarities for the requested index pairs. Exactly equal
/// (trimmed) texts score 1 without consulting the backend.
pub(crate) fn symmetric_similarities(
    texts: &[&str],
    index_pairs: &[(usize, usize)],
    opts: &SimilarityOptions,
    client: &dyn SimilarityClient,
) -> Result<Vec<f64>, ConsistencyError> {
    let mut out = vec![1.0; index_pairs.len()];
    let pending: Vec<usize> = index_pairs
        .iter()
        .enumerate()
        .filter(|(_, (i, j))| texts[*i].trim() != texts[*j].trim())
        .map(|(n, _)| n)
        .collect();
    if pending.is_empty() {
        return Ok(out);
    }
    let pair_text = |n: usize, flip: bool| {
        let (i, j) = index_pairs[n];
        let (a, b) = if flip { (j, i) } else { (i, j) };
        (texts[a].to_string(), texts[b].to_string())
    };
    match opts.backend {
        SimilarityBackend::LexicalFallback => {
            for n in pending {
                let (i, j) = index_pairs[n];
                out[n] = jaccard(texts[i], texts[j]);
            }
        }
        SimilarityBackend::EmbeddingCosine => {
            let pairs = pending.iter().map(|&n| pair_text(n, false)).collect();
            let scores = client.score_pairs(&SimilarityRequest::new(SimBackend::Embedding, pairs))?;
            check_len(pending.len(), scores.len())?;
            for (&n, s) in pending.iter().zip(scores) {
                out[n] = s;
            }
        }
        SimilarityBackend::NliEntailment => {
            let mut pairs: Vec<(String, String)> = Vec::with_capacity(pending.len() * 2);
            for &n in &pending {
                pairs.push(pair_text(n, false));
                pairs.push(pair_text(n, true));
            }
            let scores = client.score_pairs(&SimilarityRequest::new(SimBackend::Nli, pairs))?;
            check_len(pending.len() * 2, scores.len())?;
            for (slot, &n) in pending.iter().enumerate() {
                let (fwd, back) = (scores[2 * slot], scores[2 * slot + 1]);
                out[n] = match opts.symmetrization {
                    NliSymmetrization::Mean => (fwd + back) / 2.0,
                    NliSymmetrization::Min => fwd.min(back),
                };
            }
        }
    }
    Ok(out)
}

fn check_len(expected: usize, got: usize) -> Result<(), ConsistencyError> {
    if expected != got {
        return Err(SimError::BatchShapeMismatch { expected, got }.into());
    }
    Ok(())
}

pub fn pairwise_similarities(
    answers: &[&str],
    opts: &SimilarityOptions,
    client: &dyn SimilarityClient,
) -> Result<SimilarityMatrix, ConsistencyError> {
    let k = answers.len();
    if k < 2 {
        return Err(ConsistencyError::TooFewAnswers(k));
    }
    let index_pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
        .collect();
    let sims = symmetric_similarities(answers, &index_pairs, opts, client)?;
    let mut values = vec![vec![1.0; k]; k];
    for ((i, j), s) in index_pairs.into_iter().zip(sims) {
        values[i][j] = s;
        values[j][i] = s;
    }
    SimilarityMatrix::new(opts.backend, values)
}

/// Mean of the k(k-1)/2 upper-triangle similarities. Higher means more
/// consistent; this mean is the confidence.
pub fn consistency_score(matrix: &SimilarityMatrix) -> f64 {
    let (sum, count) = matrix
        .upper_triangle()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (sum / count as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyStats {
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
}

/// Mean, population variance and minimum of the upper-triangle entries.
pub fn consistency_uncertainty_stats(matrix: &SimilarityMatrix) -> ConsistencyStats {
    let values: Vec<f64> = matrix.upper_triangle().collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    ConsistencyStats { mean, variance, min }
}
