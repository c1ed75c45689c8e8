//! Benchmark adapters producing [`QueryRecord`]s.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::types::{Dataset, QueryRecord, RecordError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("schema mismatch at line {line}: {message}")]
    SchemaMismatch { line: usize, message: String },
    #[error(transparent)]
    Record(#[from] RecordError),
}

fn schema(line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::SchemaMismatch { line, message: message.into() }
}

/// Seed and sizes of a shuffled prefix subsample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleInfo {
    pub seed: u64,
    pub source_n: usize,
    pub target_n: usize,
}

/// Parse a raw benchmark file. Records come out in file order.
pub fn ingest(path: &Path, kind: Dataset) -> Result<Vec<QueryRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    ingest_str(&text, kind)
}

pub fn ingest_str(text: &str, kind: Dataset) -> Result<Vec<QueryRecord>, DatasetError> {
    let records = match kind {
        Dataset::Boolq => jsonl(text, boolq_line)?,
        Dataset::Gsm8k => jsonl(text, gsm8k_line)?,
        Dataset::Custom => jsonl(text, custom_line)?,
        Dataset::Squad2 => squad2(text)?,
        Dataset::Triviaqa => {
            if text.trim_start().starts_with('{') && parse_whole(text).is_ok_and(|v| v.get("Data").is_some()) {
                triviaqa_published(text)?
            } else {
                jsonl(text, triviaqa_line)?
            }
        }
    };
    let mut seen = HashSet::new();
    for r in &records {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return Err(RecordError::Invalid { id: r.id.clone(), reason: "duplicate id".into() }.into());
        }
    }
    Ok(records)
}

fn parse_whole(text: &str) -> Result<Value, DatasetError> {
    serde_json::from_str(text).map_err(|e| schema(e.line(), e.to_string()))
}

fn jsonl(text: &str, f: impl Fn(usize, usize, Value) -> Result<QueryRecord, DatasetError>) -> Result<Vec<QueryRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| schema(i + 1, e.to_string()))?;
        out.push(f(i + 1, out.len(), value)?);
    }
    Ok(out)
}

fn str_field<'a>(v: &'a Value, keys: &[&str], line: usize) -> Result<&'a str, DatasetError> {
    keys.iter()
        .find_map(|k| v.get(*k).and_then(Value::as_str))
        .ok_or_else(|| schema(line, format!("missing string field `{}`", keys[0])))
}

fn record(id: String, dataset: Dataset, question: &str, context: Option<String>, gold: Vec<String>) -> QueryRecord {
    QueryRecord {
        id,
        dataset,
        question: question.trim().to_string(),
        context,
        gold_answers: gold,
        answerable: true,
        meta: Default::default(),
    }
}

fn boolq_line(line: usize, n: usize, v: Value) -> Result<QueryRecord, DatasetError> {
    let question = str_field(&v, &["question"], line)?;
    let passage = v.get("passage").and_then(Value::as_str).map(str::to_string);
    let answer = ["answer", "label"]
        .iter()
        .find_map(|k| v.get(*k))
        .and_then(|a| a.as_bool().or_else(|| a.as_u64().map(|x| x == 1)))
        .ok_or_else(|| schema(line, "missing boolean `answer`"))?;
    let gold = if answer { "yes" } else { "no" };
    Ok(record(format!("boolq-{n}"), Dataset::Boolq, question, passage, vec![gold.into()]))
}

/// Final numeric answer after the `####` delimiter, commas removed.
pub fn gsm8k_final_answer(solution: &str) -> Option<String> {
    let (_, tail) = solution.rsplit_once("####")?;
    let answer = tail.trim().replace(',', "");
    (!answer.is_empty()).then_some(answer)
}

fn gsm8k_line(line: usize, n: usize, v: Value) -> Result<QueryRecord, DatasetError> {
    let question = str_field(&v, &["question"], line)?;
    let solution = str_field(&v, &["answer"], line)?;
    let gold = gsm8k_final_answer(solution).ok_or_else(|| schema(line, "answer has no `####` final answer"))?;
    Ok(record(format!("gsm8k-{n}"), Dataset::Gsm8k, question, None, vec![gold]))
}

fn custom_line(line: usize, _n: usize, v: Value) -> Result<QueryRecord, DatasetError> {
    serde_json::from_value(v).map_err(|e| schema(line, e.to_string()))
}

fn push_unique(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() && !out.iter().any(|x| x == s) {
        out.push(s.to_string());
    }
}

fn trivia_gold(answer: &Value) -> Vec<String> {
    let mut gold = Vec::new();
    if let Some(v) = answer.get("Value").or_else(|| answer.get("value")).and_then(Value::as_str) {
        push_unique(&mut gold, v);
    }
    for key in ["Aliases", "aliases"] {
        if let Some(list) = answer.get(key).and_then(Value::as_array) {
            for a in list.iter().filter_map(Value::as_str) {
                push_unique(&mut gold, a);
            }
        }
    }
    gold
}

fn triviaqa_published(text: &str) -> Result<Vec<QueryRecord>, DatasetError> {
    let root = parse_whole(text)?;
    let data = root
        .get("Data")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(1, "missing `Data` array"))?;
    data.iter()
        .enumerate()
        .map(|(i, item)| {
            let question = str_field(item, &["Question"], i + 1)?;
            let id = str_field(item, &["QuestionId"], i + 1)?.to_string();
            let answer = item.get("Answer").ok_or_else(|| schema(i + 1, format!("{id}: missing `Answer`")))?;
            Ok(record(id, Dataset::Triviaqa, question, None, trivia_gold(answer)))
        })
        .collect()
}

fn triviaqa_line(line: usize, n: usize, v: Value) -> Result<QueryRecord, DatasetError> {
    let question = str_field(&v, &["question", "Question"], line)?;
    let id = v
        .get("question_id")
        .or_else(|| v.get("QuestionId"))
        .and_then(Value::as_str)
        .map_or_else(|| format!("triviaqa-{n}"), str::to_string);
    let answer = v
        .get("answer")
        .or_else(|| v.get("Answer"))
        .ok_or_else(|| schema(line, "missing `answer`"))?;
    Ok(record(id, Dataset::Triviaqa, question, None, trivia_gold(answer)))
}

fn squad2(text: &str) -> Result<Vec<QueryRecord>, DatasetError> {
    let root = parse_whole(text)?;
    let articles = root
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(1, "missing `data` array"))?;
    let mut out = Vec::new();
    let mut dropped = 0usize;
    let mut ordinal = 0usize;
    for article in articles {
        let paragraphs = article.get("paragraphs").and_then(Value::as_array).map_or(&[][..], Vec::as_slice);
        for para in paragraphs {
            let context = para.get("context").and_then(Value::as_str).unwrap_or("").to_string();
            let qas = para.get("qas").and_then(Value::as_array).map_or(&[][..], Vec::as_slice);
            for qa in qas {
                ordinal += 1;
                let question = str_field(qa, &["question"], ordinal)?;
                let id = str_field(qa, &["id"], ordinal)?.to_string();
                let impossible = qa.get("is_impossible").and_then(Value::as_bool).unwrap_or(false);
                let mut gold = Vec::new();
                for a in qa.get("answers").and_then(Value::as_array).map_or(&[][..], Vec::as_slice) {
                    if let Some(t) = a.get("text").and_then(Value::as_str) {
                        push_unique(&mut gold, t);
                    }
                }
                if impossible || gold.is_empty() {
                    dropped += 1;
                    continue;
                }
                out.push(record(id, Dataset::Squad2, question, Some(context.clone()), gold));
            }
        }
    }
    log::info!("squad2: dropped {dropped} unanswerable questions");
    Ok(out)
}

/// Seeded shuffle then prefix-take. `n >= len` keeps every record.
pub fn subsample(records: Vec<QueryRecord>, n: usize, seed: u64) -> (Vec<QueryRecord>, SubsampleInfo) {
    let source_n = records.len();
    let mut records = records;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    records.truncate(n);
    let info = SubsampleInfo { seed, source_n, target_n: records.len() };
    (records, info)
}

/// Validate and write records as JSONL.
pub fn write_queries<W: Write>(records: &[QueryRecord], mut out: W) -> Result<(), DatasetError> {
    for r in records {
        r.validate()?;
        let line = serde_json::to_string(r).expect("query serializes");
        writeln!(out, "{line}").map_err(|source| DatasetError::Io { path: "<output>".into(), source })?;
    }
    Ok(())
}

/// Read canonical QueryRecord JSONL (the output of [`write_queries`]).
pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let r: QueryRecord = serde_json::from_str(&line).map_err(|e| schema(i + 1, e.to_string()))?;
        r.validate()?;
        if !seen.insert(r.id.clone()) {
            return Err(schema(i + 1, format!("duplicate id {}", r.id)));
        }
        out.push(r);
    }
    Ok(out)
}
