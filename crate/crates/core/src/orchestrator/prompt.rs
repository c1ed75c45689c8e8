//! Prompt templates, one per (dataset, parser kind). The files live under
//! `templates/` and are compiled in; bump [`TEMPLATE_VERSION`] when editing
//! them so cached runs are not reused across wording changes.

use crate::types::{Dataset, Method, QueryRecord};

pub const TEMPLATE_VERSION: &str = "v1";

/// Instruction every verbalized-confidence template carries.
pub const VCE_INSTRUCTION: &str = "provide your confidence (0–100)";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Verbalized,
    Answer,
}

impl TemplateKind {
    pub fn for_method(method: Method) -> Self {
        if method.is_verbalized() {
            TemplateKind::Verbalized
        } else {
            TemplateKind::Answer
        }
    }

    fn dir(self) -> &'static str {
        match self {
            TemplateKind::Verbalized => "vce",
            TemplateKind::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub kind: TemplateKind,
    pub text: &'static str,
}

fn raw(kind: TemplateKind, dataset: Dataset) -> &'static str {
    use Dataset::*;
    match (kind, dataset) {
        (TemplateKind::Verbalized, Boolq) => include_str!("../../templates/vce/boolq.txt"),
        (TemplateKind::Verbalized, Squad2) => include_str!("../../templates/vce/squad2.txt"),
        (TemplateKind::Verbalized, Triviaqa) => include_str!("../../templates/vce/triviaqa.txt"),
        (TemplateKind::Verbalized, Gsm8k) => include_str!("../../templates/vce/gsm8k.txt"),
        (TemplateKind::Verbalized, Custom) => include_str!("../../templates/vce/custom.txt"),
        (TemplateKind::Answer, Boolq) => include_str!("../../templates/answer/boolq.txt"),
        (TemplateKind::Answer, Squad2) => include_str!("../../templates/answer/squad2.txt"),
        (TemplateKind::Answer, Triviaqa) => include_str!("../../templates/answer/triviaqa.txt"),
        (TemplateKind::Answer, Gsm8k) => include_str!("../../templates/answer/gsm8k.txt"),
        (TemplateKind::Answer, Custom) => include_str!("../../templates/answer/custom.txt"),
    }
}

impl PromptTemplate {
    pub fn for_query(dataset: Dataset, method: Method) -> Self {
        let kind = TemplateKind::for_method(method);
        Self {
            name: format!("{}/{}@{}", kind.dir(), dataset, TEMPLATE_VERSION),
            kind,
            text: raw(kind, dataset),
        }
    }

    pub fn render(&self, query: &QueryRecord) -> String {
        let context_block = match query.context.as_deref().map(str::trim) {
            Some(ctx) if !ctx.is_empty() => format!("Context: {ctx}\n\n"),
            _ => String::new(),
        };
        self.text
            .replace("{context_block}", &context_block)
            .replace("{question}", query.question.trim())
            .trim_end()
            .to_string()
    }
}
