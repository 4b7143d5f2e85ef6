//! Prompt compression.
//!
//! The built-in engine is extractive and deterministic: it only ever deletes
//! whole lines, never reorders or rewrites them. An external summarisation
//! model can be plugged in through [`Compressor::Abstractive`]; its output is
//! accepted only when it is strictly shorter than the input.

use std::collections::HashSet;
use std::sync::Arc;

use once_cell::sync::Lazy;
use regex::{Regex, RegexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::estimate_tokens;
use crate::endpoint::{
    ChatMessage, ChatRequest, EndpointError, Limited, ModelEndpoint, RequestMeta,
};

/// System instruction sent to abstractive backends.
pub const ABSTRACTIVE_INSTRUCTION: &str = "You compress prompts for a downstream model. \
Rewrite the user's text as a shorter text that keeps every instruction, question, \
constraint and fact needed to answer it. Drop greetings, repetition, boilerplate log \
lines and irrelevant detail. Keep placeholders of the form [[SECRET:...]] exactly as \
written. Reply with the compressed text only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionPolicy {
    pub min_tokens_to_compress: u64,
    /// Lines whose trimmed start begins with one of these always survive.
    pub keep_markers: Vec<String>,
    /// Leading non-blank lines kept verbatim.
    pub head_lines: usize,
    /// Trailing non-blank lines kept verbatim.
    pub tail_lines: usize,
    pub max_digest_tokens: u64,
    pub max_concurrent_requests: usize,
}

impl Default for CompressionPolicy {
    fn default() -> Self {
        Self {
            min_tokens_to_compress: 64,
            keep_markers: vec!["TASK:".into(), "QUESTION:".into(), "INSTRUCTION:".into()],
            head_lines: 1,
            tail_lines: 1,
            max_digest_tokens: 200,
            max_concurrent_requests: 2,
        }
    }
}

impl CompressionPolicy {
    fn is_marker(&self, line: &str) -> Option<usize> {
        let t = line.trim_start();
        self.keep_markers
            .iter()
            .find(|m| !m.is_empty() && t.starts_with(m.as_str()))
            .map(|m| line.len() - t.len() + m.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Extractive,
    ExternalSlm,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub output: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub ratio_k: f64,
    pub backend: Backend,
}

impl CompressionResult {
    fn skipped(text: &str) -> Self {
        let t = estimate_tokens(text);
        Self {
            output: text.to_string(),
            input_tokens: t,
            output_tokens: t,
            ratio_k: 1.0,
            backend: Backend::Skipped,
        }
    }

    fn new(input: &str, output: String, backend: Backend) -> Self {
        let input_tokens = estimate_tokens(input);
        let output_tokens = estimate_tokens(&output);
        Self {
            ratio_k: output_tokens as f64 / input_tokens as f64,
            output,
            input_tokens,
            output_tokens,
            backend,
        }
    }

    pub fn reduction(&self) -> f64 {
        1.0 - self.ratio_k
    }
}

#[derive(Debug, Error)]
pub enum CompressError {
    /// The abstractive backend failed; `fallback` holds the extractive result.
    #[error("compression backend failed: {source}")]
    Backend {
        source: EndpointError,
        fallback: CompressionResult,
    },
}

static BOILERPLATE: Lazy<RegexSet> = Lazy::new(|| {
    RegexSet::new([
        // timestamp-only lines
        r"^\s*[\[(]?(?:\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}(?::\d{2}(?:[.,]\d+)?)?(?:Z|[+-]\d{2}:?\d{2})?|[A-Z][a-z]{2} +\d{1,2} \d{2}:\d{2}:\d{2}|\d{2}:\d{2}:\d{2}(?:[.,]\d+)?)[\])]?\s*$",
        // separator runs
        r"^\s*[-=*_#~+.<>|/\\]{3,}\s*$",
        // low-severity log records
        r"^\s*(?:\S+\s+){0,3}[\[(<]?(?:INFO|DEBUG|TRACE|VERBOSE)[\])>]?(?:[\s:|]|$)",
    ])
    .unwrap()
});

pub fn is_boilerplate(line: &str) -> bool {
    BOILERPLATE.is_match(line)
}

/// Deterministic line-level compression.
///
/// Keeps keep-marker lines and the first/last `head_lines`/`tail_lines`
/// non-blank lines unconditionally; drops blank lines, boilerplate lines and
/// exact repeats of an already kept line. Order is preserved.
pub fn compress_extractive(text: &str, policy: &CompressionPolicy) -> CompressionResult {
    let input_tokens = estimate_tokens(text);
    if input_tokens == 0 || input_tokens < policy.min_tokens_to_compress.max(1) {
        return CompressionResult::skipped(text);
    }
    let lines: Vec<&str> = text.split('\n').collect();
    let non_blank: Vec<usize> = (0..lines.len())
        .filter(|&i| !lines[i].trim().is_empty())
        .collect();
    let head = &non_blank[..policy.head_lines.min(non_blank.len())];
    let tail = &non_blank[non_blank.len().saturating_sub(policy.tail_lines)..];

    let mut seen: HashSet<&str> = HashSet::new();
    let mut kept: Vec<&str> = Vec::new();
    for (i, &line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pinned = policy.is_marker(line).is_some() || head.contains(&i) || tail.contains(&i);
        let keep = pinned || (!is_boilerplate(line) && !seen.contains(line));
        if keep {
            seen.insert(line);
            kept.push(line);
        }
    }
    let output = kept.join("\n");
    if estimate_tokens(&output) >= input_tokens {
        return CompressionResult::skipped(text);
    }
    CompressionResult::new(text, output, Backend::Extractive)
}

/// Summarisation through an external model, bounded by `ratio_k < 1`.
pub fn compress_abstractive(
    text: &str,
    endpoint: &dyn ModelEndpoint,
    model: &str,
    policy: &CompressionPolicy,
) -> Result<CompressionResult, CompressError> {
    let input_tokens = estimate_tokens(text);
    if input_tokens == 0 || input_tokens < policy.min_tokens_to_compress.max(1) {
        return Ok(CompressionResult::skipped(text));
    }
    let req = ChatRequest {
        model: model.to_string(),
        messages: vec![
            ChatMessage::system(ABSTRACTIVE_INSTRUCTION),
            ChatMessage::user(text),
        ],
        max_tokens: input_tokens.min(u32::MAX as u64) as u32,
    };
    match endpoint.complete(&req, &RequestMeta::default()) {
        Ok(resp) => {
            let out = resp.content.trim().to_string();
            if out.is_empty() || estimate_tokens(&out) >= input_tokens {
                Ok(compress_extractive(text, policy))
            } else {
                Ok(CompressionResult::new(text, out, Backend::ExternalSlm))
            }
        }
        Err(source) => Err(CompressError::Backend {
            source,
            fallback: compress_extractive(text, policy),
        }),
    }
}

/// Compression backend selected by configuration.
#[derive(Clone)]
pub enum Compressor {
    Extractive,
    Abstractive {
        endpoint: Arc<dyn ModelEndpoint>,
        model: String,
    },
}

impl std::fmt::Debug for Compressor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Extractive => f.write_str("Extractive"),
            Self::Abstractive { endpoint, model } => f
                .debug_struct("Abstractive")
                .field("endpoint", &endpoint.name())
                .field("model", model)
                .finish(),
        }
    }
}

impl Compressor {
    /// Wraps `endpoint` so at most `policy.max_concurrent_requests` calls are
    /// in flight.
    pub fn abstractive(
        endpoint: Arc<dyn ModelEndpoint>,
        model: impl Into<String>,
        policy: &CompressionPolicy,
    ) -> Self {
        Self::Abstractive {
            endpoint: Arc::new(Limited::new(endpoint, policy.max_concurrent_requests)),
            model: model.into(),
        }
    }

    pub fn compress(
        &self,
        text: &str,
        policy: &CompressionPolicy,
    ) -> Result<CompressionResult, CompressError> {
        match self {
            Self::Extractive => Ok(compress_extractive(text, policy)),
            Self::Abstractive { endpoint, model } => {
                compress_abstractive(text, endpoint.as_ref(), model, policy)
            }
        }
    }
}

const IMPERATIVES: &[&str] = &[
    "analyse",
    "analyze",
    "answer",
    "check",
    "classify",
    "compare",
    "compose",
    "convert",
    "create",
    "describe",
    "determine",
    "diagnose",
    "draft",
    "evaluate",
    "explain",
    "extract",
    "find",
    "fix",
    "format",
    "generate",
    "identify",
    "investigate",
    "list",
    "outline",
    "prepare",
    "propose",
    "reply",
    "respond",
    "review",
    "rewrite",
    "send",
    "suggest",
    "summarise",
    "summarize",
    "translate",
    "update",
    "write",
];

const LEAD_INS: &[&str] = &["please", "kindly", "then", "and", "also", "now"];

static CLAUSE_SPLIT: Lazy<Regex> = Lazy::new(|| Regex::new(r"[.!?;,]\s|[.!?;,]$|\n").unwrap());

/// Intent keywords: the contents of keep-marker lines, plus imperative verb
/// phrases (clauses starting with a known imperative verb) elsewhere.
pub fn intent_keywords(text: &str) -> Vec<String> {
    intent_keywords_with(text, &CompressionPolicy::default())
}

pub fn intent_keywords_with(text: &str, policy: &CompressionPolicy) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut push = |s: &str| {
        let s = s
            .trim()
            .trim_end_matches(['.', '!', '?', ';', ',', ':'])
            .trim();
        if !s.is_empty() && !out.iter().any(|k| k == s) {
            out.push(s.to_string());
        }
    };
    for line in text.lines() {
        if let Some(cut) = policy.is_marker(line) {
            push(&line[cut..]);
            continue;
        }
        for clause in CLAUSE_SPLIT.split(line) {
            let mut rest = clause.trim();
            loop {
                let (word, tail) = split_word(rest);
                if LEAD_INS.contains(&word.to_ascii_lowercase().as_str()) {
                    rest = tail;
                } else {
                    break;
                }
            }
            let (word, _) = split_word(rest);
            if IMPERATIVES.contains(&word.to_ascii_lowercase().as_str()) {
                push(rest);
            }
        }
    }
    out
}

fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim_start()),
        None => (s, ""),
    }
}

/// Fraction of `keywords` that still occur verbatim in `output`.
pub fn keyword_survival(keywords: &[String], output: &str) -> f64 {
    if keywords.is_empty() {
        return 1.0;
    }
    let kept = keywords
        .iter()
        .filter(|k| output.contains(k.as_str()))
        .count();
    kept as f64 / keywords.len() as f64
}
