//! Per-session LIFO context stack.
//!
//! The newest `recent_window` entries are kept verbatim. When the stack grows
//! past its token budget, everything older is folded into a single digest,
//! so the context handed to a model stays under a fixed ceiling however long
//! the session runs.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compressor::{CompressError, CompressionPolicy, Compressor};
use crate::costmodel::estimate_tokens;
use crate::scanner::Scanner;
use crate::vault::{DualVault, VaultError};

pub const DIGEST_LABEL: &str = "[Summary of earlier conversation]";
pub const TRUNCATION_MARKER: &str = "[earlier text truncated]\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
    Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub turn: u64,
    pub role: Role,
    pub content: String,
    pub token_estimate: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compacted_from: Vec<u64>,
}

impl MemoryEntry {
    pub fn new(turn: u64, role: Role, content: impl Into<String>) -> Self {
        let content = content.into();
        Self {
            turn,
            role,
            token_estimate: estimate_tokens(&content),
            content,
            compacted_from: Vec::new(),
        }
    }

    fn render(&self) -> String {
        match self.role {
            Role::User => format!("User: {}", self.content),
            Role::Assistant => format!("Assistant: {}", self.content),
            Role::Digest => format!("{DIGEST_LABEL}\n{}", self.content),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub budget_tokens: u64,
    pub recent_window: usize,
    /// Directory for `session-<id>.jsonl` files; in-memory only when unset.
    pub dir: Option<PathBuf>,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            budget_tokens: 2000,
            recent_window: 3,
            dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("turn {turn} is not greater than the latest turn {latest}")]
    NonMonotoneTurn { turn: u64, latest: u64 },
    #[error("recent window alone needs {recent} tokens, budget is {budget}")]
    Infeasible { recent: u64, budget: u64 },
    #[error("digest redaction failed: {0}")]
    Redaction(#[from] VaultError),
    #[error("session file: {0}")]
    Io(#[from] std::io::Error),
    #[error("session file line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// What compaction needs: the compressor for the digest and the session's
/// vaults, so the digest is scanned and redacted before it is stored.
pub struct Compaction<'a> {
    pub compressor: &'a Compressor,
    pub policy: &'a CompressionPolicy,
    pub scanner: &'a Scanner,
    pub vaults: &'a mut DualVault,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PushOutcome {
    pub compacted: bool,
    /// Set when the recent window alone exceeds the budget; bootstrap
    /// truncation keeps the working context within bounds.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStack {
    entries: Vec<MemoryEntry>,
    pub budget_tokens: u64,
    pub recent_window: usize,
}

impl SessionStack {
    pub fn new(budget_tokens: u64, recent_window: usize) -> Self {
        Self {
            entries: Vec::new(),
            budget_tokens: budget_tokens.max(1),
            recent_window: recent_window.max(1),
        }
    }

    pub fn from_config(cfg: &MemoryConfig) -> Self {
        Self::new(cfg.budget_tokens, cfg.recent_window)
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn total_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.token_estimate).sum()
    }

    pub fn next_turn(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.turn + 1)
    }

    /// Appends `entry`, compacting when the budget is exceeded.
    pub fn push(
        &mut self,
        entry: MemoryEntry,
        cx: &mut Compaction<'_>,
    ) -> Result<PushOutcome, MemoryError> {
        if let Some(last) = self.entries.last() {
            if entry.turn <= last.turn {
                return Err(MemoryError::NonMonotoneTurn {
                    turn: entry.turn,
                    latest: last.turn,
                });
            }
        }
        self.entries.push(entry);
        if self.total_tokens() <= self.budget_tokens {
            return Ok(PushOutcome::default());
        }
        match self.compact(cx) {
            Ok(compacted) => Ok(PushOutcome {
                compacted,
                warning: None,
            }),
            Err(MemoryError::Infeasible { recent, budget }) => {
                let compacted = self.fold_old(cx, 0)?;
                Ok(PushOutcome {
                    compacted,
                    warning: Some(format!(
                        "recent window needs {recent} tokens, over the {budget}-token budget; context will be truncated"
                    )),
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Replaces every entry older than the recent window with one digest
    /// capped at `min(max_digest_tokens, budget - recent)`. No-op at or
    /// below budget.
    pub fn compact(&mut self, cx: &mut Compaction<'_>) -> Result<bool, MemoryError> {
        if self.total_tokens() <= self.budget_tokens {
            return Ok(false);
        }
        let split = self.entries.len().saturating_sub(self.recent_window);
        let recent: u64 = self.entries[split..].iter().map(|e| e.token_estimate).sum();
        if recent > self.budget_tokens {
            return Err(MemoryError::Infeasible {
                recent,
                budget: self.budget_tokens,
            });
        }
        let cap = cx.policy.max_digest_tokens.min(self.budget_tokens - recent);
        self.fold_old(cx, cap)
    }

    fn fold_old(&mut self, cx: &mut Compaction<'_>, cap: u64) -> Result<bool, MemoryError> {
        let split = self.entries.len().saturating_sub(self.recent_window);
        if split == 0 {
            return Ok(false);
        }
        let old: Vec<MemoryEntry> = self.entries.drain(..split).collect();
        let mut compacted_from = Vec::new();
        for e in &old {
            if e.role == Role::Digest {
                compacted_from.extend(&e.compacted_from);
            } else {
                compacted_from.push(e.turn);
            }
        }
        let source = old
            .iter()
            .map(|e| e.render())
            .collect::<Vec<_>>()
            .join("\n");
        let compressed = match cx.compressor.compress(&source, cx.policy) {
            Ok(r) => r.output,
            Err(CompressError::Backend { fallback, .. }) => fallback.output,
        };
        let spans = cx.scanner.scan(&compressed).spans;
        let turn = old.last().map(|e| e.turn).unwrap_or(0);
        let redacted = cx.vaults.redact(&compressed, &spans, turn)?.text;
        let content = keep_tail_lines(&redacted, cap);
        let mut digest = MemoryEntry::new(turn, Role::Digest, content);
        digest.compacted_from = compacted_from;
        self.entries.insert(0, digest);
        Ok(true)
    }

    /// Working context within the session budget.
    pub fn bootstrap(&self) -> String {
        self.bootstrap_within(self.budget_tokens)
    }

    /// Working context of at most `limit` tokens: the newest entry (truncated
    /// head-first if it alone is too big), the newest digest, then further
    /// entries newest-first while they fit. Output is in turn order.
    pub fn bootstrap_within(&self, limit: u64) -> String {
        const SEP: &str = "\n\n";
        let Some(newest) = self.entries.last() else {
            return String::new();
        };
        let limit_bytes = limit.saturating_mul(4);
        let mut blocks: Vec<(usize, String)> = Vec::new();
        let mut used = 0u64;
        let add = |blocks: &mut Vec<(usize, String)>, used: &mut u64, idx: usize, text: String| {
            *used += text.len() as u64
                + if blocks.is_empty() {
                    0
                } else {
                    SEP.len() as u64
                };
            blocks.push((idx, text));
        };

        let last = self.entries.len() - 1;
        let text = newest.render();
        if text.len() as u64 > limit_bytes {
            add(
                &mut blocks,
                &mut used,
                last,
                truncate_head(&text, limit_bytes as usize),
            );
        } else {
            add(&mut blocks, &mut used, last, text);
        }
        let digest = self.entries[..last]
            .iter()
            .rposition(|e| e.role == Role::Digest);
        if let Some(d) = digest {
            let room = limit_bytes.saturating_sub(used + SEP.len() as u64);
            let text = self.entries[d].render();
            if text.len() as u64 <= room {
                add(&mut blocks, &mut used, d, text);
            } else if room > TRUNCATION_MARKER.len() as u64 {
                add(
                    &mut blocks,
                    &mut used,
                    d,
                    truncate_head(&text, room as usize),
                );
            }
        }
        for i in (0..last).rev() {
            if Some(i) == digest {
                continue;
            }
            let text = self.entries[i].render();
            if used + SEP.len() as u64 + text.len() as u64 > limit_bytes {
                break;
            }
            add(&mut blocks, &mut used, i, text);
        }
        blocks.sort_by_key(|(i, _)| *i);
        blocks
            .into_iter()
            .map(|(_, t)| t)
            .collect::<Vec<_>>()
            .join(SEP)
    }

    pub fn save(&self, dir: &Path, session: &str) -> Result<(), MemoryError> {
        fs::create_dir_all(dir)?;
        let path = session_path(dir, session);
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            for e in &self.entries {
                let line =
                    serde_json::to_string(e).map_err(|e| std::io::Error::other(e.to_string()))?;
                writeln!(f, "{line}")?;
            }
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Loads a saved session; a missing file yields an empty stack.
    pub fn load(dir: &Path, session: &str, cfg: &MemoryConfig) -> Result<Self, MemoryError> {
        let mut stack = Self::from_config(cfg);
        let file = match fs::File::open(session_path(dir, session)) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(stack),
            Err(e) => return Err(e.into()),
        };
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: MemoryEntry =
                serde_json::from_str(&line).map_err(|e| MemoryError::Corrupt {
                    line: n + 1,
                    message: e.to_string(),
                })?;
            stack.entries.push(entry);
        }
        Ok(stack)
    }
}

pub fn session_path(dir: &Path, session: &str) -> PathBuf {
    dir.join(format!(
        "session-{}.jsonl",
        crate::vault::sanitize_session(session)
    ))
}

/// Keeps whole trailing lines of `text` fitting in `cap` tokens; if even the
/// last line does not fit, its tail.
fn keep_tail_lines(text: &str, cap: u64) -> String {
    if estimate_tokens(text) <= cap {
        return text.to_string();
    }
    let cap_bytes = (cap * 4) as usize;
    let mut start = text.len();
    for (i, _) in text.match_indices('\n').rev() {
        if text.len() - (i + 1) > cap_bytes {
            break;
        }
        start = i + 1;
    }
    if start == text.len() || text.len() - start > cap_bytes {
        return tail_bytes(text, cap_bytes).to_string();
    }
    text[start..].to_string()
}

fn tail_bytes(text: &str, max: usize) -> &str {
    let mut cut = text.len().saturating_sub(max);
    while !text.is_char_boundary(cut) {
        cut += 1;
    }
    &text[cut..]
}

fn truncate_head(text: &str, max_bytes: usize) -> String {
    let room = max_bytes.saturating_sub(TRUNCATION_MARKER.len());
    format!("{TRUNCATION_MARKER}{}", tail_bytes(text, room))
}
