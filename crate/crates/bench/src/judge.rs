//! Pairwise preference judging of baseline and guarded responses.

use std::collections::HashMap;
use std::sync::Arc;

use contextguard::endpoint::{ChatMessage, ChatRequest, ModelEndpoint, RequestMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::RunRecord;

pub const JUDGE_INSTRUCTION: &str = "You compare two answers to the same request. \
Judge which answer is more useful, correct and concise. Reply with exactly one token: \
A if answer A is better, B if answer B is better, TIE if they are equally good.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub id: String,
    pub baseline: String,
    pub guarded: String,
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("pair {0}: empty response")]
    EmptyResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    A,
    B,
    Tie,
}

#[derive(Clone)]
pub enum Judge {
    /// Prefers the shorter answer; equal lengths tie.
    Mock,
    Endpoint(Arc<dyn ModelEndpoint>),
}

impl Judge {
    fn verdict(&self, a: &str, b: &str) -> Option<Verdict> {
        match self {
            Judge::Mock => Some(match a.chars().count().cmp(&b.chars().count()) {
                std::cmp::Ordering::Less => Verdict::A,
                std::cmp::Ordering::Greater => Verdict::B,
                std::cmp::Ordering::Equal => Verdict::Tie,
            }),
            Judge::Endpoint(ep) => {
                let req = ChatRequest {
                    model: "judge".into(),
                    messages: vec![
                        ChatMessage::system(JUDGE_INSTRUCTION),
                        ChatMessage::user(format!("Answer A:\n{a}\n\nAnswer B:\n{b}")),
                    ],
                    max_tokens: 4,
                };
                let reply = ep.complete(&req, &RequestMeta::default()).ok()?;
                parse_verdict(&reply.content)
            }
        }
    }
}

/// Reads `A`, `B` or `TIE` from the start of a judge reply.
pub fn parse_verdict(reply: &str) -> Option<Verdict> {
    let word: String = reply
        .trim()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    match word.as_str() {
        "A" => Some(Verdict::A),
        "B" => Some(Verdict::B),
        "TIE" => Some(Verdict::Tie),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub pairs: usize,
    pub guarded_wins: usize,
    pub baseline_wins: usize,
    pub ties: usize,
    /// Pairs whose judge call failed or gave no readable verdict.
    pub skipped: usize,
}

impl Tally {
    pub fn guarded_win_rate(&self) -> f64 {
        let judged = self.pairs - self.skipped;
        if judged == 0 {
            0.0
        } else {
            self.guarded_wins as f64 / judged as f64
        }
    }
}

/// Judges every pair, presenting the two answers in a seeded random order.
pub fn judge(pairs: &[Pair], judge: &Judge, seed: u64) -> Result<Tally, JudgeError> {
    if let Some(p) = pairs
        .iter()
        .find(|p| p.baseline.trim().is_empty() || p.guarded.trim().is_empty())
    {
        return Err(JudgeError::EmptyResponse(p.id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally {
        pairs: pairs.len(),
        ..Tally::default()
    };
    for p in pairs {
        let guarded_first: bool = rng.gen();
        let (a, b) = if guarded_first {
            (&p.guarded, &p.baseline)
        } else {
            (&p.baseline, &p.guarded)
        };
        match (judge.verdict(a, b), guarded_first) {
            (None, _) => t.skipped += 1,
            (Some(Verdict::Tie), _) => t.ties += 1,
            (Some(Verdict::A), true) | (Some(Verdict::B), false) => t.guarded_wins += 1,
            (Some(_), _) => t.baseline_wins += 1,
        }
    }
    Ok(t)
}

/// Joins a baseline and a guarded run by sample id. Rows without a
/// response on either side are dropped.
pub fn pair_runs(baseline: &[RunRecord], guarded: &[RunRecord]) -> Vec<Pair> {
    let by_id: HashMap<&str, &RunRecord> = guarded.iter().map(|r| (r.id.as_str(), r)).collect();
    baseline
        .iter()
        .filter_map(|b| {
            let g = by_id.get(b.id.as_str())?;
            (!b.response.trim().is_empty() && !g.response.trim().is_empty()).then(|| Pair {
                id: b.id.clone(),
                baseline: b.response.clone(),
                guarded: g.response.clone(),
            })
        })
        .collect()
}
