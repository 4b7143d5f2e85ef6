//! Short random texts with known secrets, for closed-loop scanner checks
//! and gate fuzzing.

use contextguard::scanner::SecretClass;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::InjectedSecret;
use crate::secrets::{self, INSTITUTIONAL, PERSONAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzCase {
    pub text: String,
    pub secrets: Vec<InjectedSecret>,
}

impl FuzzCase {
    pub fn surfaces(&self) -> Vec<&str> {
        self.secrets.iter().map(|s| s.surface.as_str()).collect()
    }
}

const WORDS: &[&str] = &[
    "please",
    "check",
    "the",
    "service",
    "after",
    "deploy",
    "and",
    "send",
    "a",
    "note",
    "to",
    "ops",
    "about",
    "refund",
    "ticket",
    "queue",
    "stalled",
    "for",
    "customer",
    "record",
    "with",
    "value",
    "was",
    "seen",
    "in",
    "logs",
    "yesterday",
    "backup",
    "restore",
    "failed",
    "config",
    "review",
    "rotate",
    "later",
    "today",
];
const BEFORE: &[&str] = &[" ", "\n", ": ", " (", "\t", " = "];
const AFTER: &[&str] = &[" ", "\n", ", ", ") ", ". ", "; "];
const EXTRAS: &[&str] = &[
    "Ms Walsh",
    "Dr. Okafor",
    "Acme Widgets Ltd",
    "on 2023-11-04",
    "a typed [[SECRET:PER:EMAIL:000001]] sigil",
    "a typed [[\\SECRET:INS:JWT:000002]] sigil",
];

fn filler<R: Rng>(rng: &mut R, out: &mut String) {
    for _ in 0..rng.gen_range(1..8) {
        if !out.is_empty() && !out.ends_with(['\n', ' ', '\t']) {
            out.push(' ');
        }
        out.push_str(WORDS.choose(rng).unwrap());
    }
    if rng.gen_bool(0.15) {
        out.push(' ');
        out.push_str(EXTRAS.choose(rng).unwrap());
    }
}

/// One to four secrets of any class, separated by filler text.
pub fn fuzz_case<R: Rng>(rng: &mut R) -> FuzzCase {
    let mut text = String::new();
    let mut injected = Vec::new();
    for _ in 0..rng.gen_range(1..=4) {
        filler(rng, &mut text);
        let class: SecretClass = if rng.gen_bool(0.5) {
            *PERSONAL.choose(rng).unwrap()
        } else {
            *INSTITUTIONAL.choose(rng).unwrap()
        };
        let s = secrets::generate(class, rng);
        text.push_str(BEFORE.choose(rng).unwrap());
        text.push_str(&s.lead);
        injected.push(InjectedSecret {
            class,
            offset: text.len(),
            surface: s.surface.clone(),
        });
        text.push_str(&s.surface);
        text.push_str(AFTER.choose(rng).unwrap());
    }
    filler(rng, &mut text);
    FuzzCase {
        text,
        secrets: injected,
    }
}
