//! Two fixed scenarios: decomposed log triage and a long session under the
//! memory budget.

use std::sync::Arc;

use contextguard::config::Config;
use contextguard::costmodel::LedgerRow;
use contextguard::decomposer::Locality;
use contextguard::endpoint::{
    CaptureEndpoint, ChatRequest, MockEndpoint, ModelEndpoint, Responder,
};
use contextguard::pipeline::{Guard, GuardRequest};
use contextguard::router::TierEndpoints;
use contextguard::scanner::SecretClass;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::runner::{leaked_in, CAPABILITY};
use crate::secrets;

pub const TRIAGE_SAMPLES: usize = 118;
pub const TRIAGE_TOKENS: u64 = 11_300;
pub const TRIAGE_INSTRUCTION: &str =
    "TASK: find the root cause in the log below, translate it into German, and draft an email to the on-call team.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageSample {
    pub id: String,
    pub prompt: String,
    /// The single CRITICAL line, as written in the log.
    pub root_cause: String,
    /// Secrets written into the log.
    pub surfaces: Vec<String>,
}

const TRIAGE_NOISE: &[&str] = &[
    "{ts} INFO  {svc} processed batch {n} in {ms}ms",
    "{ts} DEBUG {svc} lease renewed for worker {n}",
    "{ts} WARN  {svc} slow response from dependency, {ms}ms for request {hex}",
    "{ts} INFO  {svc} checkpoint {hex} committed, lag {n} messages",
    "{ts} WARN  {svc} retrying publish of message {hex}, attempt {n}",
    "{ts} DEBUG {svc} connection {hex} returned to pool, idle {n}",
];
const TRIAGE_CAUSES: &[&str] = &[
    "disk full on",
    "certificate expired for",
    "replication stopped after a schema mismatch on",
    "out of memory, worker killed on",
    "lock wait timeout exceeded on",
];

fn noise_line<R: Rng>(rng: &mut R, clock: &mut u32, svc: &str) -> String {
    *clock += rng.gen_range(1..3);
    let c = *clock;
    TRIAGE_NOISE
        .choose(rng)
        .unwrap()
        .replace(
            "{ts}",
            &format!(
                "2024-06-{:02}T{:02}:{:02}:{:02}Z",
                1 + c / 86_400,
                c / 3600 % 24,
                c / 60 % 60,
                c % 60
            ),
        )
        .replace("{svc}", svc)
        .replace("{n}", &rng.gen_range(2..999).to_string())
        .replace("{ms}", &rng.gen_range(100..5000).to_string())
        .replace("{hex}", &format!("{:06x}", rng.gen_range(0..0xff_ffffu32)))
}

/// `n` log-triage prompts of about [`TRIAGE_TOKENS`] tokens each.
pub fn triage_corpus(seed: u64, n: usize) -> Vec<TriageSample> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            let svc = *["ingest", "billing-worker", "search-indexer", "mailer"]
                .choose(&mut rng)
                .unwrap();
            let target = (TRIAGE_TOKENS as f64 * rng.gen_range(0.97..1.03)) as usize * 4;
            let mut clock = rng.gen_range(0..40_000);
            let host = secrets::generate(SecretClass::InternalHostname, &mut rng).surface;
            let mut surfaces = vec![host.clone()];
            let mut lines = vec![TRIAGE_INSTRUCTION.to_string()];
            let mut bytes = TRIAGE_INSTRUCTION.len();
            let mut body = Vec::new();
            while bytes < target {
                let line = if rng.gen_bool(0.01) {
                    let class = *[
                        SecretClass::ApiKey,
                        SecretClass::Ipv4,
                        SecretClass::CloudAccessKey,
                    ]
                    .choose(&mut rng)
                    .unwrap();
                    let s = secrets::generate(class, &mut rng);
                    surfaces.push(s.surface.clone());
                    format!(
                        "{} using {}",
                        noise_line(&mut rng, &mut clock, svc),
                        s.surface
                    )
                } else {
                    noise_line(&mut rng, &mut clock, svc)
                };
                bytes += line.len() + 1;
                body.push(line);
            }
            let at = rng.gen_range(body.len() / 2..body.len());
            let root_cause = format!(
                "2024-06-01T23:59:59Z CRITICAL {svc} {} {host}",
                TRIAGE_CAUSES.choose(&mut rng).unwrap()
            );
            body[at] = root_cause.clone();
            lines.extend(body);
            TriageSample {
                id: format!("triage-{i:04}"),
                prompt: lines.join("\n"),
                root_cause,
                surfaces,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriageOutcome {
    pub samples: usize,
    pub baseline_tokens: u64,
    pub cloud_tokens: u64,
    pub baseline_cost: f64,
    pub guarded_cost: f64,
    /// `Σ(baseline − guarded cost) / Σ baseline cost`.
    pub reduction: f64,
    /// Samples planned as local extract, local transform, cloud generate.
    pub decomposed: usize,
    /// Samples whose final answer carries the restored root-cause line.
    pub answered: usize,
    /// Cloud calls carrying any raw log line other than the root cause.
    pub raw_context_calls: usize,
    pub leaked: usize,
    pub failed: usize,
}

struct TriageRow {
    ledger: LedgerRow,
    planned: bool,
    answered: bool,
}

/// Runs the triage corpus through a guard whose cloud tiers echo their
/// payload.
pub fn run_triage(samples: &[TriageSample], config: &Config) -> anyhow::Result<TriageOutcome> {
    let mut endpoints = TierEndpoints::from_policy(&config.router)?;
    let cap = Arc::new(CaptureEndpoint::new(Arc::new(MockEndpoint::new(
        "cloud-echo",
        Responder::Echo,
    ))));
    for t in 0..3 {
        endpoints.set(t, cap.clone());
    }
    let guard = Guard::with_endpoints(config.clone(), endpoints)?;
    let expected = [Locality::Local, Locality::Local, Locality::Tier(1)];
    let rows: Vec<Option<TriageRow>> = samples
        .par_iter()
        .map(|s| {
            let req = GuardRequest::new(s.id.clone(), s.prompt.clone()).capability(CAPABILITY);
            let resp = guard.handle(&req).ok()?;
            Some(TriageRow {
                planned: resp.plan_summary.localities == expected,
                answered: resp.response.contains(&s.root_cause),
                ledger: resp.ledger_row,
            })
        })
        .collect();
    let mut out = TriageOutcome {
        samples: samples.len(),
        ..TriageOutcome::default()
    };
    for row in &rows {
        match row {
            Some(r) => {
                out.baseline_tokens += r.ledger.baseline_input_tokens;
                out.cloud_tokens += r.ledger.guarded_input_tokens;
                out.baseline_cost += r.ledger.baseline_cost;
                out.guarded_cost += r.ledger.guarded_cost;
                out.decomposed += r.planned as usize;
                out.answered += r.answered as usize;
            }
            None => out.failed += 1,
        }
    }
    for s in samples {
        let calls = cap.captured_for(&s.id);
        let surfaces: Vec<&str> = s.surfaces.iter().map(String::as_str).collect();
        out.leaked += leaked_in(&calls, &surfaces).len();
        for c in &calls {
            let Ok(req) = serde_json::from_str::<ChatRequest>(&c.body) else {
                continue;
            };
            let content = req.user_content();
            let raw = s
                .prompt
                .lines()
                .skip(1)
                .filter(|l| !l.contains("CRITICAL"))
                .any(|l| content.contains(l));
            out.raw_context_calls += raw as usize;
        }
    }
    if out.baseline_cost > 0.0 {
        out.reduction = (out.baseline_cost - out.guarded_cost) / out.baseline_cost;
    }
    Ok(out)
}

pub const LIFO_TURNS: usize = 15;
pub const LIFO_TURN_TOKENS: u64 = 400;
/// Reply of the mocks in the session scenario.
pub const LIFO_REPLY: &str = "noted.";

/// `turns` user messages of exactly `tokens_per_turn` tokens each.
pub fn lifo_turns(seed: u64, turns: usize, tokens_per_turn: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bytes = (tokens_per_turn * 4) as usize;
    (0..turns)
        .map(|t| {
            let mut text = format!("step {t}: continue the migration plan with the items below\n");
            let mut i = 0;
            while text.len() < bytes {
                text.push_str(&format!(
                    "item {t}.{i}: move shard {} of table orders_{} to the new cluster and verify row counts\n",
                    rng.gen_range(1..500),
                    rng.gen_range(1..90)
                ));
                i += 1;
            }
            text.truncate(bytes);
            text
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LifoOutcome {
    pub budget: u64,
    /// Largest outbound context per turn, in tokens.
    pub outbound: Vec<u64>,
    /// Input tokens the monolithic baseline would send per turn.
    pub baseline: Vec<u64>,
    pub failed: usize,
}

impl LifoOutcome {
    /// First turn (1-based) at which the baseline exceeds the budget.
    pub fn baseline_crossover(&self) -> Option<usize> {
        self.baseline
            .iter()
            .position(|&b| b > self.budget)
            .map(|i| i + 1)
    }
}

/// Plays `turns` in one session; every tier, including the local one, is
/// captured.
pub fn run_lifo(turns: &[String], config: &Config) -> anyhow::Result<LifoOutcome> {
    let reply = Responder::Fixed(LIFO_REPLY.into());
    let cloud = Arc::new(CaptureEndpoint::new(Arc::new(MockEndpoint::new(
        "cloud",
        reply.clone(),
    ))));
    let local = Arc::new(CaptureEndpoint::new(Arc::new(MockEndpoint::local(
        "local", reply,
    ))));
    let mut endpoints = TierEndpoints::new();
    for t in 0..3 {
        endpoints.set(t, cloud.clone());
    }
    endpoints.set(3, local.clone() as Arc<dyn ModelEndpoint>);
    let guard = Guard::with_endpoints(config.clone(), endpoints)?;
    let mut out = LifoOutcome {
        budget: config.memory.budget_tokens,
        ..LifoOutcome::default()
    };
    for turn in turns {
        let (seen_cloud, seen_local) = (cloud.count(), local.count());
        match guard.handle(&GuardRequest::new("lifo", turn.clone())) {
            Ok(resp) => out.baseline.push(resp.ledger_row.baseline_input_tokens),
            Err(_) => {
                out.failed += 1;
                out.baseline.push(0);
            }
        }
        let calls: Vec<_> = cloud
            .captured()
            .into_iter()
            .skip(seen_cloud)
            .chain(local.captured().into_iter().skip(seen_local))
            .collect();
        let largest = calls
            .iter()
            .filter_map(|c| serde_json::from_str::<ChatRequest>(&c.body).ok())
            .map(|r| r.prompt_tokens())
            .max()
            .unwrap_or(0);
        out.outbound.push(largest);
    }
    Ok(out)
}
