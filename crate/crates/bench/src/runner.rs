//! Runs a corpus through the guard (or straight to a cloud tier for the
//! baseline arm) and records one row per sample.
//!
//! Every call bound for tiers 0–2 passes through a capture wrapper; leakage
//! is the set of ground-truth surfaces found in those captures.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use contextguard::config::{CompressionBackend, Config};
use contextguard::costmodel::{estimate_tokens, price};
use contextguard::endpoint::{
    CaptureEndpoint, Captured, ChatMessage, ChatRequest, MockEndpoint, ModelEndpoint, RequestMeta,
    Responder,
};
use contextguard::pipeline::{Guard, GuardError, GuardRequest};
use contextguard::router::{Assigned, TierEndpoints};
use contextguard::scanner::scan_residual;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::BenchmarkSample;

/// Capability requested for every benchmark prompt; tier 0 does not offer
/// it, so guarded traffic is priced like the baseline tier.
pub const CAPABILITY: &str = "reasoning";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Guarded,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Extractive,
    Slm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Blocked,
    Failed,
}

/// One sample's outcome. Costs use the configured price table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub quadrant: String,
    pub mode: Mode,
    pub backend: BackendChoice,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub secrets: usize,
    pub leaked: usize,
    /// Classes of leaked secrets, never their surfaces.
    pub leaked_classes: Vec<String>,
    pub baseline_tokens: u64,
    pub guarded_tokens: u64,
    pub output_tokens: u64,
    pub baseline_cost: f64,
    pub guarded_cost: f64,
    pub tier: Option<u8>,
    pub compression_ratio: Option<f64>,
    pub response: String,
    pub wall_ms: f64,
}

impl RunRecord {
    /// Per-sample token reduction `1 − guarded/baseline`.
    pub fn reduction(&self) -> f64 {
        if self.baseline_tokens == 0 {
            0.0
        } else {
            1.0 - self.guarded_tokens as f64 / self.baseline_tokens as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: Mode,
    pub backend: BackendChoice,
    pub config: Config,
    /// Use the endpoints in `config` instead of in-process mocks.
    pub live: bool,
    /// Worker threads; 0 picks the rayon default.
    pub workers: usize,
    /// Tier the baseline arm sends raw prompts to.
    pub baseline_tier: u8,
}

impl RunOptions {
    pub fn new(mode: Mode, backend: BackendChoice) -> Self {
        Self {
            mode,
            backend,
            config: Config::default_config(),
            live: false,
            workers: 4,
            baseline_tier: 1,
        }
    }
}

/// Responder of the in-process cloud mocks: the first sentence of the
/// payload, so both arms get short answers of comparable length.
pub fn mock_cloud() -> Arc<dyn ModelEndpoint> {
    Arc::new(MockEndpoint::new("cloud-mock", Responder::FirstSentence))
}

/// Tier endpoints with captures on tiers 0–2.
pub struct Harness {
    pub endpoints: TierEndpoints,
    pub captures: Vec<Arc<CaptureEndpoint>>,
}

impl Harness {
    pub fn new(config: &Config, live: bool) -> anyhow::Result<Self> {
        let mut endpoints = TierEndpoints::from_policy(&config.router)?;
        let mut captures = Vec::new();
        for t in 0..3u8 {
            let inner = match (live, endpoints.get(t)) {
                (true, Some(ep)) => ep.clone(),
                (true, None) => continue,
                (false, _) => mock_cloud(),
            };
            let cap = Arc::new(CaptureEndpoint::new(inner));
            endpoints.set(t, cap.clone());
            captures.push(cap);
        }
        Ok(Self {
            endpoints,
            captures,
        })
    }

    /// Everything sent to tiers 0–2 for `session`.
    pub fn captured_for(&self, session: &str) -> Vec<Captured> {
        self.captures
            .iter()
            .flat_map(|c| c.captured_for(session))
            .collect()
    }
}

/// Ground-truth surfaces present in the captured calls. Message contents
/// are decoded first so that JSON escaping cannot hide a surface.
pub fn leaked_in(captures: &[Captured], surfaces: &[&str]) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    for c in captures {
        found.extend(scan_residual(&c.body, surfaces));
        if let Ok(req) = serde_json::from_str::<ChatRequest>(&c.body) {
            for m in &req.messages {
                found.extend(scan_residual(&m.content, surfaces));
            }
        }
    }
    found
}

fn leaked_classes(sample: &BenchmarkSample, leaked: &BTreeSet<String>) -> Vec<String> {
    sample
        .injected_secrets
        .iter()
        .filter(|s| leaked.contains(&s.surface))
        .map(|s| s.class.id().to_string())
        .collect()
}

/// Builds the guard used by guarded runs.
pub fn build_guard(opts: &RunOptions) -> anyhow::Result<(Guard, Harness)> {
    let mut config = opts.config.clone();
    config.compression.backend = match opts.backend {
        BackendChoice::Extractive => CompressionBackend::Extractive,
        BackendChoice::Slm => CompressionBackend::Slm,
    };
    if opts.backend == BackendChoice::Slm && config.compression.slm_endpoint_url.is_none() {
        config.compression.slm_endpoint_url = Some("local://first-sentence".into());
    }
    let harness = Harness::new(&config, opts.live)?;
    let guard =
        Guard::with_endpoints(config, harness.endpoints.clone()).context("building the guard")?;
    Ok((guard, harness))
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?)
}

/// Runs every sample; endpoint failures are recorded per row.
pub fn run(samples: &[BenchmarkSample], opts: &RunOptions) -> anyhow::Result<Vec<RunRecord>> {
    let pool = pool(opts.workers)?;
    match opts.mode {
        Mode::Guarded => {
            let (guard, harness) = build_guard(opts)?;
            Ok(pool.install(|| {
                samples
                    .par_iter()
                    .map(|s| guarded_one(s, &guard, &harness, opts))
                    .collect()
            }))
        }
        Mode::Baseline => {
            let harness = Harness::new(&opts.config, opts.live)?;
            let ep = harness
                .endpoints
                .get(opts.baseline_tier)
                .cloned()
                .with_context(|| format!("tier {} has no endpoint", opts.baseline_tier))?;
            Ok(pool.install(|| {
                samples
                    .par_iter()
                    .map(|s| baseline_one(s, ep.as_ref(), &harness, opts))
                    .collect()
            }))
        }
    }
}

fn record(sample: &BenchmarkSample, opts: &RunOptions) -> RunRecord {
    RunRecord {
        id: sample.id.clone(),
        quadrant: sample.quadrant.to_string(),
        mode: opts.mode,
        backend: opts.backend,
        status: Status::Ok,
        error: None,
        secrets: sample.injected_secrets.len(),
        leaked: 0,
        leaked_classes: Vec::new(),
        baseline_tokens: estimate_tokens(&sample.prompt_text),
        guarded_tokens: 0,
        output_tokens: 0,
        baseline_cost: 0.0,
        guarded_cost: 0.0,
        tier: None,
        compression_ratio: None,
        response: String::new(),
        wall_ms: 0.0,
    }
}

fn baseline_price(tokens_in: u64, tokens_out: u64, config: &Config) -> f64 {
    price(
        tokens_in,
        tokens_out,
        &config.ledger.baseline_price_ref,
        &config.prices,
    )
    .unwrap_or(0.0)
}

pub fn guarded_one(
    sample: &BenchmarkSample,
    guard: &Guard,
    harness: &Harness,
    opts: &RunOptions,
) -> RunRecord {
    let start = Instant::now();
    let mut rec = record(sample, opts);
    let req = GuardRequest::new(sample.id.clone(), sample.prompt_text.clone())
        .profile(sample.quadrant.profile)
        .capability(CAPABILITY);
    match guard.handle(&req) {
        Ok(resp) => {
            let row = resp.ledger_row;
            rec.baseline_tokens = row.baseline_input_tokens;
            rec.guarded_tokens = row.guarded_input_tokens;
            rec.output_tokens = row.output_tokens;
            rec.baseline_cost = row.baseline_cost;
            rec.guarded_cost = row.guarded_cost;
            rec.tier = resp.decision.assigned.and_then(Assigned::tier);
            rec.compression_ratio = resp.decision.tasks.last().map(|t| t.compression_ratio);
            rec.response = resp.response;
        }
        Err(GuardError::Blocked { .. }) => {
            rec.status = Status::Blocked;
            rec.baseline_cost = baseline_price(rec.baseline_tokens, 0, guard.config());
        }
        Err(e) => {
            rec.status = Status::Failed;
            rec.error = Some(e.to_string());
            rec.baseline_cost = baseline_price(rec.baseline_tokens, 0, guard.config());
        }
    }
    let leaked = leaked_in(&harness.captured_for(&sample.id), &sample.surfaces());
    rec.leaked = leaked.len();
    rec.leaked_classes = leaked_classes(sample, &leaked);
    rec.wall_ms = start.elapsed().as_secs_f64() * 1000.0;
    rec
}

fn baseline_one(
    sample: &BenchmarkSample,
    ep: &dyn ModelEndpoint,
    harness: &Harness,
    opts: &RunOptions,
) -> RunRecord {
    let start = Instant::now();
    let mut rec = record(sample, opts);
    rec.guarded_tokens = rec.baseline_tokens;
    rec.tier = Some(opts.baseline_tier);
    let req = ChatRequest {
        model: format!("tier{}", opts.baseline_tier),
        messages: vec![ChatMessage::user(sample.prompt_text.clone())],
        max_tokens: opts.config.router.settings.max_output_tokens,
    };
    let meta = RequestMeta {
        session_id: Some(sample.id.clone()),
        tier: Some(opts.baseline_tier),
        task_index: Some(0),
    };
    match ep.complete(&req, &meta) {
        Ok(resp) => {
            rec.output_tokens = estimate_tokens(&resp.content);
            rec.response = resp.content;
        }
        Err(e) => {
            rec.status = Status::Failed;
            rec.error = Some(e.to_string());
        }
    }
    rec.baseline_cost = baseline_price(rec.baseline_tokens, rec.output_tokens, &opts.config);
    rec.guarded_cost = rec.baseline_cost;
    let leaked = leaked_in(&harness.captured_for(&sample.id), &sample.surfaces());
    rec.leaked = leaked.len();
    rec.leaked_classes = leaked_classes(sample, &leaked);
    rec.wall_ms = start.elapsed().as_secs_f64() * 1000.0;
    rec
}
