//! The end-to-end request path.
//!
//! Stages run in a fixed order: memory bootstrap, scan, redact, plan, then
//! for each cloud-bound task compress, assess, route and dispatch, then
//! assemble, rehydrate, memory push, ledger and audit. Requests within a
//! session are serialized; sessions run in parallel.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{timestamp, AuditLog, AuditOutcome, AuditRecord};
use crate::compressor::{CompressError, Compressor};
use crate::config::{CompressionBackend, Config};
use crate::costmodel::{estimate_tokens, parsimony, price, CostLedger, LedgerRow};
use crate::decomposer::{
    execute, plan, split_prompt, LocalExecutor, Locality, RuleExecutor, SubTask, TaskOutcome,
    TemplateRegistry,
};
use crate::endpoint::{HttpEndpoint, MockEndpoint, ModelEndpoint, RequestMeta};
use crate::memory::{Compaction, MemoryEntry, MemoryError, Role, SessionStack};
use crate::router::{
    assess, dispatch, route, Assigned, DispatchError, EndpointSpec, TierEndpoints,
};
use crate::scanner::{Scanner, Typology};
use crate::vault::{escape_sigils, unescape_sigils, DualVault, VaultKey, VaultKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    Lazy,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardRequest {
    pub session_id: String,
    pub prompt: String,
    #[serde(default)]
    pub profile_hint: Option<Profile>,
    #[serde(default)]
    pub requested_capability: Option<String>,
}

impl GuardRequest {
    pub fn new(session_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            prompt: prompt.into(),
            profile_hint: None,
            requested_capability: None,
        }
    }

    pub fn capability(mut self, cap: impl Into<String>) -> Self {
        self.requested_capability = Some(cap.into());
        self
    }

    pub fn profile(mut self, p: Profile) -> Self {
        self.profile_hint = Some(p);
        self
    }
}

/// Routing outcome of one cloud-bound task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRoute {
    pub index: usize,
    pub assigned: Assigned,
    pub risk_score: f64,
    pub reasons: Vec<String>,
    pub payload_tokens: u64,
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    /// Tier of the final cloud-bound task.
    pub assigned: Option<Assigned>,
    pub max_risk_score: f64,
    pub tasks: Vec<TaskRoute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub template: Option<String>,
    pub task_count: usize,
    pub localities: Vec<Locality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardResponse {
    pub response: String,
    pub decision: DecisionSummary,
    pub ledger_row: LedgerRow,
    pub plan_summary: PlanSummary,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Request,
    Bootstrap,
    Scan,
    Redact,
    Plan,
    Compress,
    Assess,
    Route,
    Dispatch,
    Assemble,
    Rehydrate,
    Memory,
    Ledger,
    Audit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("unknown"))
    }
}

#[derive(Debug, Error)]
pub enum GuardError {
    /// A payload carried a residual secret and no tier-3 endpoint could
    /// take it.
    #[error("blocked by the zero-trust gate: {reasons:?}")]
    Blocked {
        reasons: Vec<String>,
        decision: Box<DecisionSummary>,
    },
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
}

impl GuardError {
    fn at(stage: Stage, message: impl fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: message.to_string(),
        }
    }

    pub fn stage(&self) -> Stage {
        match self {
            Self::Blocked { .. } => Stage::Route,
            Self::Stage { stage, .. } => *stage,
        }
    }

    /// HTTP status class for this error.
    pub fn status(&self) -> u16 {
        match self {
            Self::Blocked { .. } => 403,
            Self::Stage {
                stage: Stage::Request,
                ..
            } => 400,
            Self::Stage {
                stage: Stage::Dispatch,
                ..
            } => 502,
            Self::Stage { .. } => 500,
        }
    }
}

struct Session {
    vaults: DualVault,
    memory: SessionStack,
    /// Tokens the monolithic baseline re-sends each turn.
    full_history_tokens: u64,
}

/// Aggregates over the ledger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub requests: u64,
    pub blocked: u64,
    pub failed: u64,
    pub ledger_rows: usize,
    pub baseline_input_tokens: u64,
    pub guarded_input_tokens: u64,
    pub baseline_cost: f64,
    pub guarded_cost: f64,
    pub delta: f64,
    pub parsimony: Option<f64>,
    pub parsimony_by_quadrant: std::collections::BTreeMap<String, f64>,
    pub audit_records: u64,
}

#[derive(Default)]
struct Counters {
    requests: u64,
    blocked: u64,
    failed: u64,
}

/// The privacy guard service.
pub struct Guard {
    config: Config,
    scanner: Scanner,
    templates: TemplateRegistry,
    compressor: Compressor,
    endpoints: TierEndpoints,
    local: Arc<dyn LocalExecutor>,
    audit: AuditLog,
    vault_key: Option<VaultKey>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    ledger: Mutex<CostLedger>,
    counters: Mutex<Counters>,
}

impl fmt::Debug for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Guard")
            .field("endpoints", &self.endpoints)
            .field("compressor", &self.compressor)
            .finish_non_exhaustive()
    }
}

impl Guard {
    /// Builds endpoints, scanner rules, templates and the audit log from
    /// `config`.
    pub fn new(config: Config) -> anyhow::Result<Self> {
        let endpoints = TierEndpoints::from_policy(&config.router)?;
        Self::with_endpoints(config, endpoints)
    }

    /// Like [`Guard::new`] with caller-supplied tier endpoints.
    pub fn with_endpoints(config: Config, endpoints: TierEndpoints) -> anyhow::Result<Self> {
        let scanner = match &config.scanner.rules_path {
            Some(p) => Scanner::from_rules_file(p)?,
            None => Scanner::builtin().clone(),
        };
        let templates = match &config.decomposer.templates_path {
            Some(p) => TemplateRegistry::from_file(p)?,
            None => TemplateRegistry::builtin(),
        };
        let compressor = match config.compression.backend {
            CompressionBackend::Extractive => Compressor::Extractive,
            CompressionBackend::Slm => {
                let url = config
                    .compression
                    .slm_endpoint_url
                    .as_deref()
                    .unwrap_or_default();
                let timeout =
                    std::time::Duration::from_secs(config.router.settings.timeout_secs.max(1));
                let ep: Arc<dyn ModelEndpoint> =
                    match EndpointSpec::parse(url).map_err(anyhow::Error::msg)? {
                        EndpointSpec::Http(u) => Arc::new(HttpEndpoint::new("slm", u, timeout)?),
                        EndpointSpec::Mock(_) | EndpointSpec::Local(_) => Arc::new(
                            MockEndpoint::local("slm", crate::endpoint::Responder::FirstSentence),
                        ),
                    };
                Compressor::abstractive(
                    ep,
                    config.compression.slm_model.clone(),
                    &config.compression.policy,
                )
            }
        };
        let audit = match &config.audit.path {
            Some(p) => AuditLog::open(p)?,
            None => AuditLog::discard(),
        };
        let vault_key = match &config.vault.dir {
            Some(_) => {
                let hex = std::env::var(&config.vault.key_env).map_err(|_| {
                    anyhow::anyhow!("vault.dir is set but {} is not", config.vault.key_env)
                })?;
                Some(VaultKey::from_hex(&hex)?)
            }
            None => None,
        };
        Ok(Self {
            config,
            scanner,
            templates,
            compressor,
            endpoints,
            local: Arc::new(RuleExecutor::new()),
            audit,
            vault_key,
            sessions: Mutex::new(HashMap::new()),
            ledger: Mutex::new(CostLedger::new()),
            counters: Mutex::new(Counters::default()),
        })
    }

    pub fn with_local_executor(mut self, local: Arc<dyn LocalExecutor>) -> Self {
        self.local = local;
        self
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = audit;
        self
    }

    pub fn with_compressor(mut self, compressor: Compressor) -> Self {
        self.compressor = compressor;
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn ledger_rows(&self) -> Vec<LedgerRow> {
        self.ledger.lock().unwrap().rows().to_vec()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, GuardError> {
        let mut map = self.sessions.lock().unwrap();
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        let vaults = match (&self.config.vault.dir, &self.vault_key) {
            (Some(dir), Some(key)) => DualVault::open_persistent(id, dir, key)
                .map_err(|e| GuardError::at(Stage::Redact, e))?,
            _ => DualVault::new(id),
        };
        let memory = match &self.config.memory.dir {
            Some(dir) => SessionStack::load(dir, id, &self.config.memory)
                .map_err(|e| GuardError::at(Stage::Bootstrap, e))?,
            None => SessionStack::from_config(&self.config.memory),
        };
        let full_history_tokens = memory
            .entries()
            .iter()
            .filter(|e| e.role != Role::Digest)
            .map(|e| e.token_estimate)
            .sum();
        let s = Arc::new(Mutex::new(Session {
            vaults,
            memory,
            full_history_tokens,
        }));
        map.insert(id.to_string(), s.clone());
        Ok(s)
    }

    /// Memory entries of a session (redacted form), if it exists.
    pub fn session_memory(&self, id: &str) -> Option<Vec<MemoryEntry>> {
        let s = self.sessions.lock().unwrap().get(id).cloned()?;
        let entries = s.lock().unwrap().memory.entries().to_vec();
        Some(entries)
    }

    pub fn metrics(&self) -> Metrics {
        let rows = self.ledger_rows();
        let c = self.counters.lock().unwrap();
        let p = parsimony(&rows).ok();
        Metrics {
            requests: c.requests,
            blocked: c.blocked,
            failed: c.failed,
            ledger_rows: rows.len(),
            baseline_input_tokens: rows.iter().map(|r| r.baseline_input_tokens).sum(),
            guarded_input_tokens: rows.iter().map(|r| r.guarded_input_tokens).sum(),
            baseline_cost: rows.iter().map(|r| r.baseline_cost).sum(),
            guarded_cost: rows.iter().map(|r| r.guarded_cost).sum(),
            delta: rows.iter().map(|r| r.delta).sum(),
            parsimony: p.as_ref().map(|p| p.blended),
            parsimony_by_quadrant: p.map(|p| p.per_quadrant).unwrap_or_default(),
            audit_records: self.audit.written(),
        }
    }

    pub fn handle(&self, req: &GuardRequest) -> Result<GuardResponse, GuardError> {
        self.counters.lock().unwrap().requests += 1;
        let out = self.handle_inner(req);
        match &out {
            Err(GuardError::Blocked { .. }) => self.counters.lock().unwrap().blocked += 1,
            Err(_) => self.counters.lock().unwrap().failed += 1,
            Ok(_) => {}
        }
        out
    }

    fn handle_inner(&self, req: &GuardRequest) -> Result<GuardResponse, GuardError> {
        if req.session_id.trim().is_empty() {
            return Err(GuardError::at(
                Stage::Request,
                "session_id must not be empty",
            ));
        }
        if req.prompt.trim().is_empty() {
            return Err(GuardError::at(Stage::Request, "prompt must not be empty"));
        }
        let session = self.session(&req.session_id)?;
        let mut session = session.lock().unwrap();
        let session = &mut *session;
        let mut warnings = Vec::new();
        let policy = &self.config.compression.policy;

        // bootstrap
        let prompt_tokens = estimate_tokens(&req.prompt);
        let history = session
            .memory
            .bootstrap_within(session.memory.budget_tokens.saturating_sub(prompt_tokens));

        // scan + redact
        let escaped = escape_sigils(&req.prompt);
        let prompt_report = self.scanner.scan(&escaped);
        let history_report = self.scanner.scan(&history);
        let turn = session.memory.next_turn();
        let red_prompt = session
            .vaults
            .redact(&escaped, &prompt_report.spans, turn)
            .map_err(|e| GuardError::at(Stage::Redact, e))?;
        let red_history = session
            .vaults
            .redact(&history, &history_report.spans, turn)
            .map_err(|e| GuardError::at(Stage::Redact, e))?;

        // plan
        let (instruction, body) = split_prompt(&red_prompt.text, policy);
        let context = match (red_history.text.is_empty(), body.is_empty()) {
            (true, _) => body,
            (false, true) => red_history.text.clone(),
            (false, false) => format!("{}\n\n{body}", red_history.text),
        };
        let sub_plan = plan(&instruction, &context, &self.templates)
            .map_err(|e| GuardError::at(Stage::Plan, e))?;

        // per-task compress, assess, route, dispatch
        let mut routes: Vec<TaskRoute> = Vec::new();
        let mut audit: Vec<AuditRecord> = Vec::new();
        let mut stage_error: Option<GuardError> = None;
        let mut guarded_in = 0u64;
        let mut guarded_out = 0u64;
        let mut guarded_cost = 0.0;
        let capability = req.requested_capability.as_deref();
        let meta = RequestMeta {
            session_id: Some(req.session_id.clone()),
            tier: None,
            task_index: None,
        };
        let mut dispatcher = |task: &SubTask, payload: &str| -> TaskOutcome {
            let compressed = match self.compressor.compress(payload, policy) {
                Ok(r) => r,
                Err(CompressError::Backend { source, fallback }) => {
                    warnings.push(format!(
                        "compression backend failed, used extractive fallback: {source}"
                    ));
                    fallback
                }
            };
            let a = assess(
                &compressed.output,
                &self.scanner,
                self.config.router.settings.w_q,
            );
            let d = route(&a, &self.config.router, capability);
            let mut rec = AuditRecord {
                timestamp: timestamp(Utc::now()),
                session_id: req.session_id.clone(),
                task_index: task.index,
                payload_digest: d.payload_digest.clone(),
                decision: d.assigned,
                tier: d.assigned.tier(),
                risk_score: d.risk_score,
                reasons: d.reasons.clone(),
                outcome: AuditOutcome::Blocked,
                input_tokens: compressed.output_tokens,
                output_tokens: 0,
            };
            routes.push(TaskRoute {
                index: task.index,
                assigned: d.assigned,
                risk_score: d.risk_score,
                reasons: d.reasons.clone(),
                payload_tokens: compressed.output_tokens,
                compression_ratio: compressed.ratio_k,
            });
            if d.assigned == Assigned::Blocked {
                audit.push(rec);
                return TaskOutcome::Blocked(d.reasons.join(","));
            }
            let meta = RequestMeta {
                task_index: Some(task.index),
                ..meta.clone()
            };
            match dispatch(
                &d,
                &compressed.output,
                &self.endpoints,
                &self.config.router,
                &meta,
            ) {
                Ok(out) => {
                    rec.outcome = AuditOutcome::Dispatched;
                    rec.input_tokens = out.input_tokens;
                    rec.output_tokens = out.output_tokens;
                    audit.push(rec);
                    let price_ref = &self.config.router.tier(out.tier).price_ref;
                    let local = self.config.prices.get(price_ref).is_some_and(|p| p.local);
                    if !local {
                        guarded_in += out.input_tokens;
                        guarded_out += out.output_tokens;
                    }
                    match price(
                        out.input_tokens,
                        out.output_tokens,
                        price_ref,
                        &self.config.prices,
                    ) {
                        Ok(c) => guarded_cost += c,
                        Err(e) => stage_error = Some(GuardError::at(Stage::Ledger, e)),
                    }
                    TaskOutcome::Done(out.content)
                }
                Err(e) => {
                    rec.outcome = AuditOutcome::Failed;
                    audit.push(rec);
                    let msg = e.to_string();
                    if !matches!(e, DispatchError::Upstream { .. }) {
                        stage_error.get_or_insert_with(|| GuardError::at(Stage::Dispatch, &msg));
                    }
                    TaskOutcome::Failed(msg)
                }
            }
        };
        let exec = execute(&sub_plan, self.local.as_ref(), &mut dispatcher);

        let decision = DecisionSummary {
            assigned: routes.last().map(|r| r.assigned),
            max_risk_score: routes.iter().map(|r| r.risk_score).fold(0.0, f64::max),
            tasks: routes,
        };
        self.audit
            .append(&audit)
            .map_err(|e| GuardError::at(Stage::Audit, e))?;
        if let Some(e) = stage_error {
            return Err(e);
        }

        // assemble
        let raw_response = match exec.response {
            Some(r) => r,
            None => {
                let failed = exec.failure();
                if exec.blocked() {
                    let reasons = decision
                        .tasks
                        .iter()
                        .filter(|t| t.assigned == Assigned::Blocked)
                        .flat_map(|t| t.reasons.clone())
                        .collect();
                    return Err(GuardError::Blocked {
                        reasons,
                        decision: Box::new(decision),
                    });
                }
                let detail = failed
                    .and_then(|t| t.detail.clone())
                    .unwrap_or_else(|| "plan produced no response".into());
                let stage = match failed.map(|t| t.locality) {
                    Some(Locality::Tier(_)) => Stage::Dispatch,
                    _ => Stage::Assemble,
                };
                return Err(GuardError::at(stage, detail));
            }
        };

        // rehydrate
        let restored = session.vaults.rehydrate(
            &raw_response,
            &[VaultKind::Personal, VaultKind::Institutional],
        );
        for w in &restored.warnings {
            warnings.push(serde_json::to_string(w).unwrap_or_default());
        }
        let response = unescape_sigils(&restored.text);

        // memory
        let mut cx = Compaction {
            compressor: &self.compressor,
            policy,
            scanner: &self.scanner,
            vaults: &mut session.vaults,
        };
        for (role, content) in [
            (Role::User, red_prompt.text.as_str()),
            (Role::Assistant, raw_response.as_str()),
        ] {
            let entry = MemoryEntry::new(session.memory.next_turn(), role, content);
            let out = session
                .memory
                .push(entry, &mut cx)
                .map_err(|e: MemoryError| GuardError::at(Stage::Memory, e))?;
            warnings.extend(out.warning);
        }
        if let Some(dir) = &self.config.memory.dir {
            session
                .memory
                .save(dir, &req.session_id)
                .map_err(|e| GuardError::at(Stage::Memory, e))?;
        }

        // ledger
        let baseline_in = prompt_tokens + session.full_history_tokens;
        session.full_history_tokens += prompt_tokens + estimate_tokens(&response);
        let baseline_cost = price(
            baseline_in,
            guarded_out,
            &self.config.ledger.baseline_price_ref,
            &self.config.prices,
        )
        .map_err(|e| GuardError::at(Stage::Ledger, e))?;
        let row = LedgerRow::new(
            baseline_in,
            guarded_in,
            guarded_out,
            baseline_cost,
            guarded_cost,
            quadrant_tag(req.profile_hint, &prompt_report),
        );
        {
            let mut ledger = self.ledger.lock().unwrap();
            ledger.append(row.clone());
            if let Some(path) = &self.config.ledger.csv_path {
                let f =
                    std::fs::File::create(path).map_err(|e| GuardError::at(Stage::Ledger, e))?;
                ledger
                    .write_csv(f)
                    .map_err(|e| GuardError::at(Stage::Ledger, e))?;
            }
        }

        Ok(GuardResponse {
            response,
            decision,
            ledger_row: row,
            plan_summary: PlanSummary {
                template: sub_plan.template.clone(),
                task_count: sub_plan.tasks.len(),
                localities: sub_plan.tasks.iter().map(|t| t.locality).collect(),
            },
            warnings,
        })
    }
}

/// `<profile>/<typology>` where the typology is the one with most detected
/// secrets in the prompt (`none` without secrets).
fn quadrant_tag(profile: Option<Profile>, report: &crate::scanner::ScanReport) -> String {
    let p = match profile {
        Some(Profile::Lazy) => "lazy",
        Some(Profile::Expert) => "expert",
        None => "unknown",
    };
    let per = report
        .secrets()
        .filter(|s| s.typology() == Typology::Personal)
        .count();
    let ins = report
        .secrets()
        .filter(|s| s.typology() == Typology::Institutional)
        .count();
    let t = match (per, ins) {
        (0, 0) => "none",
        (p, i) if p >= i => "personal",
        _ => "institutional",
    };
    format!("{p}/{t}")
}
