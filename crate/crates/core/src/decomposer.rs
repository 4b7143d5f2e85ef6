//! Rule-based task decomposition.
//!
//! A prompt is split into an instruction and a context. When the instruction
//! matches a template, the work becomes a small dependency chain in which the
//! bulky context is only ever read by local tasks, and the cloud-bound task
//! sees the instruction plus upstream outputs. Anything else becomes a single
//! `Generate` task over the whole prompt.
//!
//! Template registry format (JSON):
//!
//! ```json
//! {"version": 1, "templates": [{
//!   "name": "log-triage",
//!   "match_all": ["root cause", "translate", "email"],
//!   "tasks": [
//!     {"kind": "extract", "locality": "local", "op": "error_line", "payload": "{{context}}"},
//!     {"kind": "generate", "locality": {"tier": 1}, "payload": "{{instruction}} {{task:0}}", "depends_on": [0]}
//!   ]
//! }]}
//! ```
//!
//! `match_all` keywords are matched case-insensitively against the
//! instruction. Payload slots: `{{instruction}}`, `{{context}}` and
//! `{{task:<i>}}` (output of an earlier task listed in `depends_on`).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compressor::CompressionPolicy;
use crate::costmodel::estimate_tokens;

pub const DEFAULT_TEMPLATES: &str = include_str!("../templates/default.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Extract,
    Transform,
    Generate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    Local,
    /// Cloud-bound; the number is the preferred tier; the router has the
    /// final say.
    Tier(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTask {
    pub index: usize,
    pub kind: TaskKind,
    pub locality: Locality,
    /// Local operation name; empty for cloud-bound tasks.
    #[serde(default)]
    pub op: String,
    pub payload: String,
    #[serde(default)]
    pub depends_on: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTaskPlan {
    pub tasks: Vec<SubTask>,
    pub cloud_payload_tokens: u64,
    pub local_payload_tokens: u64,
    /// Name of the matched template, `None` for the single-task fallback.
    pub template: Option<String>,
}

impl SubTaskPlan {
    fn new(tasks: Vec<SubTask>, template: Option<String>) -> Self {
        let (mut cloud, mut local) = (0, 0);
        for t in &tasks {
            let n = estimate_tokens(&t.payload);
            match t.locality {
                Locality::Local => local += n,
                Locality::Tier(_) => cloud += n,
            }
        }
        Self {
            tasks,
            cloud_payload_tokens: cloud,
            local_payload_tokens: local,
            template,
        }
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("template file: {0}")]
    Registry(String),
    #[error("template {template:?} task {index}: {message}")]
    Template {
        template: String,
        index: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSkeleton {
    pub kind: TaskKind,
    pub locality: Locality,
    #[serde(default)]
    pub op: String,
    pub payload: String,
    #[serde(default)]
    pub depends_on: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub name: String,
    pub match_all: Vec<String>,
    pub tasks: Vec<TaskSkeleton>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRegistry {
    pub version: u32,
    pub templates: Vec<Template>,
}

static SLOT: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\{\{(instruction|context|task:(\d+))\}\}").unwrap());

impl TemplateRegistry {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("built-in templates are valid")
    }

    pub fn empty() -> Self {
        Self {
            version: 1,
            templates: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let reg: Self =
            serde_json::from_str(text).map_err(|e| PlanError::Registry(e.to_string()))?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PlanError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PlanError::Registry(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<(), PlanError> {
        if self.version != 1 {
            return Err(PlanError::Registry(format!(
                "unsupported version {}",
                self.version
            )));
        }
        for t in &self.templates {
            let err = |index, message: &str| PlanError::Template {
                template: t.name.clone(),
                index,
                message: message.to_string(),
            };
            if t.tasks.is_empty() {
                return Err(err(0, "template has no tasks"));
            }
            if t.match_all.iter().any(|k| k.trim().is_empty()) {
                return Err(err(0, "empty match keyword"));
            }
            for (i, task) in t.tasks.iter().enumerate() {
                if task.depends_on.iter().any(|&d| d >= i) {
                    return Err(err(i, "depends_on must reference earlier tasks"));
                }
                for caps in SLOT.captures_iter(&task.payload) {
                    if let Some(n) = caps.get(2) {
                        let n: usize = n.as_str().parse().map_err(|_| err(i, "bad task slot"))?;
                        if !task.depends_on.contains(&n) {
                            return Err(err(i, "task slot not listed in depends_on"));
                        }
                    }
                }
                if task.locality == Locality::Local && task.op.is_empty() {
                    return Err(err(i, "local task needs an op"));
                }
                if let Locality::Tier(n) = task.locality {
                    if n > 3 {
                        return Err(err(i, "tier must be 0..=3"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn find(&self, instruction: &str) -> Option<&Template> {
        let lower = instruction.to_lowercase();
        self.templates.iter().find(|t| {
            t.match_all
                .iter()
                .all(|k| lower.contains(&k.to_lowercase()))
        })
    }
}

/// Splits a prompt into (instruction, context). Keep-marker lines form the
/// instruction; without any, the first non-blank line does. The context is
/// everything else, in order.
pub fn split_prompt<'a>(prompt: &'a str, policy: &CompressionPolicy) -> (String, String) {
    let lines: Vec<&'a str> = prompt.split('\n').collect();
    let is_marker = |l: &str| {
        let t = l.trim_start();
        policy
            .keep_markers
            .iter()
            .any(|m| !m.is_empty() && t.starts_with(m.as_str()))
    };
    let picked: Vec<usize> = if lines.iter().any(|l| is_marker(l)) {
        (0..lines.len()).filter(|&i| is_marker(lines[i])).collect()
    } else {
        lines
            .iter()
            .position(|l| !l.trim().is_empty())
            .into_iter()
            .collect()
    };
    let instruction = picked
        .iter()
        .map(|&i| lines[i].trim())
        .collect::<Vec<_>>()
        .join("\n");
    let context = (0..lines.len())
        .filter(|i| !picked.contains(i))
        .map(|i| lines[i])
        .collect::<Vec<_>>()
        .join("\n");
    (instruction, context.trim_matches('\n').to_string())
}

/// Builds a plan. `prompt` is the user's instruction; `context` the
/// material it operates on (may be empty).
pub fn plan(
    prompt: &str,
    context: &str,
    registry: &TemplateRegistry,
) -> Result<SubTaskPlan, PlanError> {
    if prompt.trim().is_empty() {
        return Err(PlanError::EmptyPrompt);
    }
    if !context.trim().is_empty() {
        if let Some(t) = registry.find(prompt) {
            let tasks = t
                .tasks
                .iter()
                .enumerate()
                .map(|(index, s)| SubTask {
                    index,
                    kind: s.kind,
                    locality: s.locality,
                    op: s.op.clone(),
                    payload: fill_static(&s.payload, prompt, context),
                    depends_on: s.depends_on.clone(),
                })
                .collect();
            return Ok(SubTaskPlan::new(tasks, Some(t.name.clone())));
        }
    }
    let payload = if context.is_empty() {
        prompt.to_string()
    } else {
        format!("{prompt}\n{context}")
    };
    Ok(SubTaskPlan::new(
        vec![SubTask {
            index: 0,
            kind: TaskKind::Generate,
            locality: Locality::Tier(1),
            op: String::new(),
            payload,
            depends_on: Vec::new(),
        }],
        None,
    ))
}

/// Single pass, so user text is never re-expanded.
fn fill_static(template: &str, instruction: &str, context: &str) -> String {
    SLOT.replace_all(template, |c: &regex::Captures<'_>| match &c[1] {
        "instruction" => instruction.to_string(),
        "context" => context.to_string(),
        other => format!("{{{{{other}}}}}"),
    })
    .into_owned()
}

fn fill_tasks(payload: &str, deps: &[usize], outputs: &BTreeMap<usize, String>) -> String {
    static TASK_SLOT: Lazy<Regex> = Lazy::new(|| Regex::new(r"\{\{task:(\d+)\}\}").unwrap());
    TASK_SLOT
        .replace_all(payload, |c: &regex::Captures<'_>| {
            let n: usize = c[1].parse().unwrap_or(usize::MAX);
            match outputs.get(&n) {
                Some(out) if deps.contains(&n) => out.clone(),
                _ => c[0].to_string(),
            }
        })
        .into_owned()
}

/// Runs local operations.
pub trait LocalExecutor: Send + Sync {
    fn run(&self, op: &str, input: &str) -> Result<String, String>;
}

type TransformHook = dyn Fn(&str) -> String + Send + Sync;

/// Built-in local operations: `error_line` picks the first FATAL/CRITICAL
/// line, else the first ERROR line, else the last non-blank line;
/// `translate` and `identity` pass text through the transform hook
/// (identity unless one is installed).
#[derive(Clone, Default)]
pub struct RuleExecutor {
    transform: Option<Arc<TransformHook>>,
}

impl std::fmt::Debug for RuleExecutor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuleExecutor")
            .field("transform", &self.transform.is_some())
            .finish()
    }
}

impl RuleExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_transform<F>(f: F) -> Self
    where
        F: Fn(&str) -> String + Send + Sync + 'static,
    {
        Self {
            transform: Some(Arc::new(f)),
        }
    }
}

static SEVERE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\b(?:FATAL|CRITICAL)\b").unwrap());
static ERROR: Lazy<Regex> = Lazy::new(|| Regex::new(r"\bERROR\b").unwrap());

pub fn error_line(text: &str) -> &str {
    let lines = || text.lines().filter(|l| !l.trim().is_empty());
    lines()
        .find(|l| SEVERE.is_match(l))
        .or_else(|| lines().find(|l| ERROR.is_match(l)))
        .or_else(|| lines().next_back())
        .map(str::trim)
        .unwrap_or("")
}

impl LocalExecutor for RuleExecutor {
    fn run(&self, op: &str, input: &str) -> Result<String, String> {
        match op {
            "error_line" => Ok(error_line(input).to_string()),
            "translate" | "identity" => Ok(match &self.transform {
                Some(f) => f(input),
                None => input.to_string(),
            }),
            other => Err(format!("unknown local op {other:?}")),
        }
    }
}

/// Result of handing one cloud-bound payload to the caller's dispatcher.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskOutcome {
    Done(String),
    Blocked(String),
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Done,
    Blocked,
    Failed,
    /// Not run because a dependency did not complete.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub index: usize,
    pub kind: TaskKind,
    pub locality: Locality,
    pub status: TaskStatus,
    /// Payload after slot substitution; empty when skipped.
    pub payload_tokens: u64,
    pub output: Option<String>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    /// Output of the last task, when every task completed.
    pub response: Option<String>,
    pub transcripts: Vec<Transcript>,
}

impl Execution {
    pub fn blocked(&self) -> bool {
        self.transcripts
            .iter()
            .any(|t| t.status == TaskStatus::Blocked)
    }

    pub fn failure(&self) -> Option<&Transcript> {
        self.transcripts
            .iter()
            .find(|t| matches!(t.status, TaskStatus::Blocked | TaskStatus::Failed))
    }
}

/// Runs tasks in index order (a topological order by construction). Local
/// tasks go to `local`; cloud-bound tasks to `dispatch`, which is expected to
/// apply the outbound gate. A task whose dependency did not finish is skipped.
pub fn execute(
    plan: &SubTaskPlan,
    local: &dyn LocalExecutor,
    dispatch: &mut dyn FnMut(&SubTask, &str) -> TaskOutcome,
) -> Execution {
    let mut outputs: BTreeMap<usize, String> = BTreeMap::new();
    let mut transcripts = Vec::with_capacity(plan.tasks.len());
    for task in &plan.tasks {
        let mut t = Transcript {
            index: task.index,
            kind: task.kind,
            locality: task.locality,
            status: TaskStatus::Skipped,
            payload_tokens: 0,
            output: None,
            detail: None,
        };
        if let Some(d) = task.depends_on.iter().find(|d| !outputs.contains_key(d)) {
            t.detail = Some(format!("dependency {d} did not complete"));
            transcripts.push(t);
            continue;
        }
        let payload = fill_tasks(&task.payload, &task.depends_on, &outputs);
        t.payload_tokens = estimate_tokens(&payload);
        let outcome = match task.locality {
            Locality::Local => match local.run(&task.op, &payload) {
                Ok(out) => TaskOutcome::Done(out),
                Err(e) => TaskOutcome::Failed(e),
            },
            Locality::Tier(_) => dispatch(task, &payload),
        };
        match outcome {
            TaskOutcome::Done(out) => {
                t.status = TaskStatus::Done;
                t.output = Some(out.clone());
                outputs.insert(task.index, out);
            }
            TaskOutcome::Blocked(why) => {
                t.status = TaskStatus::Blocked;
                t.detail = Some(why);
            }
            TaskOutcome::Failed(why) => {
                t.status = TaskStatus::Failed;
                t.detail = Some(why);
            }
        }
        transcripts.push(t);
    }
    let response = plan
        .tasks
        .last()
        .and_then(|last| outputs.get(&last.index).cloned())
        .filter(|_| transcripts.iter().all(|t| t.status == TaskStatus::Done));
    Execution {
        response,
        transcripts,
    }
}
