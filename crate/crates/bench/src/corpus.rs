//! The 2×2 benchmark corpus: Lazy/Expert prompts × Personal/Institutional
//! secrets.
//!
//! Expert samples are short structured prompts with a little pasted
//! redundancy. Lazy samples are verbose log dumps in which a fixed fraction
//! of lines is boilerplate and most secrets sit deep in the dump.

use std::fmt;
use std::io::{BufRead, Write};

use contextguard::costmodel::estimate_tokens;
use contextguard::pipeline::Profile;
use contextguard::scanner::SecretClass;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::secrets::{self, Secret, INSTITUTIONAL, PERSONAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SecretKind {
    Personal,
    Institutional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadrant {
    pub profile: Profile,
    pub kind: SecretKind,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::new(Profile::Lazy, SecretKind::Personal),
        Quadrant::new(Profile::Lazy, SecretKind::Institutional),
        Quadrant::new(Profile::Expert, SecretKind::Personal),
        Quadrant::new(Profile::Expert, SecretKind::Institutional),
    ];

    pub const fn new(profile: Profile, kind: SecretKind) -> Self {
        Self { profile, kind }
    }

    pub fn profile_tag(self) -> &'static str {
        match self.profile {
            Profile::Lazy => "lazy",
            Profile::Expert => "expert",
        }
    }

    pub fn kind_tag(self) -> &'static str {
        match self.kind {
            SecretKind::Personal => "personal",
            SecretKind::Institutional => "institutional",
        }
    }

    fn short(self) -> &'static str {
        match (self.profile, self.kind) {
            (Profile::Lazy, SecretKind::Personal) => "lp",
            (Profile::Lazy, SecretKind::Institutional) => "li",
            (Profile::Expert, SecretKind::Personal) => "ep",
            (Profile::Expert, SecretKind::Institutional) => "ei",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.profile_tag(), self.kind_tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedSecret {
    pub class: SecretClass,
    pub surface: String,
    /// Byte offset of `surface` in the prompt.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub id: String,
    pub quadrant: Quadrant,
    pub prompt_text: String,
    pub injected_secrets: Vec<InjectedSecret>,
    /// Share of non-blank dump lines that are boilerplate (Lazy only).
    pub boilerplate_fraction: Option<f64>,
    pub seed: u64,
}

impl BenchmarkSample {
    pub fn surfaces(&self) -> Vec<&str> {
        self.injected_secrets
            .iter()
            .map(|s| s.surface.as_str())
            .collect()
    }

    pub fn tokens(&self) -> u64 {
        estimate_tokens(&self.prompt_text)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("sample {id}: secret {class:?} not found at offset {offset}")]
    Offset {
        id: String,
        class: SecretClass,
        offset: usize,
    },
    #[error("sample {id}: {tokens} tokens is outside the {profile:?} bound")]
    Size {
        id: String,
        profile: Profile,
        tokens: u64,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Generator knobs. The defaults are tuned so that the extractive
/// compressor lands in the reduction bands the benchmark reports against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSettings {
    /// Samples per quadrant, in [`Quadrant::ALL`] order.
    pub counts: [usize; 4],
    pub personal_secrets: usize,
    pub institutional_secrets: usize,
    /// Share of Lazy dump lines that are boilerplate.
    pub boilerplate_fraction: f64,
    /// Share of Lazy secrets placed at least [`DEEP_LINE`] lines down.
    pub deep_fraction: f64,
    /// Share of Lazy secrets written into boilerplate lines.
    pub boilerplate_secret_fraction: f64,
    pub lazy_min_tokens: u64,
    pub expert_max_tokens: u64,
}

/// Lines from the top beyond which a Lazy secret counts as buried.
pub const DEEP_LINE: usize = 40;

impl Default for GenSettings {
    fn default() -> Self {
        Self::paper40()
    }
}

impl GenSettings {
    /// 40 samples, 10 per quadrant: 60 personal and 80 institutional
    /// secrets.
    pub fn paper40() -> Self {
        Self {
            counts: [10; 4],
            personal_secrets: 3,
            institutional_secrets: 4,
            boilerplate_fraction: 0.70,
            deep_fraction: 0.75,
            boilerplate_secret_fraction: 0.25,
            lazy_min_tokens: 2000,
            expert_max_tokens: 300,
        }
    }

    pub fn scaled(mut self, k: usize) -> Self {
        for c in &mut self.counts {
            *c *= k;
        }
        self
    }

    fn secrets_for(&self, kind: SecretKind) -> usize {
        match kind {
            SecretKind::Personal => self.personal_secrets,
            SecretKind::Institutional => self.institutional_secrets,
        }
    }
}

/// Role of one physical line in a generated prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineKind {
    Instruction,
    Content,
    Boilerplate,
    Blank,
    /// Exact repeat of an earlier content line.
    Repeat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub text: String,
    pub kind: LineKind,
}

/// Lines under construction; a line may carry one secret at a known column.
struct Draft {
    lines: Vec<(Line, Option<(Secret, usize)>)>,
}

impl Draft {
    fn new() -> Self {
        Self { lines: Vec::new() }
    }

    fn push(&mut self, kind: LineKind, text: impl Into<String>) {
        self.lines.push((
            Line {
                text: text.into(),
                kind,
            },
            None,
        ));
    }

    fn push_secret(&mut self, kind: LineKind, before: &str, secret: Secret, after: &str) {
        let text = format!("{before}{}{}{after}", secret.lead, secret.surface);
        let col = before.len() + secret.lead.len();
        self.lines.push((Line { text, kind }, Some((secret, col))));
    }

    fn finish(self) -> (String, Vec<InjectedSecret>, Vec<Line>) {
        let mut text = String::new();
        let mut injected = Vec::new();
        let mut lines = Vec::new();
        for (i, (line, secret)) in self.lines.into_iter().enumerate() {
            if i > 0 {
                text.push('\n');
            }
            if let Some((s, col)) = secret {
                injected.push(InjectedSecret {
                    class: s.class,
                    surface: s.surface,
                    offset: text.len() + col,
                });
            }
            text.push_str(&line.text);
            // multi-line secrets are split into physical lines
            for part in line.text.split('\n') {
                lines.push(Line {
                    text: part.to_string(),
                    kind: line.kind,
                });
            }
        }
        (text, injected, lines)
    }
}

/// Deterministic corpus for `seed`.
pub fn generate(seed: u64, settings: &GenSettings) -> Vec<BenchmarkSample> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (q, &count) in Quadrant::ALL.iter().zip(&settings.counts) {
        for i in 0..count {
            let sample_seed: u64 = master.gen();
            out.push(generate_sample(
                format!("{}-{i:04}", q.short()),
                *q,
                sample_seed,
                settings,
            ));
        }
    }
    out
}

pub fn generate_sample(
    id: String,
    quadrant: Quadrant,
    seed: u64,
    settings: &GenSettings,
) -> BenchmarkSample {
    let (prompt_text, injected_secrets, _, fraction) = build(quadrant, seed, settings);
    BenchmarkSample {
        id,
        quadrant,
        prompt_text,
        injected_secrets,
        boilerplate_fraction: fraction,
        seed,
    }
}

/// The physical lines of a sample with their roles, regenerated from its
/// seed.
pub fn sample_lines(sample: &BenchmarkSample, settings: &GenSettings) -> Vec<Line> {
    build(sample.quadrant, sample.seed, settings).2
}

type Built = (String, Vec<InjectedSecret>, Vec<Line>, Option<f64>);

fn build(quadrant: Quadrant, seed: u64, settings: &GenSettings) -> Built {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: &[SecretClass] = match quadrant.kind {
        SecretKind::Personal => &PERSONAL,
        SecretKind::Institutional => &INSTITUTIONAL,
    };
    let n = settings.secrets_for(quadrant.kind);
    match quadrant.profile {
        Profile::Expert => {
            // bulky key blocks are not something a careful prompt author pastes
            let pool: Vec<SecretClass> = pool
                .iter()
                .copied()
                .filter(|c| *c != SecretClass::PemPrivateKeyBlock)
                .collect();
            let classes = choose_classes(&mut rng, &pool, n);
            let (t, s, l) = expert(&mut rng, quadrant.kind, &classes, settings).finish();
            (t, s, l, None)
        }
        Profile::Lazy => {
            let classes = choose_classes(&mut rng, pool, n);
            let (draft, fraction) = lazy(&mut rng, quadrant.kind, &classes, settings);
            let (t, s, l) = draft.finish();
            (t, s, l, Some(fraction))
        }
    }
}

fn choose_classes<R: Rng>(rng: &mut R, pool: &[SecretClass], n: usize) -> Vec<SecretClass> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut round = pool.to_vec();
        round.shuffle(rng);
        out.extend(round.into_iter().take(n - out.len()));
    }
    out
}

const EXPERT_TASKS_PER: &[&str] = &[
    "TASK: draft a reply to the customer below confirming the refund and the next billing date.",
    "TASK: check the account details below for inconsistencies and list what support should verify.",
    "TASK: write a short, polite letter asking the patient below to confirm their contact details.",
    "TASK: prepare a case summary for the fraud team from the notes below.",
];
const EXPERT_TASKS_INS: &[&str] = &[
    "TASK: review the deployment notes below and list the steps that could break the rollout.",
    "TASK: explain why the service below fails its health check and propose a fix.",
    "TASK: write a runbook entry for rotating the credentials referenced below.",
    "TASK: check the network settings below and point out anything that blocks the migration.",
];
const EXPERT_QUESTIONS: &[&str] = &[
    "QUESTION: what is the single most likely cause, and how would you confirm it?",
    "QUESTION: which step should happen first, and why?",
    "QUESTION: what would you change before this goes to production?",
    "QUESTION: what is missing from these notes?",
];
const EXPERT_FACTS_PER: &[&str] = &[
    "- the customer opened the ticket three days ago and has called twice since",
    "- the refund was approved by the team lead but has not reached the account yet",
    "- the account was migrated to the new billing system last month",
    "- previous letters were returned as undeliverable",
    "- the customer prefers contact by email rather than phone",
    "- a duplicate charge appears on the last two statements",
    "- the appointment was moved twice at the request of the clinic",
    "- the address on file does not match the one given on the phone",
    "- the case has been open for longer than the thirty day target",
    "- a partial payment was received but not matched to the invoice",
];
const EXPERT_FACTS_INS: &[&str] = &[
    "- the service runs three replicas behind the shared load balancer",
    "- the last release changed the connection pool size from 20 to 50",
    "- health checks time out after five seconds under load",
    "- the config map is mounted read-only into every pod",
    "- the database migration ran successfully in staging",
    "- the credentials were last rotated more than ninety days ago",
    "- the firewall rule for the replica subnet was added by hand",
    "- error rates rise only during the nightly batch window",
    "- the sidecar proxy retries failed calls up to three times",
    "- the cache is warmed from a snapshot taken every six hours",
];
const EXPERT_CONSTRAINTS: &[&str] = &[
    "Constraints: answer in at most five bullet points and quote the line you rely on.",
    "Constraints: keep it under 150 words and do not invent details that are not in the notes.",
    "Constraints: use plain language, no jargon, and flag anything you are unsure about.",
];
const EXPERT_EXCERPT_INFO: &[&str] = &[
    "2024-05-02T09:14:03Z INFO  worker started, pid 4412, config reloaded",
    "2024-05-02T09:14:04Z INFO  health probe ok, latency 12ms",
    "2024-05-02T09:14:05Z DEBUG retry budget refreshed, 10 tokens",
];
const EXPERT_EXCERPT_WARN: &[&str] = &[
    "2024-05-02T09:14:09Z WARN  request queue above 80 percent for 30s",
    "2024-05-02T09:14:11Z ERROR handler timed out after 5000ms",
];
const SEPARATORS: &[&str] = &[
    "----------------------------------------",
    "========================================",
    "########################################",
];

fn expert_secret_line<R: Rng>(rng: &mut R, s: Secret) -> (String, Secret, String) {
    let noun = secrets::noun(s.class);
    let (before, after) = match rng.gen_range(0..3) {
        0 => (
            format!("- the {noun} on file is "),
            " and was confirmed last week".to_string(),
        ),
        1 => (format!("- relevant {noun}: "), String::new()),
        _ => (
            format!("- use the {noun} "),
            " when you reference this case".to_string(),
        ),
    };
    (before, s, after)
}

fn expert<R: Rng>(
    rng: &mut R,
    kind: SecretKind,
    classes: &[SecretClass],
    settings: &GenSettings,
) -> Draft {
    let (tasks, facts) = match kind {
        SecretKind::Personal => (EXPERT_TASKS_PER, EXPERT_FACTS_PER),
        SecretKind::Institutional => (EXPERT_TASKS_INS, EXPERT_FACTS_INS),
    };
    let sep = *SEPARATORS.choose(rng).unwrap();
    let constraints = *EXPERT_CONSTRAINTS.choose(rng).unwrap();
    let mut facts: Vec<&str> = facts.to_vec();
    facts.shuffle(rng);
    let n_facts = rng.gen_range(3..=6);
    let secret_lines: Vec<_> = classes
        .iter()
        .map(|&c| {
            let s = secrets::generate(c, rng);
            expert_secret_line(rng, s)
        })
        .collect();

    // body: facts and secret lines interleaved
    let mut body: Vec<Option<usize>> = (0..n_facts).map(|_| None).collect();
    for i in 0..secret_lines.len() {
        let at = rng.gen_range(0..=body.len());
        body.insert(at, Some(i));
    }
    let repeats = rng.gen_range(1..=3);

    let mut d = Draft::new();
    d.push(LineKind::Instruction, *tasks.choose(rng).unwrap());
    d.push(LineKind::Boilerplate, sep);
    d.push(LineKind::Content, "Context:");
    let mut fact_iter = facts.iter();
    let mut fact_lines = Vec::new();
    for slot in &body {
        match slot {
            Some(i) => {
                let (b, s, a) = secret_lines[*i].clone();
                d.push_secret(LineKind::Content, &b, s, &a);
            }
            None => {
                let f = *fact_iter.next().unwrap();
                fact_lines.push(f);
                d.push(LineKind::Content, f);
            }
        }
    }
    d.push(LineKind::Content, constraints);
    d.push(LineKind::Blank, "");
    d.push(LineKind::Content, "Log excerpt:");
    let mut info: Vec<&str> = EXPERT_EXCERPT_INFO.to_vec();
    info.shuffle(rng);
    for l in info.iter().take(rng.gen_range(1..=2)) {
        d.push(LineKind::Boilerplate, *l);
    }
    d.push(LineKind::Content, *EXPERT_EXCERPT_WARN.choose(rng).unwrap());
    d.push(LineKind::Boilerplate, sep);
    for f in fact_lines.iter().take(repeats) {
        d.push(LineKind::Repeat, *f);
    }
    if rng.gen_bool(0.5) {
        d.push(LineKind::Repeat, constraints);
    }
    d.push(LineKind::Blank, "");
    d.push(
        LineKind::Instruction,
        *EXPERT_QUESTIONS.choose(rng).unwrap(),
    );

    // stay inside the Expert size bound
    while estimate_tokens(&draft_text(&d)) > settings.expert_max_tokens {
        let repeated = |t: &str| fact_lines.iter().take(repeats).any(|f| *f == t);
        let fact = d.lines.iter().position(|(l, s)| {
            l.kind == LineKind::Content
                && s.is_none()
                && l.text.starts_with("- ")
                && !repeated(&l.text)
        });
        let repeat = d
            .lines
            .iter()
            .rposition(|(l, _)| l.kind == LineKind::Repeat);
        match fact.or(repeat) {
            Some(pos) => {
                d.lines.remove(pos);
            }
            None => break,
        }
    }
    d
}

fn draft_text(d: &Draft) -> String {
    d.lines
        .iter()
        .map(|(l, _)| l.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

const LAZY_ASKS_PER: &[&str] = &[
    "hey, the crm sync has been acting up all week and customers keep complaining, can you look through this export and tell me what is going on?",
    "pasting the helpdesk log from this morning below, no idea what half of it means, can you figure out why the refunds are stuck?",
    "our booking system keeps failing for some patients, here is everything from the log viewer, please help me understand what is wrong",
];
const LAZY_ASKS_INS: &[&str] = &[
    "the nightly deploy broke again, here is the whole log dump, can you tell me what went wrong and what i should do about it?",
    "something is wrong with the payment workers since yesterday, dumping the full service log below, please figure it out",
    "can you go through this log and tell me why the export job keeps crashing? i just copied everything from the console",
];
const SERVICES_PER: &[&str] = &[
    "crm-sync",
    "helpdesk",
    "booking-api",
    "notify",
    "refund-worker",
];
const SERVICES_INS: &[&str] = &[
    "deploy-agent",
    "payment-worker",
    "export-job",
    "gateway",
    "scheduler",
];
const BOILER: &[&str] = &[
    "{ts} INFO  {svc} heartbeat ok seq={n} uptime={ms}s",
    "{ts} DEBUG {svc} cache lookup key=k{hex} hit=true ttl={n}s",
    "{ts} INFO  {svc} polling queue depth={n} consumers=4",
    "[{ts}] TRACE {svc}: scheduler tick {n}, nothing due",
    "{ts} DEBUG {svc} gc pause {n}us, heap {ms}mb",
    "{ts} INFO  {svc} request {hex} completed status=200 in {n}ms",
    "{ts}",
    "------------------------------------------------------------",
];
const CONTENT_PER: &[&str] = &[
    "{ts} WARN  {svc} ticket {n} reopened by the customer because the previous resolution did not address the refund",
    "{ts} WARN  {svc} contact record {hex} has conflicting addresses between the billing and support systems",
    "{ts} ERROR {svc} refund batch {n} rejected by the payment provider with status 422 unprocessable entity",
    "{ts} WARN  {svc} appointment {n} rescheduled for the third time, reminder message queued for delivery",
    "{ts} ERROR {svc} could not match incoming payment {hex} to any open invoice, parking it for manual review",
    "{ts} WARN  {svc} sync of customer segment {n} took {ms}ms which exceeds the agreed processing window",
];
const CONTENT_INS: &[&str] = &[
    "{ts} WARN  {svc} request {hex} took {ms}ms, exceeding the latency budget for route /api/v2/orders",
    "{ts} ERROR {svc} upstream call failed after {n} retries: connection reset by peer while reading the body",
    "{ts} WARN  {svc} job {hex} exited with status {n}; partial output written to /var/log/{svc}/last.out",
    "{ts} ERROR {svc} schema check failed on table batch_{n}: column amount expected numeric, found text",
    "    at com.acme.{svc}.worker.process(Worker.java:{n}) while handling message {hex} from the queue",
    "{ts} WARN  {svc} connection pool exhausted ({n} of {n} in use), new requests are waiting for a free slot",
];

struct Filler<'a> {
    svc: &'a str,
    clock: u32,
}

impl Filler<'_> {
    fn ts<R: Rng>(&mut self, rng: &mut R) -> String {
        self.clock += rng.gen_range(1..4);
        let c = self.clock;
        format!(
            "2024-05-{:02}T{:02}:{:02}:{:02}Z",
            2 + c / 86_400,
            c / 3600 % 24,
            c / 60 % 60,
            c % 60
        )
    }

    fn fill<R: Rng>(&mut self, rng: &mut R, template: &str) -> String {
        let ts = self.ts(rng);
        template
            .replace("{ts}", &ts)
            .replace("{svc}", self.svc)
            .replace("{n}", &rng.gen_range(2..999).to_string())
            .replace("{ms}", &rng.gen_range(1200..9000).to_string())
            .replace("{hex}", &format!("{:06x}", rng.gen_range(0..0xff_ffffu32)))
    }
}

fn lazy<R: Rng>(
    rng: &mut R,
    kind: SecretKind,
    classes: &[SecretClass],
    settings: &GenSettings,
) -> (Draft, f64) {
    let (asks, services, content) = match kind {
        SecretKind::Personal => (LAZY_ASKS_PER, SERVICES_PER, CONTENT_PER),
        SecretKind::Institutional => (LAZY_ASKS_INS, SERVICES_INS, CONTENT_INS),
    };
    let mut f = Filler {
        svc: services.choose(rng).unwrap(),
        clock: rng.gen_range(0..30_000),
    };
    // total dump lines: enough to clear the token floor with margin
    let target_tokens = settings.lazy_min_tokens + rng.gen_range(100..600);
    let avg_line = 0.70 * 48.0 + 0.30 * 118.0 + 1.0;
    let total = ((target_tokens * 4) as f64 / avg_line).ceil() as usize + 8;
    let n_boiler = (total as f64 * settings.boilerplate_fraction).round() as usize;
    let mut kinds: Vec<LineKind> = std::iter::repeat(LineKind::Boilerplate)
        .take(n_boiler)
        .chain(std::iter::repeat(LineKind::Content).take(total - n_boiler))
        .collect();
    kinds.shuffle(rng);
    // the last line is content so the tail pin keeps nothing extra
    if let Some(i) = kinds.iter().rposition(|k| *k == LineKind::Content) {
        let last = kinds.len() - 1;
        kinds.swap(i, last);
    }

    // pick host lines for the secrets
    let mut slots: Vec<(usize, Secret)> = Vec::new();
    let mut taken = std::collections::HashSet::new();
    for &class in classes {
        let deep = rng.gen_bool(settings.deep_fraction);
        let in_boiler = rng.gen_bool(settings.boilerplate_secret_fraction)
            && class != SecretClass::PemPrivateKeyBlock;
        let want = if in_boiler {
            LineKind::Boilerplate
        } else {
            LineKind::Content
        };
        let lo = if deep { DEEP_LINE } else { 1 };
        let hi = if deep {
            kinds.len() - 1
        } else {
            DEEP_LINE.min(kinds.len() - 1)
        };
        let candidates: Vec<usize> = (lo..hi)
            .filter(|&i| kinds[i] == want && !taken.contains(&i))
            .collect();
        let i = *candidates.choose(rng).expect("dump is large enough");
        taken.insert(i);
        slots.push((i, secrets::generate(class, rng)));
    }

    let mut d = Draft::new();
    d.push(LineKind::Instruction, *asks.choose(rng).unwrap());
    for (i, k) in kinds.iter().enumerate() {
        if let Some(pos) = slots.iter().position(|(at, _)| *at == i) {
            let (_, s) = slots.remove(pos);
            let ts = f.ts(rng);
            let noun = secrets::noun(s.class);
            let svc = f.svc;
            if *k == LineKind::Boilerplate {
                d.push_secret(
                    *k,
                    &format!("{ts} DEBUG {svc} loaded {noun} "),
                    s,
                    " from environment",
                );
            } else if s.class == SecretClass::PemPrivateKeyBlock {
                d.push_secret(
                    *k,
                    &format!(
                        "{ts} ERROR {svc} refusing to start, unexpected key material in config:\n"
                    ),
                    s,
                    "",
                );
            } else {
                d.push_secret(
                    *k,
                    &format!("{ts} ERROR {svc} request rejected for {noun} "),
                    s,
                    &format!(", retry {} of 3 scheduled", rng.gen_range(1..4)),
                );
            }
            continue;
        }
        let template = match k {
            LineKind::Boilerplate => *BOILER.choose(rng).unwrap(),
            _ => *content.choose(rng).unwrap(),
        };
        d.push(*k, f.fill(rng, template));
    }
    let fraction = n_boiler as f64 / total as f64;
    (d, fraction)
}

/// Checks every sample's secrets sit at their recorded offsets and its size
/// matches its profile.
pub fn self_check(samples: &[BenchmarkSample], settings: &GenSettings) -> Result<(), CorpusError> {
    for s in samples {
        for sec in &s.injected_secrets {
            if s.prompt_text
                .get(sec.offset..sec.offset + sec.surface.len())
                != Some(sec.surface.as_str())
            {
                return Err(CorpusError::Offset {
                    id: s.id.clone(),
                    class: sec.class,
                    offset: sec.offset,
                });
            }
        }
        let tokens = s.tokens();
        let ok = match s.quadrant.profile {
            Profile::Expert => tokens <= settings.expert_max_tokens,
            Profile::Lazy => tokens >= settings.lazy_min_tokens,
        };
        if !ok {
            return Err(CorpusError::Size {
                id: s.id.clone(),
                profile: s.quadrant.profile,
                tokens,
            });
        }
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> std::io::Result<()> {
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(
    input: R,
) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}
