//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::collections::BTreeSet;
use std::time::Instant;

use contextguard::compressor::{compress_extractive, CompressionPolicy};
use contextguard::config::Config;
use contextguard::router::{assess, route, Assigned, RouterPolicy};
use contextguard::scanner::{scan_residual, Scanner, Typology};
use contextguard::vault::{escape_sigils, unescape_sigils, DualVault, VaultKind};
use contextguard_bench::corpus::{generate, BenchmarkSample, GenSettings};
use contextguard_bench::fuzz::fuzz_case;
use contextguard_bench::judge::{judge, Judge, Pair};
use contextguard_bench::report::report;
use contextguard_bench::runner::{run, BackendChoice, Mode, RunOptions, CAPABILITY};
use contextguard_bench::scenarios;
use contextguard_bench::stats::spearman;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 7;
const FUZZ_CASES: usize = 10_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn guarded(samples: &[BenchmarkSample]) -> contextguard_bench::report::BenchReport {
    let records = run(
        samples,
        &RunOptions::new(Mode::Guarded, BackendChoice::Extractive),
    )
    .expect("run");
    report(&records).expect("report")
}

fn leakage() -> Outcome {
    let small = guarded(&generate(SEED, &GenSettings::paper40()));
    let big_corpus = generate(SEED, &GenSettings::paper40().scaled(25));
    let start = Instant::now();
    let big = guarded(&big_corpus);
    let secs = start.elapsed().as_secs_f64();
    let pass = small.blended.leaked == 0
        && small.blended.secrets == 140
        && big.blended.leaked == 0
        && big.blended.samples == 1000
        && big.blended.failed == 0
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "40 samples: {}/{} leaked; 1000 samples: {}/{} leaked in {secs:.2}s",
            small.blended.leaked, small.blended.secrets, big.blended.leaked, big.blended.secrets
        ),
    )
}

fn no_tier3(config: &Config) -> RouterPolicy {
    let mut tiers = config.router.tiers().to_vec();
    tiers[3].endpoint_url = None;
    RouterPolicy::new(config.router.settings.clone(), tiers).expect("policy")
}

fn scanner_closed_loop() -> Outcome {
    let scanner = Scanner::builtin();
    let config = Config::default_config();
    let policies = [config.router.clone(), no_tier3(&config)];
    let w_q = config.router.settings.w_q;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut secrets, mut missed, mut gate_checks, mut gate_failures) = (0, 0, 0, 0);
    for _ in 0..FUZZ_CASES {
        let case = fuzz_case(&mut rng);
        let spans = scanner.scan(&case.text).spans;
        for s in &case.secrets {
            secrets += 1;
            if !spans
                .iter()
                .any(|sp| sp.class == s.class && sp.start == s.offset && sp.surface == s.surface)
            {
                missed += 1;
            }
        }
        // redact a random subset, then check the gate on what is left
        let mut vaults = DualVault::new("fuzz");
        let keep: Vec<_> = spans
            .iter()
            .filter(|sp| sp.class.typology() == Typology::QuasiIdentifier || rng.gen_bool(0.5))
            .cloned()
            .collect();
        let partial = vaults.redact(&case.text, &keep, 0).expect("redact").text;
        let residual = !scan_residual(&partial, &case.surfaces()).is_empty();
        let a = assess(&partial, scanner, w_q);
        for policy in &policies {
            for cap in [Some(CAPABILITY), None] {
                let assigned = route(&a, policy, cap).assigned;
                gate_checks += 1;
                if residual && !matches!(assigned, Assigned::Tier(3) | Assigned::Blocked) {
                    gate_failures += 1;
                }
            }
        }
    }
    outcome(
        missed == 0 && gate_failures == 0,
        format!(
            "{FUZZ_CASES} cases, {secrets} secrets, {missed} missed; {gate_checks} gate checks, {gate_failures} residual payloads sent below tier 3"
        ),
    )
}

fn parsimony() -> Outcome {
    let rep = guarded(&generate(SEED, &GenSettings::paper40()));
    let lazy = rep.group("lazy").expect("lazy").mean_reduction;
    let expert = rep.group("expert").expect("expert").mean_reduction;
    let blended = rep.blended.opex_reduction;
    let pass = (0.50..=0.62).contains(&lazy)
        && (0.10..=0.30).contains(&expert)
        && (0.35..=0.55).contains(&blended);
    outcome(
        pass,
        format!(
            "lazy {:.2}%, expert {:.2}%, blended {:.2}% (per-sample mean {:.2}%)",
            lazy * 100.0,
            expert * 100.0,
            blended * 100.0,
            rep.blended.mean_reduction * 100.0
        ),
    )
}

fn decomposition() -> Outcome {
    let samples = scenarios::triage_corpus(SEED, scenarios::TRIAGE_SAMPLES);
    let start = Instant::now();
    let out = scenarios::run_triage(&samples, &Config::default_config()).expect("triage");
    let secs = start.elapsed().as_secs_f64();
    let mean_tokens = out.baseline_tokens as f64 / out.samples as f64;
    let pass = out.samples == 118
        && out.decomposed == 118
        && out.raw_context_calls == 0
        && out.failed == 0
        && out.leaked == 0
        && out.reduction >= 0.95;
    outcome(
        pass,
        format!(
            "{} samples (mean {mean_tokens:.0} tokens), {} decomposed, reduction {:.2}% in {secs:.2}s",
            out.samples,
            out.decomposed,
            out.reduction * 100.0
        ),
    )
}

fn lifo() -> Outcome {
    let config = Config::default_config();
    let budget = config.memory.budget_tokens;
    let turns = scenarios::lifo_turns(SEED, scenarios::LIFO_TURNS, scenarios::LIFO_TURN_TOKENS);
    let out = scenarios::run_lifo(&turns, &config).expect("lifo");
    // monolithic history: every earlier prompt and reply, plus this prompt
    let tokens = |s: &str| s.len().div_ceil(4) as u64;
    let reply = tokens(scenarios::LIFO_REPLY);
    let mut history = 0;
    let mut oracle = None;
    for (i, t) in turns.iter().enumerate() {
        if oracle.is_none() && history + tokens(t) > budget {
            oracle = Some(i + 1);
        }
        history += tokens(t) + reply;
    }
    let worst = out.outbound.iter().copied().max().unwrap_or(0);
    let crossover = out.baseline_crossover();
    let pass = out.failed == 0
        && out.outbound.len() == scenarios::LIFO_TURNS
        && worst <= budget
        && crossover.is_some_and(|c| c <= 6)
        && crossover == oracle;
    outcome(
        pass,
        format!("worst outbound {worst}/{budget} tokens; baseline crossover turn {crossover:?} (oracle {oracle:?})"),
    )
}

fn vaults() -> Outcome {
    let scanner = Scanner::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x5eed);
    let both = [VaultKind::Personal, VaultKind::Institutional];
    let (mut round_trip_failures, mut attempts, mut breaches) = (0, 0, 0);
    for _ in 0..FUZZ_CASES {
        let case = fuzz_case(&mut rng);
        let mut v = DualVault::new("fuzz");
        let escaped = escape_sigils(&case.text);
        let red = v
            .redact(&escaped, &scanner.scan(&escaped).spans, 0)
            .expect("redact");
        if unescape_sigils(&v.rehydrate(&red.text, &both).text) != case.text {
            round_trip_failures += 1;
        }
        let institutional: Vec<_> = v.institutional().entries().to_vec();
        if institutional.is_empty() {
            continue;
        }
        // personal-only caller
        attempts += 1;
        let only_per = v.rehydrate(&red.text, &[VaultKind::Personal]).text;
        if institutional.iter().any(|e| only_per.contains(&e.original)) {
            breaches += 1;
        }
        // institutional placeholders relabelled as personal
        let mut forged = red.text.clone();
        for e in &institutional {
            forged = forged.replace(&e.placeholder, &e.placeholder.replace(":INS:", ":PER:"));
        }
        attempts += 1;
        let restored = v.rehydrate(&forged, &both).text;
        if institutional.iter().any(|e| restored.contains(&e.original)) {
            breaches += 1;
        }
        // direct lookup in the wrong vault
        let e = institutional.choose(&mut rng).unwrap();
        attempts += 1;
        if v.personal().lookup(&e.placeholder).is_some() {
            breaches += 1;
        }
    }
    outcome(
        round_trip_failures == 0 && breaches == 0 && attempts > 0,
        format!(
            "{FUZZ_CASES} round trips, {round_trip_failures} failures; {attempts} cross-vault attempts, {breaches} restored"
        ),
    )
}

fn directionality() -> Outcome {
    let scanner = Scanner::builtin();
    let policy = CompressionPolicy::default();
    let (mut gain, mut removed) = (Vec::new(), Vec::new());
    for s in generate(SEED, &GenSettings::paper40()) {
        let r = compress_extractive(&s.prompt_text, &policy);
        let before = scanner.scan(&s.prompt_text).secrets().count();
        let after = scanner.scan(&r.output).secrets().count();
        gain.push(1.0 - r.ratio_k);
        removed.push(if before == 0 {
            0.0
        } else {
            1.0 - after as f64 / before as f64
        });
    }
    match spearman(&gain, &removed) {
        Some(rho) => outcome(
            rho > 0.0,
            format!("spearman rho = {rho:.3} over {} samples", gain.len()),
        ),
        None => outcome(false, "spearman undefined (constant input)"),
    }
}

fn judge_contract() -> Outcome {
    let start = Instant::now();
    let same: Vec<Pair> = (0..20)
        .map(|i| Pair {
            id: format!("p{i}"),
            baseline: "restart the worker pool".into(),
            guarded: "restart the worker pool".into(),
        })
        .collect();
    let shorter: Vec<Pair> = (0..20)
        .map(|i| Pair {
            id: format!("p{i}"),
            baseline: "restart the worker pool and then check the queue depth".into(),
            guarded: "restart the worker pool".into(),
        })
        .collect();
    let ties = judge(&same, &Judge::Mock, SEED).expect("judge");
    let wins = judge(&shorter, &Judge::Mock, SEED).expect("judge");
    let ms = start.elapsed().as_secs_f64() * 1000.0;
    let pass = ties.ties == 20 && wins.guarded_wins == 20 && wins.guarded_win_rate() == 1.0;
    outcome(
        pass,
        format!(
            "identical: {} ties of 20; shorter guarded: {:.0}% guarded wins; wall-clock {ms:.2} ms",
            ties.ties,
            wins.guarded_win_rate() * 100.0
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("zero-trust leakage", leakage),
        ("scanner closed loop", scanner_closed_loop),
        ("token parsimony brackets", parsimony),
        ("decomposition opex", decomposition),
        ("lifo bound", lifo),
        ("vault round trip and segregation", vaults),
        ("compression/secret-removal directionality", directionality),
        ("mock judge contract", judge_contract),
    ];
    let mut failed = 0;
    let mut seen = BTreeSet::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        assert!(seen.insert(*name));
        let start = Instant::now();
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {} {name}: {status} ({}) [{:.2}s]",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
