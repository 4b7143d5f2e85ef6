use std::sync::Arc;

use contextguard::endpoint::{EndpointError, MockEndpoint, Responder};
use contextguard_bench::judge::{
    judge, pair_runs, parse_verdict, Judge, JudgeError, Pair, Verdict,
};
use contextguard_bench::runner::{BackendChoice, Mode, RunRecord, Status};

fn pairs(baseline: &str, guarded: &str, n: usize) -> Vec<Pair> {
    (0..n)
        .map(|i| Pair {
            id: format!("p{i}"),
            baseline: baseline.into(),
            guarded: guarded.into(),
        })
        .collect()
}

#[test]
fn identical_answers_tie() {
    let t = judge(&pairs("same answer", "same answer", 30), &Judge::Mock, 1).unwrap();
    assert_eq!(
        (t.ties, t.guarded_wins, t.baseline_wins, t.skipped),
        (30, 0, 0, 0)
    );
}

#[test]
fn shorter_guarded_answer_always_wins() {
    for seed in 0..5 {
        let t = judge(
            &pairs("a much longer answer", "short", 25),
            &Judge::Mock,
            seed,
        )
        .unwrap();
        assert_eq!(t.guarded_wins, 25);
        assert_eq!(t.guarded_win_rate(), 1.0);
    }
}

#[test]
fn empty_response_is_an_error() {
    let p = pairs("answer", "  ", 1);
    assert!(matches!(judge(&p, &Judge::Mock, 1), Err(JudgeError::EmptyResponse(id)) if id == "p0"));
}

#[test]
fn verdict_parsing() {
    assert_eq!(parse_verdict("A"), Some(Verdict::A));
    assert_eq!(parse_verdict(" b. because"), Some(Verdict::B));
    assert_eq!(parse_verdict("Tie"), Some(Verdict::Tie));
    assert_eq!(parse_verdict("neither"), None);
    assert_eq!(parse_verdict(""), None);
}

/// A judge that always picks whichever slot holds the marked answer, so the
/// tally must attribute every win to the guarded side whatever the order.
#[test]
fn endpoint_judge_order_is_undone() {
    let ep = MockEndpoint::new(
        "judge",
        Responder::custom(|req| {
            let body = req.user_content();
            let b_start = body.find("Answer B:").unwrap();
            Ok(if body[b_start..].contains("GUARDED") {
                "B"
            } else {
                "A"
            }
            .into())
        }),
    );
    let t = judge(
        &pairs("plain", "GUARDED", 40),
        &Judge::Endpoint(Arc::new(ep)),
        3,
    )
    .unwrap();
    assert_eq!(t.guarded_wins, 40);
}

#[test]
fn endpoint_failures_are_skipped() {
    let ep = MockEndpoint::new(
        "judge",
        Responder::custom(|_| Err(EndpointError::Transport("down".into()))),
    );
    let t = judge(&pairs("x", "y", 5), &Judge::Endpoint(Arc::new(ep)), 3).unwrap();
    assert_eq!(t.skipped, 5);
    assert_eq!(t.guarded_win_rate(), 0.0);
}

fn rec(id: &str, mode: Mode, response: &str) -> RunRecord {
    RunRecord {
        id: id.into(),
        quadrant: "lazy/personal".into(),
        mode,
        backend: BackendChoice::Extractive,
        status: Status::Ok,
        error: None,
        secrets: 0,
        leaked: 0,
        leaked_classes: Vec::new(),
        baseline_tokens: 1,
        guarded_tokens: 1,
        output_tokens: 1,
        baseline_cost: 0.0,
        guarded_cost: 0.0,
        tier: Some(1),
        compression_ratio: None,
        response: response.into(),
        wall_ms: 0.0,
    }
}

#[test]
fn pairing_joins_by_id_and_drops_empty() {
    let base = vec![
        rec("a", Mode::Baseline, "ba"),
        rec("b", Mode::Baseline, "bb"),
        rec("c", Mode::Baseline, "bc"),
    ];
    let guard = vec![
        rec("c", Mode::Guarded, "gc"),
        rec("a", Mode::Guarded, "ga"),
        rec("b", Mode::Guarded, ""),
    ];
    let p = pair_runs(&base, &guard);
    let got: Vec<_> = p
        .iter()
        .map(|p| (p.id.as_str(), p.baseline.as_str(), p.guarded.as_str()))
        .collect();
    assert_eq!(got, vec![("a", "ba", "ga"), ("c", "bc", "gc")]);
}
