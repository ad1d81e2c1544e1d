use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use distdescribe_core::backends::mock::{completion_body, MockResponse, MockServer};
use distdescribe_core::backends::{EndpointConfig, HttpBackend, RuleBackend};
use distdescribe_core::bench::generate_task;
use distdescribe_core::pipeline::{PipelineError, Report};
use distdescribe_core::{Backends, Engine, RunConfig};

fn http_verifier(server: &MockServer) -> Backends {
    Backends {
        proposer: Arc::new(RuleBackend::default()),
        verifier: Arc::new(HttpBackend::new(EndpointConfig {
            base_url: server.base_url(),
            api_key_env: None,
            retries: 1,
            backoff_ms: 1,
            ..EndpointConfig::default()
        })),
    }
}

#[test]
fn report_round_trips_through_json() {
    let task = generate_task("color", 0.9, 0.1, 50, 1).unwrap();
    let engine = Engine::new(RunConfig::default(), Backends::rule()).unwrap();
    let report = engine.describe_pair(&task.pair).unwrap();
    let back: Report = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back.to_json(), report.to_json());
    assert_eq!(report.ranked[0].hypothesis.s, "mentions a color");
    assert!(report.ranked.windows(2).all(|w| w[0].ca.mean >= w[1].ca.mean));
}

#[test]
fn persistent_cache_serves_a_second_run() {
    let dir = tempfile::tempdir().unwrap();
    let task = generate_task("weather", 0.8, 0.2, 40, 2).unwrap();
    let config = RunConfig {
        cache: Some(dir.path().join("judgments.jsonl").to_str().unwrap().to_string()),
        ..RunConfig::default()
    };
    let first = Engine::new(config.clone(), Backends::rule()).unwrap();
    let a = first.describe_pair(&task.pair).unwrap();
    assert!(first.verifier().requests() > 0);

    let second = Engine::new(config, Backends::rule()).unwrap();
    let b = second.describe_pair(&task.pair).unwrap();
    assert_eq!(second.verifier().requests(), 0);
    assert_eq!(a.ranked, b.ranked);
}

#[test]
fn transient_failures_abstain_and_are_reported() {
    let task = generate_task("digit", 0.9, 0.1, 30, 3).unwrap();
    let rule = RuleBackend::default();
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let server = MockServer::start(move |req| {
        if counter.fetch_add(1, Ordering::SeqCst).is_multiple_of(10) {
            return MockResponse::status(503, "busy");
        }
        let prompt = req.body["prompt"].as_str().unwrap_or_default();
        let (question, context) = prompt.split_once('\n').unwrap_or((prompt, ""));
        let answer = rule.rule_judge(&distdescribe_core::backends::JudgmentRequest {
            question: question.into(),
            context: context.into(),
        });
        MockResponse::json(completion_body(&[answer]))
    });
    let config = RunConfig {
        n_pairs: 50,
        ..RunConfig::default()
    };
    let engine = Engine::new(config, http_verifier(&server)).unwrap();
    let report = engine.describe_pair(&task.pair).unwrap();
    assert!(report.judgments.failed > 0);
    assert!(report.warnings.iter().any(|w| w.contains("failed")), "{:?}", report.warnings);
    assert_eq!(report.ranked[0].hypothesis.s, "contains a digit");
}

#[test]
fn mostly_failing_verifier_aborts() {
    let task = generate_task("digit", 0.9, 0.1, 30, 3).unwrap();
    let server = MockServer::start(|_| MockResponse::status(500, "down"));
    let config = RunConfig {
        n_pairs: 20,
        ..RunConfig::default()
    };
    let engine = Engine::new(config, http_verifier(&server)).unwrap();
    match engine.describe_pair(&task.pair) {
        Err(PipelineError::Aborted { abstained, total, .. }) => assert_eq!(abstained, total),
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn shortcut_scan_reverse_mirrors_forward() {
    let task = generate_task("negation", 0.7, 0.1, 60, 4).unwrap();
    let classes = vec![task.pair.d0.clone(), task.pair.d1.clone()];
    let config = RunConfig {
        exhaustive: true,
        ..RunConfig::default()
    };
    let engine = Engine::new(config, Backends::rule()).unwrap();
    let scan = engine.shortcut_scan(&classes).unwrap();
    assert_eq!(scan.pairs.len(), 1);
    let p = &scan.pairs[0];
    assert_eq!(p.report.ranked[0].hypothesis.s, "contains a negative statement");
    for r in &p.reverse {
        assert!((0.0..=1.0).contains(&r.ca.mean));
    }
    assert!(p.reverse.windows(2).all(|w| w[0].ca.mean >= w[1].ca.mean));
}
