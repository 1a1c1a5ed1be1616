use std::path::{Path, PathBuf};
use std::sync::Arc;

use detective::harness::bundle::FeatureBundle;
use detective::harness::pipeline::{run_with_providers, MockScript};
use detective::harness::{run_query, DetectiveConfig, ProviderMode, RunRequest};
use detective::providers::cache::ResponseCache;
use detective::providers::mock::{Flaky, MockObserver};
use detective::providers::{NoSleep, ProviderPolicy};
use detective::Error;

const QUESTION: &str = "What color is the car the man drives away in?";

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden/bundle")
}

fn options() -> Vec<String> {
    ["red", "blue", "green", "white"].iter().map(|s| s.to_string()).collect()
}

fn request(bundle: PathBuf, config: DetectiveConfig) -> RunRequest {
    RunRequest {
        bundle,
        question: QUESTION.into(),
        options: options(),
        config,
        mode: ProviderMode::Mock,
        mock_script: None,
    }
}

#[test]
fn missing_bundle_is_an_input_error() {
    let err = run_query(&request("/nonexistent/bundle".into(), DetectiveConfig::default())).unwrap_err();
    assert!(matches!(err, Error::BundleNotFound(_)), "{err:?}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn zero_budget_fails_before_any_provider_call() {
    let cfg = DetectiveConfig {
        base_budget: 0,
        ..DetectiveConfig::default()
    };
    let bundle = FeatureBundle::load(&golden()).unwrap();
    let script = MockScript::load(&golden().join("mock.json")).unwrap();
    let providers = script.providers(bundle.header.feature_dim);
    let err = run_with_providers(&bundle, QUESTION, &options(), &cfg, &providers).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert_eq!(providers.ledger.total_calls(), 0);
}

#[test]
fn cached_rerun_makes_no_provider_calls() {
    let cache_dir = tempfile::tempdir().unwrap();
    let bundle = FeatureBundle::load(&golden()).unwrap();
    let script = MockScript::load(&golden().join("mock.json")).unwrap();
    let cfg = DetectiveConfig::default();
    let cache = || Some(ResponseCache::new(cache_dir.path()).unwrap());

    let first_providers = script.providers(bundle.header.feature_dim).with_cache(cache());
    let first = run_with_providers(&bundle, QUESTION, &options(), &cfg, &first_providers).unwrap();
    assert!(first_providers.ledger.total_calls() > 0);

    // A dead observer proves the second run never reaches it.
    let mut second_providers = script.providers(bundle.header.feature_dim).with_cache(cache());
    second_providers.observer = Arc::new(Flaky::new(MockObserver::new(script.observer.clone()), usize::MAX));
    second_providers.policy = ProviderPolicy {
        max_attempts: 1,
        ..ProviderPolicy::default()
    };
    second_providers.sleeper = Arc::new(NoSleep);
    let second = run_with_providers(&bundle, QUESTION, &options(), &cfg, &second_providers).unwrap();
    assert_eq!(second_providers.ledger.total_calls(), 0);
    assert_eq!(first.answer_record(), second.answer_record());

    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    first.write(a.path()).unwrap();
    second.write(b.path()).unwrap();
    for name in ["answer.json", "package.json", "trace.jsonl", "beliefs.bin"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_overrides_reach_the_run() {
    let cfg = DetectiveConfig::parse("base_budget = 3\n", &["m=2".into(), "n_f=1".into()]).unwrap();
    let run = run_query(&request(golden(), cfg)).unwrap();
    assert!(run.outcome.observations.len() <= 3 + 3);
    assert!(run.selection.nodes.len() <= run.facets.labels().len().max(2));
    assert!(run.package.entries.iter().all(|e| e.frames.len() <= 1));
}

#[test]
fn free_form_question_without_options() {
    let mut req = request(golden(), DetectiveConfig::default());
    req.options.clear();
    let run = run_query(&req).unwrap();
    assert!(!run.answer.is_empty());
}
