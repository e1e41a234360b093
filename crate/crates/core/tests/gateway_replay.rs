use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use guidemod::gateway::{
    extract_payload, CallTag, CompletionRequest, CompletionResponse, CostLedger, Family, FixtureStore, FnProvider,
    Gateway, Mode, ModelSpec, Stage,
};

fn model() -> ModelSpec {
    let mut m = ModelSpec::new(Family::Gemini, "replay-model");
    m.price_in = 1.25;
    m.price_out = 10.0;
    m
}

fn echo_provider() -> Arc<FnProvider<impl Fn(&CompletionRequest) -> Result<CompletionResponse, guidemod::gateway::ProviderError> + Send + Sync>> {
    Arc::new(FnProvider(|req: &CompletionRequest| {
        Ok(CompletionResponse {
            text: format!("reply to <{}>", req.user_text),
            input_tokens: req.user_text.len() as u64 * 3,
            output_tokens: 17,
            latency_secs: 0.25,
        })
    }))
}

#[test]
fn shuffled_replay_returns_the_recorded_response_per_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let recorder = Gateway::new(Mode::Record, Some(FixtureStore::open(tmp.path()).unwrap()), Some(echo_provider()));
    let requests: Vec<CompletionRequest> =
        (0..10).map(|i| CompletionRequest::new(model(), "sys", format!("prompt number {i}"))).collect();
    let recorded: Vec<(String, CompletionResponse)> = requests
        .iter()
        .map(|r| (r.hash(), recorder.complete(r, &CallTag::new(1, Stage::Annotate).item(r.hash())).unwrap()))
        .collect();

    let replay = Gateway::replay(FixtureStore::open(tmp.path()).unwrap());
    let mut order: Vec<usize> = (0..10).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    for i in order {
        let got = replay.complete(&requests[i], &CallTag::new(1, Stage::Annotate).item(i.to_string())).unwrap();
        assert_eq!(requests[i].hash(), recorded[i].0);
        assert_eq!(got, recorded[i].1);
    }
    let replayed = replay.ledger();
    assert_eq!(replayed.iteration(1).unwrap().calls, 10);
    assert!((replayed.total_cost() - recorder.ledger().total_cost()).abs() < 1e-12);

    let unseen = CompletionRequest::new(model(), "sys", "never recorded");
    assert!(replay.complete(&unseen, &CallTag::new(1, Stage::Annotate)).is_err());
}

#[test]
fn price_changes_do_not_invalidate_fixtures() {
    let tmp = tempfile::tempdir().unwrap();
    let recorder = Gateway::new(Mode::Record, Some(FixtureStore::open(tmp.path()).unwrap()), Some(echo_provider()));
    let req = CompletionRequest::new(model(), "", "x");
    recorder.complete(&req, &CallTag::new(1, Stage::ExplainPattern)).unwrap();
    let mut repriced = req.clone();
    repriced.model.price_out = 99.0;
    let replay = Gateway::replay(FixtureStore::open(tmp.path()).unwrap());
    replay.complete(&repriced, &CallTag::new(1, Stage::ExplainPattern)).unwrap();
    let expected = (3.0 * 1.25 + 17.0 * 99.0) / 1e6;
    assert!((replay.ledger().total_cost() - expected).abs() < 1e-15);
}

proptest! {
    #[test]
    fn ledger_totals_equal_independent_sums(
        calls in prop::collection::vec((1u32..5, 0u64..100_000, 0u64..20_000, 0.0f64..30.0), 0..60)
    ) {
        let m = model();
        let mut ledger = CostLedger::default();
        for (i, (it, inp, out, lat)) in calls.iter().enumerate() {
            let r = CompletionResponse { text: String::new(), input_tokens: *inp, output_tokens: *out, latency_secs: *lat };
            ledger.record_call(&CallTag::new(*it, Stage::Annotate).item(format!("{i:03}")), "", &m, &r);
        }
        ledger.normalize();
        for it in 1u32..5 {
            let mine: Vec<_> = calls.iter().filter(|c| c.0 == it).collect();
            let cost: f64 = mine.iter().map(|c| c.1 as f64 * 1.25 / 1e6 + c.2 as f64 * 10.0 / 1e6).sum();
            let lat: f64 = mine.iter().map(|c| c.3).sum();
            match ledger.iteration(it) {
                None => prop_assert!(mine.is_empty()),
                Some(c) => {
                    prop_assert_eq!(c.calls, mine.len());
                    prop_assert!((c.cost - cost).abs() < 1e-9);
                    prop_assert!((c.latency_secs - lat).abs() < 1e-9);
                    prop_assert!((c.minutes() - lat / 60.0).abs() < 1e-9);
                }
            }
        }
        let total: f64 = calls.iter().map(|c| c.1 as f64 * 1.25 / 1e6 + c.2 as f64 * 10.0 / 1e6).sum();
        prop_assert!((ledger.total_cost() - total).abs() < 1e-9);
    }

    #[test]
    fn fenced_payload_with_prose_parses_like_bare(begins in prop::collection::vec(0usize..500, 0..8), prose in "[a-zA-Z .,]{0,40}") {
        let items: Vec<String> = begins
            .iter()
            .map(|b| format!(r#"{{"begin": {b}, "end": {}, "label": "Disease", "span_text": "x{{}}"}}"#, b + 3))
            .collect();
        let bare = format!(r#"{{"annotations": [{}]}}"#, items.join(", "));
        let wrapped = format!("{prose}\n```json\n{bare}\n```\n{prose}");
        // Oracle: strip the fence by hand and parse with serde_json.
        let inner = wrapped.split("```json\n").nth(1).unwrap().split("\n```").next().unwrap();
        let expected: Value = serde_json::from_str(inner).unwrap();
        let expected = expected["annotations"].as_array().unwrap().clone();
        prop_assert_eq!(extract_payload(&wrapped).unwrap(), expected.clone());
        prop_assert_eq!(extract_payload(&bare).unwrap(), expected);
    }
}
