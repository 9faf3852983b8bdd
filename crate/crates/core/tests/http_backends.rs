mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use common::{serve, Reply};
use ragbias_core::dataset::Condition;
use ragbias_core::gateway::{
    ApiMode, Gateway, GatewayError, GenerationParams, HttpLm, HttpLmConfig, LanguageModel, ScoringStrategy,
};
use ragbias_core::index::{EmbedError, Embedder, HttpEmbedder};
use ragbias_core::prompting::RenderedPrompt;
use ragbias_core::scorers::{HttpScorer, LexiconScorer, ScoreError, Scorer};
use serde_json::json;

const TIMEOUT: Duration = Duration::from_secs(5);

fn texts(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn embedder_preserves_order_across_batches() {
    let (url, count) = serve(|_, seen| {
        assert_eq!(seen.path, "/embed");
        let vectors: Vec<Vec<f32>> = seen.body["texts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| vec![t.as_str().unwrap().len() as f32, 1.0, 0.5])
            .collect();
        Reply::json(json!({"vectors": vectors, "dim": 3}))
    });
    let e = HttpEmbedder::new(&url, TIMEOUT)
        .with_expected_dim(3)
        .with_batch_size(2)
        .with_parallelism(3);
    let input = texts(&["a", "bb", "ccc", "dddd", "eeeee"]);
    let out = e.embed(&input).unwrap();
    let firsts: Vec<f32> = out.iter().map(|v| v.values()[0]).collect();
    assert_eq!(firsts, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(count.load(Ordering::SeqCst), 3);
}

#[test]
fn embedder_rejects_wrong_dimension() {
    let (url, _) = serve(|_, _| Reply::json(json!({"vectors": [[1.0, 2.0]], "dim": 2})));
    let e = HttpEmbedder::new(&url, TIMEOUT).with_expected_dim(768);
    match e.embed(&texts(&["x"])) {
        Err(EmbedError::DimensionMismatch { expected: 768, got: 2 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn embedder_retries_server_errors_only() {
    let (url, count) = serve(|n, _| {
        if n == 0 {
            Reply::status(503)
        } else {
            Reply::json(json!({"vectors": [[1.0, 0.0]], "dim": 2}))
        }
    });
    let e = HttpEmbedder::new(&url, TIMEOUT).with_retries(2);
    assert_eq!(e.embed(&texts(&["x"])).unwrap().len(), 1);
    assert_eq!(count.load(Ordering::SeqCst), 2);

    let (url, count) = serve(|_, _| Reply::status(400));
    let e = HttpEmbedder::new(&url, TIMEOUT).with_retries(2);
    assert!(matches!(e.embed(&texts(&["x"])), Err(EmbedError::Transport { retryable: false, .. })));
    assert_eq!(count.load(Ordering::SeqCst), 1);
}

#[test]
fn scorer_round_trips_wire_format() {
    let (url, _) = serve(|_, seen| match seen.path.as_str() {
        "/health" => Reply::json(json!({"status": "ok", "models": {"sentiment": true, "emotion": true}})),
        "/score" => {
            let t: Vec<String> = serde_json::from_value(seen.body["texts"].clone()).unwrap();
            Reply::json(serde_json::to_value(LexiconScorer.score(&t).unwrap()).unwrap())
        }
        _ => Reply::status(404),
    });
    let s = HttpScorer::new(&url, TIMEOUT).with_batch_size(2);
    assert!(s.health().unwrap().is_ready());
    let input = texts(&["I love this.", "he and his father", "", "you idiot"]);
    assert_eq!(s.score(&input).unwrap(), LexiconScorer.score(&input).unwrap());
}

#[test]
fn scorer_rejects_broken_responses() {
    let (url, _) = serve(|_, seen| {
        let mut outs = serde_json::to_value(LexiconScorer.score(&texts(&["a"])).unwrap()).unwrap();
        if seen.body["texts"][0] == "bad-simplex" {
            outs[0]["sentiment"]["positive"] = json!(0.9);
        } else {
            let first = outs[0].clone();
            outs.as_array_mut().unwrap().push(first);
        }
        Reply::json(outs)
    });
    let s = HttpScorer::new(&url, TIMEOUT);
    assert!(matches!(s.score(&texts(&["bad-simplex"])), Err(ScoreError::Protocol(_))));
    assert!(matches!(s.score(&texts(&["count"])), Err(ScoreError::Protocol(_))));
}

#[test]
fn scorer_health_reports_loading_models() {
    let (url, _) = serve(|_, _| Reply::json(json!({"status": "ok", "models": {"regard": false}})));
    assert!(!HttpScorer::new(&url, TIMEOUT).health().unwrap().is_ready());
}

fn lm(url: &str, scoring: ScoringStrategy, mode: ApiMode) -> HttpLm {
    HttpLm::new(HttpLmConfig {
        base_url: format!("{url}/v1"),
        model: "test-model".into(),
        mode,
        scoring,
        api_key: Some("secret".into()),
        timeout_secs: 5,
    })
}

#[test]
fn echo_offsets_select_continuation_tokens() {
    let (url, _) = serve(|_, seen| {
        assert_eq!(seen.path, "/v1/completions");
        assert_eq!(seen.auth.as_deref(), Some("Bearer secret"));
        assert_eq!(seen.body["echo"], json!(true));
        assert_eq!(seen.body["prompt"], json!("The cat sat"));
        Reply::json(json!({"choices": [{"text": "The cat sat.", "logprobs": {
            "tokens": ["The", " cat", " sat", "."],
            "token_logprobs": [null, -1.0, -2.5, -9.0],
            "text_offset": [0, 3, 7, 11]
        }}]}))
    });
    let m = lm(&url, ScoringStrategy::EchoOffsets, ApiMode::Completion);
    assert_eq!(m.continuation_logprobs("The cat", " sat").unwrap(), vec![-2.5]);
}

#[test]
fn two_call_difference_subtracts_prompt_total() {
    let (url, _) = serve(|_, seen| {
        let body = if seen.body["prompt"] == json!("The cat sat") {
            json!({"tokens": ["The", " cat", " sat", "."], "token_logprobs": [null, -1.0, -2.5, -9.0]})
        } else {
            json!({"tokens": ["The", " cat", "."], "token_logprobs": [null, -1.0, -7.0]})
        };
        Reply::json(json!({"choices": [{"text": "", "logprobs": body}]}))
    });
    let m = lm(&url, ScoringStrategy::TwoCallDifference, ApiMode::Completion);
    assert_eq!(m.continuation_logprobs("The cat", " sat").unwrap(), vec![-2.5]);
}

#[test]
fn unsupported_scoring_is_a_capability_error() {
    let m = lm("http://127.0.0.1:9", ScoringStrategy::Unsupported, ApiMode::Completion);
    assert!(matches!(m.continuation_logprobs("a", " b"), Err(GatewayError::Capability(_))));
}

#[test]
fn completion_and_chat_generation() {
    let (url, _) = serve(|_, seen| match seen.path.as_str() {
        "/v1/completions" => {
            assert_eq!(seen.body["max_tokens"], json!(7));
            assert_eq!(seen.body["stop"], json!(["\n"]));
            Reply::json(json!({"choices": [{"text": " went home", "finish_reason": "stop"}]}))
        }
        "/v1/chat/completions" => {
            assert_eq!(seen.body["messages"][0]["content"], json!("hello"));
            Reply::json(json!({"choices": [{"message": {"content": "hi"}, "finish_reason": "length"}]}))
        }
        _ => Reply::status(404),
    });
    let params = GenerationParams {
        max_tokens: 7,
        stop: vec!["\n".into()],
        ..GenerationParams::default()
    };
    let g = lm(&url, ScoringStrategy::EchoOffsets, ApiMode::Completion)
        .generate("hello", &params)
        .unwrap();
    assert_eq!(g.text, " went home");
    let g = lm(&url, ScoringStrategy::EchoOffsets, ApiMode::Chat)
        .generate("hello", &params)
        .unwrap();
    assert_eq!(g.text, "hi");
}

#[test]
fn gateway_retries_transient_failures() {
    let (url, count) = serve(|n, _| {
        if n < 2 {
            Reply::status(429)
        } else {
            Reply::json(json!({"choices": [{"text": "ok"}]}))
        }
    });
    let gw = Gateway::new(Arc::new(lm(&url, ScoringStrategy::EchoOffsets, ApiMode::Completion))).with_retries(2);
    let prompt = RenderedPrompt {
        item_id: "i".into(),
        condition: Condition::BeforeRag,
        text: "p".into(),
        retrieved_chunk_ids: Vec::new(),
    };
    assert_eq!(gw.generate(&prompt, &GenerationParams::default()).unwrap().text, "ok");
    assert_eq!(count.load(Ordering::SeqCst), 3);
}
