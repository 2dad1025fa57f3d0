mod common;

use std::time::Duration;

use base64::Engine;
use common::Stub;
use exemvad_core::backend::{BackendError, JsonClient, RetryPolicy};
use exemvad_core::describe::{DescribeBackend, DescribeError, DescribeJob, DescribeRequest, Describer, HttpDescribeBackend, PromptBundle};
use exemvad_core::textdist::{embed_all, embed_batch, EmbedBackend, HttpEmbedder, TextDistError};
use serde_json::json;

const TIMEOUT: Duration = Duration::from_secs(5);

fn client(url: &str) -> JsonClient {
    JsonClient::new(url, TIMEOUT).with_api_key(None)
}

fn prompts() -> PromptBundle {
    PromptBundle {
        system_prompt: "system text".into(),
        user_prompt: "user text".into(),
    }
}

fn job() -> DescribeJob {
    DescribeJob {
        unit_key: "test_00/12:a".into(),
        unit_id: "12:a".into(),
        anchor_frame: 12,
        image_t: vec![1, 2, 3],
        image_t2: vec![4, 5, 6, 7],
        prompts: prompts(),
    }
}

fn ok_text(text: &str) -> (u16, String) {
    (200, json!({ "text": text }).to_string())
}

#[test]
fn describe_posts_base64_images_and_prompts() {
    let stub = Stub::start(vec![ok_text("A person walks.")]);
    let backend = HttpDescribeBackend::with_client(client(&stub.url));
    let p = prompts();
    let req = DescribeRequest {
        unit_key: "v/u",
        image_t: b"first",
        image_t2: b"second",
        prompts: &p,
        deterministic: true,
    };
    assert_eq!(backend.describe(&req).unwrap(), "A person walks.");
    assert_eq!(backend.backend_id(), format!("http:{}", stub.url));
    let got = stub.finish();
    assert_eq!(got.len(), 1);
    let r = &got[0];
    assert_eq!(r.path, "/describe");
    assert!(r.header("content-type").unwrap().starts_with("application/json"));
    assert!(r.header("authorization").is_none());
    let b64 = base64::engine::general_purpose::STANDARD;
    assert_eq!(r.body["image_t"], b64.encode(b"first"));
    assert_eq!(r.body["image_t2"], b64.encode(b"second"));
    assert_eq!(r.body["system"], "system text");
    assert_eq!(r.body["user"], "user text");
    assert_eq!(r.body["deterministic"], true);
}

#[test]
fn status_codes_map_to_transient_or_fatal() {
    let p = prompts();
    let req = DescribeRequest {
        unit_key: "v/u",
        image_t: b"a",
        image_t2: b"b",
        prompts: &p,
        deterministic: true,
    };
    for (status, transient) in [(429, true), (500, true), (503, true), (408, true), (400, false), (401, false), (404, false)] {
        let stub = Stub::start(vec![(status, "{\"error\":\"nope\"}".into())]);
        let backend = HttpDescribeBackend::with_client(client(&stub.url));
        let err = backend.describe(&req).unwrap_err();
        assert_eq!(err.is_transient(), transient, "status {status}: {err}");
        stub.finish();
    }
}

#[test]
fn malformed_success_body_is_fatal() {
    let stub = Stub::start(vec![(200, "{\"txt\": 1}".into())]);
    let backend = HttpDescribeBackend::with_client(client(&stub.url));
    let p = prompts();
    let req = DescribeRequest {
        unit_key: "v/u",
        image_t: b"a",
        image_t2: b"b",
        prompts: &p,
        deterministic: true,
    };
    assert!(matches!(backend.describe(&req), Err(BackendError::Fatal(_))));
    stub.finish();
}

#[test]
fn describer_retries_transient_failures() {
    let stub = Stub::start(vec![
        (503, "busy".into()),
        (429, "slow down".into()),
        ok_text("  Two people walk side by side.\n"),
    ]);
    let backend = HttpDescribeBackend::with_client(client(&stub.url));
    let rec = Describer::new(&backend)
        .with_retry(RetryPolicy::immediate(3))
        .describe_unit(&job())
        .unwrap();
    assert_eq!(rec.text, "Two people walk side by side.");
    assert_eq!(rec.unit_id, "12:a");
    assert_eq!(stub.finish().len(), 3);
}

#[test]
fn describer_gives_up_after_the_retry_budget() {
    let stub = Stub::start(vec![(500, "down".into()), (500, "down".into())]);
    let backend = HttpDescribeBackend::with_client(client(&stub.url));
    let err = Describer::new(&backend)
        .with_retry(RetryPolicy::immediate(1))
        .describe_unit(&job())
        .unwrap_err();
    assert!(matches!(err, DescribeError::Transport { .. }), "{err}");
    assert_eq!(stub.finish().len(), 2);
}

#[test]
fn describer_does_not_retry_client_errors() {
    let stub = Stub::start(vec![(400, "bad".into())]);
    let backend = HttpDescribeBackend::with_client(client(&stub.url));
    let err = Describer::new(&backend)
        .with_retry(RetryPolicy::immediate(5))
        .describe_unit(&job())
        .unwrap_err();
    assert!(matches!(err, DescribeError::Backend { .. }), "{err}");
    assert_eq!(stub.finish().len(), 1);
}

#[test]
fn blank_description_is_rejected() {
    let stub = Stub::start(vec![ok_text("   ")]);
    let backend = HttpDescribeBackend::with_client(client(&stub.url));
    let err = Describer::new(&backend).with_retry(RetryPolicy::none()).describe_unit(&job()).unwrap_err();
    assert!(matches!(err, DescribeError::EmptyDescription(_)));
    stub.finish();
}

#[test]
fn explicit_api_key_is_sent_as_bearer_token() {
    let stub = Stub::start(vec![(200, json!({"dim": 2, "vectors": [[3.0, 4.0]]}).to_string())]);
    let embedder = HttpEmbedder::with_client(JsonClient::new(&stub.url, TIMEOUT).with_api_key(Some("tok-123".into())));
    embedder.embed_raw(&["x"]).unwrap();
    let got = stub.finish();
    assert_eq!(got[0].header("authorization"), Some("Bearer tok-123"));
}

#[test]
fn embed_posts_texts_and_normalizes_vectors() {
    let stub = Stub::start(vec![(
        200,
        json!({"dim": 3, "vectors": [[3.0, 4.0, 0.0], [0.0, 0.0, 2.0]]}).to_string(),
    )]);
    let embedder = HttpEmbedder::with_client(client(&stub.url));
    let v = embed_batch(&embedder, &["a person walks", "a car drives"]).unwrap();
    assert_eq!(embedder.dim(), 3);
    assert_eq!(v[0].as_slice(), &[0.6, 0.8, 0.0]);
    assert_eq!(v[1].as_slice(), &[0.0, 0.0, 1.0]);
    let got = stub.finish();
    assert_eq!(got[0].path, "/embed");
    assert_eq!(got[0].body, json!({"texts": ["a person walks", "a car drives"]}));
}

#[test]
fn embed_rejects_dimension_changes() {
    let stub = Stub::start(vec![
        (200, json!({"dim": 2, "vectors": [[1.0, 0.0]]}).to_string()),
        (200, json!({"dim": 3, "vectors": [[1.0, 0.0, 0.0]]}).to_string()),
    ]);
    let embedder = HttpEmbedder::with_client(client(&stub.url));
    assert_eq!(embedder.probe().unwrap(), 2);
    let err = embedder.embed_raw(&["again"]).unwrap_err();
    assert!(matches!(err, BackendError::Fatal(_)));
    stub.finish();
}

#[test]
fn embed_rejects_vector_count_mismatch() {
    let stub = Stub::start(vec![(200, json!({"dim": 2, "vectors": [[1.0, 0.0]]}).to_string())]);
    let embedder = HttpEmbedder::with_client(client(&stub.url));
    let err = embed_batch(&embedder, &["one", "two"]).unwrap_err();
    assert!(matches!(err, TextDistError::CountMismatch { expected: 2, got: 1 }));
    stub.finish();
}

#[test]
fn embed_all_batches_and_retries_transient_failures() {
    let stub = Stub::start(vec![
        (200, json!({"dim": 2, "vectors": [[1.0, 0.0], [0.0, 1.0]]}).to_string()),
        (503, "busy".into()),
        (200, json!({"dim": 2, "vectors": [[1.0, 1.0]]}).to_string()),
    ]);
    let embedder = HttpEmbedder::with_client(client(&stub.url));
    let out = embed_all(&embedder, &["a", "b", "c"], 2, 1, &RetryPolicy::immediate(2)).unwrap();
    assert_eq!(out.len(), 3);
    let h = std::f32::consts::FRAC_1_SQRT_2;
    assert!((out[2].as_slice()[0] - h).abs() < 1e-6);
    let got = stub.finish();
    assert_eq!(got.len(), 3);
    assert_eq!(got[0].body["texts"], json!(["a", "b"]));
    assert_eq!(got[2].body["texts"], json!(["c"]));
}

#[test]
fn refused_connection_is_transient() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let embedder = HttpEmbedder::with_client(client(&format!("http://127.0.0.1:{port}")));
    assert!(embedder.embed_raw(&["x"]).unwrap_err().is_transient());
}

#[test]
fn stub_sees_no_request_before_the_client_calls() {
    let stub = Stub::start(vec![ok_text("x")]);
    assert_eq!(stub.received(), 0);
    let backend = HttpDescribeBackend::new(&stub.url, TIMEOUT);
    let p = prompts();
    let req = DescribeRequest {
        unit_key: "v/u",
        image_t: b"a",
        image_t2: b"b",
        prompts: &p,
        deterministic: false,
    };
    backend.describe(&req).unwrap();
    let got = stub.finish();
    assert_eq!(got[0].body["deterministic"], false);
}
