use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use kwcomplete::corpus::{TokenizerConfig, Vocabulary};
use kwcomplete::service::{Checkpoint, JsonlSessionStore, MemorySessionStore, Model, SessionStore};
use kwcomplete::{DecoderConfig, DecoderParams, EncoderConfig, EncoderParams};
use kwcomplete_cli::server::{router, AppState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

fn model() -> Model {
    let vocab = Vocabulary::from_tokens("<shift>", ["i", "will", "be", "late", "minutes", "."]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let enc = EncoderParams::new(vocab.len(), EncoderConfig { embed_dim: 4, hidden: 4, init_scale: 0.1 }, &mut rng);
    let dec = DecoderParams::new(vocab.len(), DecoderConfig { embed_dim: 4, hidden: 6, init_scale: 0.3 }, &mut rng);
    Model::new(Checkpoint::learned(vocab, TokenizerConfig::default(), enc, dec))
}

fn app_with(store: Arc<dyn SessionStore>) -> axum::Router {
    let targets = vec!["I will be late.".to_string(), "The soup was cold.".to_string()];
    router(Arc::new(AppState::new(model(), store, targets)))
}

fn app() -> axum::Router {
    app_with(Arc::new(MemorySessionStore::default()))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn record(session: &str, task: &str, marks: Option<Vec<bool>>) -> Value {
    json!({
        "session_id": session,
        "task": task,
        "target": "I will be late.",
        "input": "late",
        "suggestions": ["I will be late.", "I am late.", "late."],
        "marks": marks,
        "elapsed_s": 2.5,
    })
}

#[tokio::test]
async fn health_reports_fingerprint() {
    let (status, body) = call(&app(), "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["model_fingerprint"], model().fingerprint());
    assert!(v["uptime_s"].as_f64().unwrap() >= 0.0);
}

#[tokio::test]
async fn complete_contract_and_determinism() {
    let app = app();
    let req = json!({ "keywords": "10 minutes late", "k": 3, "max_len": 8 });
    let (status, a) = call(&app, "POST", "/complete", Some(req.clone())).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    let (_, b) = call(&app, "POST", "/complete", Some(req)).await;
    let mut a: Value = serde_json::from_str(&a).unwrap();
    let mut b: Value = serde_json::from_str(&b).unwrap();
    let suggestions = a["suggestions"].as_array().unwrap();
    assert!(!suggestions.is_empty() && suggestions.len() <= 3);
    let scores: Vec<f64> = suggestions.iter().map(|s| s["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    a.as_object_mut().unwrap().remove("latency_ms");
    b.as_object_mut().unwrap().remove("latency_ms");
    assert_eq!(a, b);

    let (status, _) = call(&app, "POST", "/complete", Some(json!({ "keywords": ["late", "."] }))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn complete_rejects_bad_requests() {
    let app = app();
    let (status, body) = call(&app, "POST", "/complete", Some(json!({ "keywords": "  " }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["kind"], "validation");
    let (status, _) = call(&app, "POST", "/complete", Some(json!({ "keywords": "late", "k": 9 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/complete", Some(json!({ "k": 3 }))).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn sessions_are_logged_and_exported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let app = app_with(Arc::new(JsonlSessionStore::open(&path).unwrap()));
    for i in 0..50 {
        let r = if i % 2 == 0 {
            record("s1", "autocomplete", Some(vec![true, false, false]))
        } else {
            let mut r = record("s1", "writing", None);
            r["suggestions"] = json!([]);
            r
        };
        let (status, body) = call(&app, "POST", "/sessions", Some(r)).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
    }
    let (status, body) = call(&app, "POST", "/sessions", Some(record("s1", "writing", Some(vec![true, false, false])))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");

    let (status, body) = call(&app, "GET", "/sessions/export", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.lines().count(), 50);

    drop(app);
    let reopened = JsonlSessionStore::open(&path).unwrap();
    assert_eq!(reopened.session("s1").unwrap().len(), 50);
}

#[tokio::test]
async fn plans_alternate_task_kinds() {
    let app = app();
    let (status, body) = call(&app, "GET", "/sessions/plan?session_id=abc&tasks=6", None).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&body).unwrap();
    let kinds: Vec<&str> = v["tasks"].as_array().unwrap().iter().map(|t| t["task"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["autocomplete", "writing", "autocomplete", "writing", "autocomplete", "writing"]);
    let (_, again) = call(&app, "GET", "/sessions/plan?session_id=abc&tasks=6", None).await;
    assert_eq!(body, again);
    let (status, _) = call(&app, "GET", "/sessions/plan?session_id=abc&tasks=0", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
