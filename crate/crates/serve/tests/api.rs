use std::sync::OnceLock;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use base64::Engine;
use serde_json::{json, Value};
use tower::ServiceExt;

use hzr_core::infer::probabilities;
use hzr_core::model::{checkpoint, count_params, Network};
use hzr_core::search::{sample_architecture, HyperParamSpace};
use hzr_serve::{router, AppState, Model};

const CLASSES: usize = 12;

fn network() -> Network<f32> {
    Network::build(sample_architecture(&HyperParamSpace::desk(), 5, CLASSES), 5).unwrap()
}

fn state() -> AppState {
    static STATE: OnceLock<AppState> = OnceLock::new();
    STATE
        .get_or_init(|| {
            let names = (0..CLASSES).map(|i| format!("glyph-{i}")).collect();
            AppState::with_model(Model::new(network(), Some(names), 0.0).unwrap())
        })
        .clone()
}

fn strokes() -> Value {
    json!({"strokes": [[[10.0, 10.0], [60.0, 12.0], [35.0, 80.0]], [[20.0, 45.0], [55.0, 45.0]]]})
}

async fn call(state: AppState, method: &str, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router(state).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn post(body: Value) -> (StatusCode, Value) {
    call(state(), "POST", "/recognize", &body.to_string()).await
}

fn scores(v: &Value) -> Vec<f64> {
    v["candidates"].as_array().unwrap().iter().map(|c| c["score"].as_f64().unwrap()).collect()
}

#[tokio::test]
async fn strokes_give_four_ranked_candidates() {
    let (status, v) = post(strokes()).await;
    assert_eq!(status, StatusCode::OK);
    let s = scores(&v);
    assert_eq!(s.len(), 4);
    assert!(s.windows(2).all(|w| w[0] >= w[1]));
    let first = &v["candidates"][0];
    let label = first["label"].as_u64().unwrap();
    assert_eq!(first["name"], format!("glyph-{label}"));
}

#[tokio::test]
async fn scores_are_the_full_softmax() {
    let mut body = strokes();
    body["k"] = json!(10);
    let (status, v) = post(body).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(scores(&v).len(), 10);

    let net = network();
    let img = hzr_core::infer::image_from_strokes(&net, &serde_json::from_value(strokes()).unwrap()).unwrap();
    let p = probabilities(&net, &img).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    for c in v["candidates"].as_array().unwrap() {
        let label = c["label"].as_u64().unwrap() as usize;
        assert_eq!(c["score"].as_f64().unwrap(), p[label]);
    }
}

#[tokio::test]
async fn image_payload_is_accepted_and_sized() {
    let px: Vec<u8> = (0..2304).map(|i| ((i * 31) % 256) as u8).collect();
    let b64 = base64::engine::general_purpose::STANDARD;
    let (status, v) = post(json!({"image": b64.encode(&px), "k": 1})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(scores(&v).len(), 1);

    let (status, v) = post(json!({"image": b64.encode([0u8; 100])})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("expected 2304 bytes"), "{v}");
}

#[tokio::test]
async fn bad_requests_are_400() {
    for body in ["{not json", r#"{"k": 4}"#, r#"{"strokes": []}"#, r#"{"strokes": [[[0, 0]]], "k": 11}"#, r#"{"image": "@@@"}"#] {
        let (status, v) = call(state(), "POST", "/recognize", body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn identical_requests_identical_responses() {
    let body = strokes();
    let runs = concurrent_posts(body).await;
    assert!(runs.windows(2).all(|w| w[0] == w[1]));
}

async fn concurrent_posts(body: Value) -> Vec<Value> {
    let tasks: Vec<_> = (0..6).map(|_| tokio::spawn(post(body.clone()))).collect();
    let mut out = Vec::new();
    for t in tasks {
        out.push(t.await.unwrap().1);
    }
    out
}

#[tokio::test]
async fn health_reports_model_or_503() {
    let (status, v) = call(AppState::default(), "GET", "/health", "").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["status"], "loading");
    let (status, _) = call(AppState::default(), "POST", "/recognize", &strokes().to_string()).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    let (status, v) = call(state(), "GET", "/health", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["classes"], CLASSES);
    let count = count_params(network().spec());
    assert_eq!(v["footprint_bytes"].as_u64().unwrap(), count.total * 4);
}

#[test]
fn load_from_checkpoint_and_names() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.hzr");
    checkpoint::save(&network(), &model).unwrap();
    let names = dir.path().join("names.txt");
    std::fs::write(&names, "a\nb\n").unwrap();
    assert!(matches!(
        Model::load(&model, Some(&names)),
        Err(hzr_serve::ServeError::NameCount { names: 2, classes: CLASSES })
    ));
    let m = Model::load(&model, None).unwrap();
    assert_eq!(m.info().classes, CLASSES);
    assert!(!m.info().named);
    assert!(Model::load(dir.path().join("missing.hzr"), None).is_err());
}
