use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::response::IntoResponse;
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use stylegan_lens::{GeneratorConfig, ModelSet};
use stylegan_lens_cli::service::{router, ApiError, AppState};
use tower::ServiceExt;

fn tiny() -> GeneratorConfig {
    GeneratorConfig {
        latent_size: 16,
        n_layers: 2,
        blocks: 1,
        max_res: 8,
        channels: vec![8],
        ..GeneratorConfig::desk()
    }
}

fn state(allow_in_place: bool) -> Arc<AppState> {
    Arc::new(AppState::new(ModelSet::new(tiny(), 8, 3).unwrap(), allow_in_place))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(&body.to_string())).await
}

fn is_png(b64: &Value) -> bool {
    STANDARD.decode(b64.as_str().unwrap()).unwrap().starts_with(b"\x89PNG\r\n\x1a\n")
}

#[tokio::test]
async fn info_reports_model_shape() {
    let app = router(state(false), None);
    let (status, v) = call(&app, "GET", "/api/info", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["latent_size"], 16);
    assert_eq!(v["blocks"], 1);
    assert_eq!(v["max_res"], 8);
    assert_eq!(v["nonzero_weights"], v["total_weights"]);
    assert_eq!(v["max_count"], 64);
}

#[tokio::test]
async fn generate_is_deterministic_and_bounded() {
    let app = router(state(false), None);
    let body = json!({ "seed": 5, "count": 4, "truncation_psi": 0.7 });
    let (status, a) = post(&app, "/api/generate", body.clone()).await;
    assert_eq!(status, StatusCode::OK);
    let images = a["images"].as_array().unwrap();
    assert_eq!(images.len(), 4);
    assert!(images.iter().all(is_png));
    let (_, b) = post(&app, "/api/generate", body).await;
    assert_eq!(a, b);

    let (status, _) = post(&app, "/api/generate", json!({ "count": 64 })).await;
    assert_eq!(status, StatusCode::OK);
    for bad in [json!({ "count": 65 }), json!({ "count": 0 }), json!({ "truncation_psi": 1.5 }), json!({ "sed": 1 })] {
        let (status, v) = post(&app, "/api/generate", bad.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert!(v["error"].is_string(), "{bad}");
    }
}

#[tokio::test]
async fn malformed_json_is_400() {
    let app = router(state(false), None);
    let (status, v) = call(&app, "POST", "/api/generate", Some("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].is_string());
}

#[tokio::test]
async fn perturb_contract() {
    let app = router(state(false), None);
    let (status, v) = post(&app, "/api/perturb", json!({ "seed": 2, "count": 3, "deltas": [] })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["before"], v["after"]);
    assert!(v["distances"].as_array().unwrap().iter().all(|d| d.as_f64() == Some(0.0)));

    for w_space in [false, true] {
        let body = json!({ "seed": 2, "count": 3, "deltas": [{ "dim": 3, "delta": 10.0 }], "w_space": w_space });
        let (status, v) = post(&app, "/api/perturb", body).await;
        assert_eq!(status, StatusCode::OK);
        assert_ne!(v["before"], v["after"]);
        assert_eq!(v["distances"].as_array().unwrap().len(), 3);
        assert!(v["distances"].as_array().unwrap().iter().any(|d| d.as_f64().unwrap() > 0.0));
    }

    for bad in [
        json!({ "deltas": [{ "dim": 3, "delta": 10.5 }] }),
        json!({ "deltas": [{ "dim": 16, "delta": 1.0 }] }),
        json!({ "count": 65 }),
    ] {
        let (status, _) = post(&app, "/api/perturb", bad.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
    }
}

#[tokio::test]
async fn prune_on_copy_leaves_model_untouched() {
    let app = router(state(false), None);
    let (_, before) = call(&app, "GET", "/api/info", None).await;
    let (status, v) = post(&app, "/api/prune", json!({ "threshold": 1.0, "count": 8 })).await;
    assert_eq!(status, StatusCode::OK);
    assert!(v["nonzero_weights"].as_u64().unwrap() < before["total_weights"].as_u64().unwrap());
    assert_eq!(v["images"].as_array().unwrap().len(), 8);
    let score = v["mean_d_score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    let (_, after) = call(&app, "GET", "/api/info", None).await;
    assert_eq!(before, after);

    let (status, _) = post(&app, "/api/prune", json!({ "threshold": -0.1 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn in_place_prune_needs_permission() {
    let app = router(state(false), None);
    let (status, v) = post(&app, "/api/prune", json!({ "threshold": 1.0, "in_place": true })).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert!(v["error"].is_string());
}

#[tokio::test]
async fn in_place_prune_swaps_weights() {
    let app = router(state(true), None);
    let (status, v) = post(&app, "/api/prune", json!({ "threshold": 1.0, "in_place": true, "count": 8 })).await;
    assert_eq!(status, StatusCode::OK);
    let (_, info) = call(&app, "GET", "/api/info", None).await;
    assert_eq!(info["nonzero_weights"], v["nonzero_weights"]);
    assert!(info["nonzero_weights"].as_u64() < info["total_weights"].as_u64());
}

#[tokio::test]
async fn overlapping_mutation_is_409() {
    let st = state(true);
    let app = router(st.clone(), None);
    let guard = st.mutation_lock().lock().await;
    let (status, _) = post(&app, "/api/prune", json!({ "threshold": 0.5, "in_place": true })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = post(&app, "/api/prune", json!({ "threshold": 0.5, "count": 2 })).await;
    assert_eq!(status, StatusCode::OK);
    drop(guard);
    let (status, _) = post(&app, "/api/prune", json!({ "threshold": 0.5, "in_place": true, "count": 2 })).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn internal_errors_hide_detail_behind_an_id() {
    let resp = ApiError::Internal("secret stack detail".into()).into_response();
    assert_eq!(resp.status(), StatusCode::INTERNAL_SERVER_ERROR);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["error"], "internal error");
    assert_eq!(v["id"].as_str().unwrap().len(), 36);
    assert!(!String::from_utf8_lossy(&bytes).contains("secret"));
}

#[tokio::test]
async fn static_dir_is_served() {
    let dir = tempfile::TempDir::new().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>lens</h1>").unwrap();
    let app = router(state(false), Some(dir.path().to_path_buf()));
    let req = Request::builder().uri("/index.html").body(Body::empty()).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<h1>lens</h1>");
}
