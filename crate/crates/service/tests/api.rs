use std::path::PathBuf;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pivotfit_service::{router, AppState, ServiceConfig, REVISION_HEADER};
use serde_json::{json, Value};
use tower::ServiceExt;

fn data_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/datasets")
}

fn pivots() -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/pivots/synthetic.json");
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn app() -> Router {
    router(AppState::new(ServiceConfig::new(data_root())))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let revision = resp
        .headers()
        .get(REVISION_HEADER)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    // extractor rejections are plain text
    let value = serde_json::from_slice(&bytes)
        .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()));
    (status, value, revision)
}

async fn open(app: &Router) -> String {
    let (status, body, _) = call(app, Method::POST, "/sessions", Some(json!({"dataset": "synthetic"}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["revision"], 0);
    assert_eq!(body["n"], 500);
    body["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn full_loop_with_fast_refit() {
    let app = app();
    let id = open(&app).await;

    let (status, dev, _) = call(&app, Method::GET, &format!("/sessions/{id}/deviation?window=40"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(dev["deviation"].as_array().unwrap().len(), 500);
    assert!(dev["suggested"].as_array().unwrap().len() >= 2);

    let (status, _, _) = call(&app, Method::GET, &format!("/sessions/{id}/posterior"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let put = json!({"pivots": pivots(), "expected_revision": 0});
    let (status, body, _) = call(&app, Method::PUT, &format!("/sessions/{id}/pivots"), Some(put)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["revision"], 1);

    let (status, report, rev) =
        call(&app, Method::POST, &format!("/sessions/{id}/refit"), Some(json!({"fast": true}))).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(rev.as_deref(), Some("2"));
    assert!(report["rmse_corrected"].as_f64().unwrap() < report["rmse_base"].as_f64().unwrap());
    assert_eq!(report["partial"], true);

    // no posterior after a fast refit
    let (status, _, _) = call(&app, Method::GET, &format!("/sessions/{id}/posterior"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let settings = json!({"fast": false, "chains": 2, "samples": 200, "warmup": 200, "seed": 4});
    let (status, report, rev) =
        call(&app, Method::POST, &format!("/sessions/{id}/refit?expected_revision=2"), Some(settings)).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(rev.as_deref(), Some("3"));
    let (status, post, _) = call(&app, Method::GET, &format!("/sessions/{id}/posterior"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(post["revision"], 3);
    assert_eq!(post["value_at_risk"], report["value_at_risk"]);
    assert!(post["corrected"].is_object());

    let (status, _, _) =
        call(&app, Method::POST, &format!("/sessions/{id}/refit?expected_revision=2"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn invalid_pivots_are_422_with_fields() {
    let app = app();
    let id = open(&app).await;
    let unsorted = json!({
        "pivots": [{"date": "2016-03-01", "value": 0.1}, {"date": "2016-02-01", "value": 0.2}],
        "expected_revision": 0
    });
    let (status, body, _) = call(&app, Method::PUT, &format!("/sessions/{id}/pivots"), Some(unsorted)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let fields = body["fields"].as_array().unwrap();
    assert_eq!(fields[0]["index"], 1);
    assert_eq!(fields[0]["field"], "date");

    let outside = json!({"pivots": [{"date": "2030-01-01", "value": 0.1}], "expected_revision": 0});
    let (status, body, _) = call(&app, Method::PUT, &format!("/sessions/{id}/pivots"), Some(outside)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    // nothing was stored
    let (_, info, _) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(info["revision"], 0);
    assert!(info["pivots"].is_null());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writers_one_wins() {
    let app = app();
    let id = open(&app).await;
    let uri = format!("/sessions/{id}/pivots");
    let body = json!({"pivots": pivots(), "expected_revision": 0});
    let barrier = std::sync::Arc::new(tokio::sync::Barrier::new(2));
    let writers: Vec<_> = (0..2)
        .map(|_| {
            let (app, uri, body, barrier) = (app.clone(), uri.clone(), body.clone(), barrier.clone());
            tokio::spawn(async move {
                barrier.wait().await;
                call(&app, Method::PUT, &uri, Some(body)).await
            })
        })
        .collect();
    let mut results = Vec::new();
    for w in writers {
        results.push(w.await.unwrap());
    }
    let mut statuses: Vec<StatusCode> = results.iter().map(|r| r.0).collect();
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    let loser = results.iter().find(|r| r.0 == StatusCode::CONFLICT).unwrap();
    assert_eq!(loser.1["current_revision"], 1);
}

#[tokio::test]
async fn unknown_things() {
    let app = app();
    let missing = "/sessions/7f1f8a39-58f8-4a8c-9d1e-0f4b2a1c0d11/deviation";
    assert_eq!(call(&app, Method::GET, missing, None).await.0, StatusCode::NOT_FOUND);
    let (status, _, _) = call(&app, Method::POST, "/sessions", Some(json!({"dataset": "nope"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = call(&app, Method::POST, "/sessions", Some(json!({"dataset": "../datasets"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let id = open(&app).await;
    let (status, body, _) =
        call(&app, Method::POST, &format!("/sessions/{id}/refit"), Some(json!({"lambda": -1.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    let (status, _, _) =
        call(&app, Method::POST, &format!("/sessions/{id}/refit"), Some(json!({"lamda": 1.0}))).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn dataset_files_are_untouched() {
    let before: Vec<(PathBuf, Vec<u8>)> = files();
    let app = app();
    let id = open(&app).await;
    call(&app, Method::PUT, &format!("/sessions/{id}/pivots"), Some(json!({"pivots": pivots(), "expected_revision": 0}))).await;
    call(&app, Method::POST, &format!("/sessions/{id}/refit"), Some(json!({"fast": true}))).await;
    assert_eq!(before, files());
}

fn files() -> Vec<(PathBuf, Vec<u8>)> {
    let dir = data_root().join("synthetic");
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    out
}

#[tokio::test]
async fn snapshot_round_trip() {
    let state = AppState::new(ServiceConfig::new(data_root()));
    let app = router(state.clone());
    let id = open(&app).await;
    call(&app, Method::PUT, &format!("/sessions/{id}/pivots"), Some(json!({"pivots": pivots(), "expected_revision": 0}))).await;
    let snap = state.store().snapshot();
    let text = serde_json::to_string(&snap).unwrap();

    let fresh = AppState::new(ServiceConfig::new(data_root()));
    assert_eq!(fresh.store().restore(serde_json::from_str(&text).unwrap()).unwrap(), 1);
    let (status, info, _) = call(&router(fresh), Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(info["revision"], 1);
    assert_eq!(info["pivots"], pivots());
}
