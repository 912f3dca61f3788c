mod common;

use std::path::Path;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use common::{p, sindy, write_fixture, BASELINE, POOR};
use serde_json::{json, Value};
use sindy_cli::serve::router;
use tower::ServiceExt;

/// `done`: finished after two iterations. `open`: aborted during iteration 2.
fn make_runs(root: &Path) {
    let fx = write_fixture(
        &root.join("done.json"),
        &[("lorenz/iter1/*", Some(POOR)), ("lorenz/*", Some(BASELINE))],
    );
    let runs = root.join("runs");
    let code = sindy(&["discover", "--system", "lorenz", "--fixture", p(&fx), "--samples", "2", "--run-dir", p(&runs.join("done"))]);
    assert_eq!(code, 0);
    let fx = write_fixture(&root.join("open.json"), &[("lorenz/iter1/*", Some(POOR)), ("lorenz/*", None)]);
    let code = sindy(&["discover", "--system", "lorenz", "--fixture", p(&fx), "--samples", "2", "--run-dir", p(&runs.join("open"))]);
    assert_eq!(code, 1);
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Option<String>, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, ctype, bytes)
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, _, b) = call(app, "GET", uri, None).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test]
async fn read_routes_expose_runs_iterations_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    make_runs(tmp.path());
    let app = router(tmp.path().join("runs"));

    let (s, list) = get_json(&app, "/runs").await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = list.as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["done", "open"]);
    assert_eq!(list[0]["state"], "done");
    assert_eq!(list[0]["iterations"].as_array().unwrap().len(), 2);
    assert_eq!(list[1]["state"], "failed");
    assert!(list[0]["best_r2_test"].as_f64().unwrap() > 0.99);

    let (s, run) = get_json(&app, "/runs/done").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(run["manifest"]["config"]["label"], "lorenz");
    assert_eq!(run["status"]["state"], "done");

    let (s, it) = get_json(&app, "/runs/done/iterations/2").await;
    assert_eq!(s, StatusCode::OK);
    assert!(it["iteration"]["prompt"].as_str().unwrap().contains("*Previous attempts:*"));
    assert_eq!(it["plot"], "/runs/done/plot/2");
    assert_eq!(get_json(&app, "/runs/done/iterations/7").await.0, StatusCode::NOT_FOUND);

    let (s, ctype, png) = call(&app, "GET", "/runs/done/plot/1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(call(&app, "GET", "/runs/done/plot/9", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unknown_and_traversing_ids_are_not_found() {
    let tmp = tempfile::tempdir().unwrap();
    make_runs(tmp.path());
    let app = router(tmp.path().join("runs"));
    for uri in ["/runs/nope", "/runs/..", "/runs/.hidden", "/runs/..%2Fdone", "/runs/%2E%2E/iterations/1"] {
        assert_eq!(get_json(&app, uri).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    let (s, _, _) = call(&app, "POST", "/runs/nope/feedback", Some(json!({"text": "x"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&router(tmp.path().join("missing")), "/runs").await.1, json!([]));
}

#[tokio::test]
async fn feedback_validation_and_idempotence() {
    let tmp = tempfile::tempdir().unwrap();
    make_runs(tmp.path());
    let app = router(tmp.path().join("runs"));

    let (s, _, _) = call(&app, "POST", "/runs/done/feedback", Some(json!({"text": "late"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _, _) = call(&app, "POST", "/runs/open/feedback", Some(json!({"text": "   "}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&app, "POST", "/runs/open/feedback", Some(json!({"nope": 1}))).await;
    assert!(s.is_client_error());

    let body = json!({"text": "Try products of states in every equation.", "id": "u1"});
    let (s, _, first) = call(&app, "POST", "/runs/open/feedback", Some(body.clone())).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _, again) = call(&app, "POST", "/runs/open/feedback", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(first, again);
    let lines = std::fs::read_to_string(tmp.path().join("runs/open/feedback.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1);

    // The resumed run picks the submitted text up in its next prompt.
    let fx = write_fixture(&tmp.path().join("fix.json"), &[("lorenz/*", Some(BASELINE))]);
    let code = sindy(&["resume", "--run", p(&tmp.path().join("runs/open")), "--fixture", p(&fx)]);
    assert_eq!(code, 0);
    let (_, it) = get_json(&app, "/runs/open/iterations/2").await;
    assert!(it["iteration"]["prompt"].as_str().unwrap().contains("- Try products of states in every equation."));
    assert_eq!(it["feedback"][0]["id"], "u1");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_feedback_writes_are_serialized() {
    let tmp = tempfile::tempdir().unwrap();
    make_runs(tmp.path());
    let app = router(tmp.path().join("runs"));
    let mut tasks = Vec::new();
    for k in 0..24 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let body = json!({"text": format!("note {k}")});
            call(&app, "POST", "/runs/open/feedback", Some(body)).await
        }));
    }
    let mut ids = std::collections::BTreeSet::new();
    for t in tasks {
        let (s, _, b) = t.await.unwrap();
        assert_eq!(s, StatusCode::CREATED);
        let v: Value = serde_json::from_slice(&b).unwrap();
        ids.insert(v["id"].as_str().unwrap().to_string());
    }
    assert_eq!(ids.len(), 24);
    let text = std::fs::read_to_string(tmp.path().join("runs/open/feedback.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 24);
    assert!(text.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
}
