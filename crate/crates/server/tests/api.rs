use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use serde_json::{json, Value};
use tower::ServiceExt;

use protots::checkpoint::ModelCheckpoint;
use protots::data::{synth_generate, Normalizer, SynthConfig};
use protots::encoder::EncoderConfig;
use protots::model::{ModelConfig, ProtoTsModel};
use protots_server::service::{router, AppState, JobStatus, ServeData};

const T: usize = 12;

fn app() -> AppState {
    let synth = SynthConfig {
        periods: 20,
        period: T,
        lookback: 12,
        horizon: 6,
        ..Default::default()
    };
    let out = synth_generate(&synth, 3).unwrap();
    let norm = Normalizer::fit(&out.bundle);
    let mc = ModelConfig {
        encoder: EncoderConfig {
            d: 8,
            d_bottle: 3,
            ..Default::default()
        },
        n_roots: 6,
        ..Default::default()
    };
    let model = ProtoTsModel::init(mc, out.schema.clone(), norm, 1).unwrap();
    let data = ServeData::new(&out.bundle, &out.schema, &model);
    AppState::new(ModelCheckpoint::new(model, None), data)
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn call_raw(state: &AppState, method: &str, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn tree_of_fresh_model_lists_six_roots() {
    let state = app();
    let (status, tree) = call(&state, "GET", "/model/tree", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tree["roots"].as_array().unwrap().len(), 6);
    for n in tree["nodes"].as_array().unwrap() {
        assert_eq!(n["pattern"].as_array().unwrap().len(), T);
    }
    assert_eq!(tree["revision"], 0);
}

#[tokio::test]
async fn split_adds_children_and_rejects_internal_nodes() {
    let state = app();
    let (status, body) = call(&state, "POST", "/prototypes/2/split", Some(json!({"M": 3, "seed": 4}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["children"].as_array().unwrap().len(), 3);
    assert_eq!(body["revision"], 1);
    let (_, tree) = call(&state, "GET", "/model/tree", None).await;
    assert_eq!(tree["nodes"].as_array().unwrap().len(), 9);
    assert_eq!(tree["leaves"].as_array().unwrap().len(), 8);

    let (status, _) = call(&state, "POST", "/prototypes/2/split", Some(json!({"M": 2}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&state, "POST", "/prototypes/99/split", Some(json!({"M": 2}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = call(&state, "POST", "/prototypes/0/split", Some(json!({"M": "two"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "M");
}

#[tokio::test]
async fn pattern_patch_round_trips_and_validates() {
    let state = app();
    let pattern: Vec<f64> = (0..T).map(|i| (i as f64 * 0.37).sin() + 0.123456789).collect();
    let (status, body) = call(
        &state,
        "PATCH",
        "/prototypes/4/pattern",
        Some(json!({"pattern": pattern, "lock": true})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, tree) = call(&state, "GET", "/model/tree", None).await;
    let node = &tree["nodes"][4];
    assert_eq!(node["pattern_locked"], true);
    for (a, b) in node["pattern"].as_array().unwrap().iter().zip(&pattern) {
        assert!((a.as_f64().unwrap() - b).abs() < 1e-9);
    }

    let (status, body) = call(&state, "PATCH", "/prototypes/4/pattern", Some(json!({"pattern": [1.0, 2.0]}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "pattern");
    let (status, body) = call_raw(&state, "PATCH", "/prototypes/4/pattern", r#"{"pattern": [1.0, "x"]}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "pattern[1]");
    let (status, _) = call_raw(&state, "PATCH", "/prototypes/4/pattern", "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn activations_explanations_and_metrics() {
    let state = app();
    let (status, t) = call(&state, "GET", "/model/activations?split=test&k=6", None).await;
    assert_eq!(status, StatusCode::OK, "{t}");
    let entries = t["entries"].as_array().unwrap();
    assert!(!entries.is_empty());
    let mut last_start = -1i64;
    for e in entries {
        let leaves = e["leaves"].as_array().unwrap();
        let w: Vec<f64> = leaves.iter().map(|l| l[1].as_f64().unwrap()).collect();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(w.windows(2).all(|p| p[0] >= p[1]));
        let start = e["instance"].as_i64().unwrap();
        assert!(start > last_start);
        last_start = start;
    }
    let (_, t) = call(&state, "GET", "/model/activations?k=100", None).await;
    assert_eq!(t["k"], 6);
    let (status, _) = call(&state, "GET", "/model/activations?k=0", None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let start = entries[0]["instance"].as_u64().unwrap();
    let (status, e) = call(&state, "GET", &format!("/model/explain/{start}"), None).await;
    assert_eq!(status, StatusCode::OK);
    for r in e["explanation"]["residual"].as_array().unwrap() {
        assert!(r.as_f64().unwrap().abs() < 1e-8);
    }
    let (status, _) = call(&state, "GET", "/model/explain/999999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, m) = call(&state, "GET", "/model/metrics?split=val", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(m["metrics"]["mae"].as_f64().unwrap() > 0.0);
    assert_eq!(m["metrics"]["denormalized"], false);
}

#[tokio::test]
async fn mutations_conflict_while_training_runs() {
    let state = app();
    state.session.write().unwrap().job = JobStatus::Running {
        job_id: 7,
        completed_epochs: 0,
        planned_epochs: 1,
        progress: 0.0,
    };
    let (status, body) = call(&state, "POST", "/prototypes/0/split", Some(json!({"M": 2}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("job 7"));
    let (status, _) = call(&state, "PATCH", "/prototypes/0/pattern", Some(json!({"pattern": vec![0.0; T]}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&state, "POST", "/train", Some(json!({}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&state, "GET", "/model/tree", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn background_training_commits_and_keeps_locked_patterns() {
    let state = app();
    let locked: Vec<f64> = (0..T).map(|i| i as f64 / T as f64).collect();
    call(&state, "PATCH", "/prototypes/1/pattern", Some(json!({"pattern": locked, "lock": true}))).await;
    let (status, body) = call(
        &state,
        "POST",
        "/train",
        Some(json!({"lr": 0.01, "max_epochs": 2, "stages": [{"trigger": {"kind": "all_leaves"}, "m": 2}]})),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    let mut status_body = Value::Null;
    for _ in 0..600 {
        tokio::time::sleep(Duration::from_millis(100)).await;
        let (_, s) = call(&state, "GET", "/train/status", None).await;
        if s["job"]["state"] != "running" {
            status_body = s;
            break;
        }
    }
    assert_eq!(status_body["job"]["state"], "idle", "{status_body}");
    assert_eq!(status_body["revision"], 2);
    assert_eq!(status_body["n_leaves"], 12);
    let (_, tree) = call(&state, "GET", "/model/tree", None).await;
    let got: Vec<f64> = tree["nodes"][1]["pattern"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(got, locked);

    let (status, body) = call(&state, "POST", "/train", Some(json!({"patience": 0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    let (status, body) = call(&state, "POST", "/train", Some(json!({"lr": "fast"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "lr");
}

#[tokio::test]
async fn checkpoint_save_and_load() {
    let state = app();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.ckpt");
    let (status, _) = call(&state, "POST", "/checkpoint/save", Some(json!({"path": path}))).await;
    assert_eq!(status, StatusCode::OK);
    call(&state, "POST", "/prototypes/0/split", Some(json!({"M": 2}))).await;
    let (status, body) = call(&state, "POST", "/checkpoint/load", Some(json!({"path": path}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["revision"], 2);
    let (_, tree) = call(&state, "GET", "/model/tree", None).await;
    assert_eq!(tree["nodes"].as_array().unwrap().len(), 6);
    let (status, body) = call(&state, "POST", "/checkpoint/load", Some(json!({"path": dir.path().join("missing.ckpt")}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("missing.ckpt"));
}
