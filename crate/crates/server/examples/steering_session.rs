//! Drives the steering API in-process: inspect the tree, split a leaf, pin
//! a pattern, retrain in the background and watch the job finish.

use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::Request;
use serde_json::{json, Value};
use tower::ServiceExt;

use protots::checkpoint::ModelCheckpoint;
use protots::data::{synth_generate, Normalizer, SynthConfig};
use protots::model::{ModelConfig, ProtoTsModel};
use protots_server::service::{router, AppState, ServeData};

async fn call(state: &AppState, method: &str, uri: &str, body: Value) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(if body.is_null() { Body::empty() } else { Body::from(body.to_string()) })
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    println!("{method} {uri} -> {status}");
    v
}

#[tokio::main]
async fn main() -> protots::Result<()> {
    let synth = SynthConfig { periods: 60, ..Default::default() };
    let out = synth_generate(&synth, 1)?;
    let model = ProtoTsModel::init(ModelConfig::default(), out.schema.clone(), Normalizer::fit(&out.bundle), 1)?;
    let data = ServeData::new(&out.bundle, &out.schema, &model);
    let state = AppState::new(ModelCheckpoint::new(model, None), data);

    let tree = call(&state, "GET", "/model/tree", Value::Null).await;
    println!("  roots {:?}", tree["roots"]);

    let split = call(&state, "POST", "/prototypes/0/split", json!({"M": 2, "seed": 3})).await;
    println!("  children {:?}", split["children"]);

    let flat = vec![0.0; synth.period];
    call(&state, "PATCH", "/prototypes/1/pattern", json!({"pattern": flat, "lock": true})).await;

    let job = call(&state, "POST", "/train", json!({"max_epochs": 3, "lr": 0.01})).await;
    println!("  job {}", job["job_id"]);
    loop {
        tokio::time::sleep(Duration::from_millis(500)).await;
        let s = call(&state, "GET", "/train/status", Value::Null).await;
        println!("  {}", s["job"]);
        if s["job"]["state"] != "running" {
            break;
        }
    }

    let m = call(&state, "GET", "/model/metrics?split=test", Value::Null).await;
    println!("  test MAE {:.4}", m["metrics"]["mae"].as_f64().unwrap_or(f64::NAN));
    let a = call(&state, "GET", "/model/activations?split=test&k=2", Value::Null).await;
    println!("  first window {}", a["entries"][0]);
    Ok(())
}
