#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use feedlab_core::experiment::ExperimentDraft;
use feedlab_core::feed::{RankerRequest, RankerResponse};
use serde_json::Value;

/// An entity-set CSV with ids e00, e01, ...
pub fn entity_csv(n: usize) -> String {
    let mut csv = String::from("entity_id,headline,source_label\n");
    for i in 0..n {
        csv.push_str(&format!("e{i:02},Headline number {i},Outlet {}\n", i % 3));
    }
    csv
}

pub fn draft(value: Value) -> ExperimentDraft {
    serde_json::from_value(value).expect("valid draft JSON")
}

/// Last request body each route received, for checking what the platform sent.
pub type Seen = Arc<Mutex<Option<RankerRequest>>>;

async fn echo(State(seen): State<Seen>, Json(req): Json<RankerRequest>) -> Json<RankerResponse> {
    let order = req.items.iter().map(|i| i.entity_id.clone()).collect();
    *seen.lock().unwrap() = Some(req);
    Json(RankerResponse { order })
}

async fn reverse(State(seen): State<Seen>, Json(req): Json<RankerRequest>) -> Json<RankerResponse> {
    let order = req
        .items
        .iter()
        .rev()
        .map(|i| i.entity_id.clone())
        .collect();
    *seen.lock().unwrap() = Some(req);
    Json(RankerResponse { order })
}

async fn drop_one(Json(req): Json<RankerRequest>) -> Json<RankerResponse> {
    Json(RankerResponse {
        order: req.items.into_iter().skip(1).map(|i| i.entity_id).collect(),
    })
}

async fn duplicate(Json(req): Json<RankerRequest>) -> Json<RankerResponse> {
    let mut order: Vec<String> = req.items.into_iter().map(|i| i.entity_id).collect();
    order[1] = order[0].clone();
    Json(RankerResponse { order })
}

async fn slow(Json(req): Json<RankerRequest>) -> Json<RankerResponse> {
    tokio::time::sleep(Duration::from_millis(1_500)).await;
    Json(RankerResponse {
        order: req.items.into_iter().map(|i| i.entity_id).collect(),
    })
}

/// Ranker stubs on a background runtime. Routes: /echo, /reverse, /drop,
/// /duplicate, /slow.
pub fn spawn_ranker_stub() -> (SocketAddr, Seen) {
    let seen: Seen = Arc::default();
    let app = Router::new()
        .route("/echo", post(echo))
        .route("/reverse", post(reverse))
        .route("/drop", post(drop_one))
        .route("/duplicate", post(duplicate))
        .route("/slow", post(slow))
        .with_state(seen.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        runtime.block_on(async move { axum::serve(listener, app).await.unwrap() });
    });
    (addr, seen)
}

/// Least-squares slope of y on x.
pub fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
