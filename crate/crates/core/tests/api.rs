use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use seqlens::api::{router, ApiConfig, AppState};
use seqlens::hierarchy::{build_hierarchy, parse_edges};
use seqlens::impute::impute_and_categorize;
use seqlens::model::CohortDataset;
use seqlens::session::Engine;
use seqlens::synth::{self, SynthConfig};
use seqlens::ENGINE_VERSION;

const ANY_DIAGNOSIS: &str = r#"{"sentinel": {"class": "ICD-10"}, "window_days": 365}"#;

fn engine(n: usize) -> Engine {
    let out = synth::generate(&SynthConfig {
        n_patients: n,
        ..SynthConfig::default()
    })
    .unwrap();
    let labs = impute_and_categorize(&out.observations).unwrap();
    let (patients, mut events) = out.dataset.into_parts();
    events.extend(labs.to_events().unwrap());
    let dataset = CohortDataset::new(patients, events);
    let vocab = parse_edges(Path::new("vocab.tsv"), &out.vocab).unwrap();
    let manual = parse_edges(Path::new("manual.tsv"), &out.manual).unwrap();
    let h = build_hierarchy(&vocab, &manual, dataset.event_types()).unwrap();
    Engine::new(dataset, h)
}

fn app_with(n: usize, config: ApiConfig) -> Router {
    router(AppState::new(Some(engine(n)), config))
}

fn app() -> Router {
    app_with(300, ApiConfig::default())
}

async fn call(app: &Router, method: Method, uri: &str, body: &str) -> (StatusCode, Value, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    let value: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(value["engine_version"], ENGINE_VERSION, "{uri}");
    (status, value, bytes)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, v, _) = call(app, Method::GET, uri, "").await;
    (s, v)
}

async fn post(app: &Router, uri: &str, body: &str) -> (StatusCode, Value) {
    let (s, v, _) = call(app, Method::POST, uri, body).await;
    (s, v)
}

async fn new_session(app: &Router) -> String {
    let (status, body) = post(app, "/query", ANY_DIAGNOSIS).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn no_dataset_is_unavailable() {
    let app = router(AppState::new(None, ApiConfig::default()));
    let (status, body) = get(&app, "/cohort/summary").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body["error"].as_str().unwrap().contains("no dataset"));
    let (status, _) = post(&app, "/query", ANY_DIAGNOSIS).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn summary_reports_cohort_shares() {
    let app = app_with(998, ApiConfig::default());
    let (status, body) = get(&app, "/cohort/summary").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["cohort_size"], 998);
    assert_eq!(body["positives"], 788);
    assert_eq!(body["gender"]["female"], 599);
}

#[tokio::test]
async fn query_returns_counts_and_budget() {
    let app = app();
    let (status, body) = post(&app, "/query", ANY_DIAGNOSIS).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["session_id"], "session-1");
    assert_eq!(body["matched"], 300);
    assert_eq!(body["unmatched"], 0);
    assert_eq!(body["budget"], 50);

    let (_, body) = post(&app, "/query?budget=12", ANY_DIAGNOSIS).await;
    assert_eq!(body["session_id"], "session-2");
    assert_eq!(body["budget"], 12);
}

#[tokio::test]
async fn bad_queries_are_rejected() {
    let app = app();
    let zero = r#"{"sentinel": {"class": "ICD-10"}, "window_days": 0}"#;
    let (status, body) = post(&app, "/query", zero).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("window"), "{body}");

    for bad in ["", "{", r#"{"sentinel": {"class": "XYZ"}, "window_days": 5}"#, "[1,2]"] {
        let (status, _) = post(&app, "/query", bad).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad:?}");
    }
    let (status, _) = post(&app, "/query?budget=lots", ANY_DIAGNOSIS).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn sentinel_without_events_matches_nobody() {
    let app = app();
    let q = r#"{"sentinel": {"class": "CPT4", "codes": ["00000"]}, "window_days": 30}"#;
    let (status, body) = post(&app, "/query", q).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["matched"], 0);
    assert_eq!(body["unmatched"], 300);
    let id = body["session_id"].as_str().unwrap();
    let (status, body) = get(&app, &format!("/scatter?session={id}")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("empty aligned cohort"));
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let app = app();
    let (status, _) = get(&app, "/scatter?session=session-99").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, "/search?session=nope&q=x").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post(&app, "/drilldown", r#"{"session": "nope", "node_id": "x"}"#).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, "/scatter").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn budget_below_roots_reports_minimum() {
    let app = app();
    let id = new_session(&app).await;
    let (status, body) = get(&app, &format!("/scatter?session={id}&budget=1")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let minimum = body["minimum_budget"].as_u64().unwrap();
    assert!(minimum > 1);
    let (status, body) = get(&app, &format!("/scatter?session={id}&budget={minimum}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["points"].as_array().unwrap().len() as u64, minimum);
}

#[tokio::test]
async fn scatter_is_byte_identical_across_calls_and_servers() {
    let first = app();
    let id = new_session(&first).await;
    let uri = format!("/scatter?session={id}");
    let (_, body, a) = call(&first, Method::GET, &uri, "").await;
    let (_, _, b) = call(&first, Method::GET, &uri, "").await;
    assert_eq!(a, b);
    let points = body["points"].as_array().unwrap();
    assert!(!points.is_empty() && points.len() <= 50);

    // A fresh server replaying the same requests answers with the same bytes.
    let second = app();
    assert_eq!(new_session(&second).await, id);
    let (_, _, c) = call(&second, Method::GET, &uri, "").await;
    assert_eq!(a, c);
}

#[tokio::test]
async fn drill_down_and_roll_up_round_trip() {
    let app = app();
    let id = new_session(&app).await;
    let (_, before) = get(&app, &format!("/scatter?session={id}&budget=10")).await;
    let points = before["points"].as_array().unwrap();
    let parent = points.iter().find(|p| p["has_children"] == true).unwrap();
    let node = parent["node_id"].as_str().unwrap();
    let req = json!({"session": id, "node_id": node}).to_string();

    let (status, down) = post(&app, "/drilldown", &req).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = down["points"].as_array().unwrap().iter().map(|p| p["node_id"].as_str().unwrap()).collect();
    assert!(!ids.contains(&node));
    assert!(ids.iter().any(|i| i.starts_with(node)) || ids.len() >= points.len());

    // The node is no longer in the cut.
    let (status, _) = post(&app, "/drilldown", &req).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, up) = post(&app, "/rollup", &req).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(up["points"], before["points"]);
    let (status, _) = post(&app, "/rollup", &req).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (_, wide) = get(&app, &format!("/scatter?session={id}&budget=50")).await;
    let leaf = wide["points"].as_array().unwrap().iter().find(|p| p["has_children"] == false).unwrap().clone();
    let leaf_req = json!({"session": id, "node_id": leaf["node_id"]}).to_string();
    let (status, body) = post(&app, "/drilldown", &leaf_req).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("leaf"));

    let missing = json!({"session": id, "node_id": "ICD-10/NOPE"}).to_string();
    let (status, _) = post(&app, "/drilldown", &missing).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = post(&app, "/rollup", r#"{"session": "x"}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&app, "/rollup", r#"{"session": "x", "node_id": "y", "extra": 1}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn search_finds_labels_case_insensitively() {
    let app = app();
    let id = new_session(&app).await;
    let (status, body) = get(&app, &format!("/search?session={id}&q=COUGH")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["query"], "COUGH");
    let hits = body["results"].as_array().unwrap();
    assert_eq!(hits[0]["node_id"], "ICD-10/R05");
    assert!(hits[0]["support"].as_f64().unwrap() > 0.0);
    let (_, body) = get(&app, &format!("/search?session={id}&q=zzzz-none")).await;
    assert!(body["results"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn idle_sessions_expire() {
    let app = app_with(
        100,
        ApiConfig {
            session_timeout: Duration::ZERO,
            ..ApiConfig::default()
        },
    );
    let id = new_session(&app).await;
    let (status, _) = get(&app, &format!("/scatter?session={id}")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_are_independent() {
    let app = Arc::new(app());
    let mut tasks = Vec::new();
    for _ in 0..8 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let id = new_session(&app).await;
            let (_, body, bytes) = call(&app, Method::GET, &format!("/scatter?session={id}"), "").await;
            (id, body["points"].clone(), bytes)
        }));
    }
    let mut ids = Vec::new();
    let mut points = Vec::new();
    for t in tasks {
        let (id, p, _) = t.await.unwrap();
        ids.push(id);
        points.push(p);
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 8);
    assert!(points.windows(2).all(|w| w[0] == w[1]));
}
