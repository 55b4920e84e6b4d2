//! HTTP + JSON service over one loaded dataset.
//!
//! Every response body is a JSON object carrying `engine_version`. Sessions
//! live in memory and expire after an idle timeout.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::error::Error;
use crate::model::attribute_summary;
use crate::query::TemporalQuery;
use crate::session::{Engine, Session, DEFAULT_BUDGET};
use crate::ENGINE_VERSION;

#[derive(Debug, Clone, Copy)]
pub struct ApiConfig {
    pub default_budget: usize,
    pub session_timeout: Duration,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            default_budget: DEFAULT_BUDGET,
            session_timeout: Duration::from_secs(60 * 60),
        }
    }
}

struct Entry {
    session: Arc<Mutex<Session>>,
    last_used: Instant,
}

#[derive(Default)]
struct Sessions {
    next_id: u64,
    live: HashMap<String, Entry>,
}

pub struct AppState {
    engine: Option<Arc<Engine>>,
    config: ApiConfig,
    sessions: Mutex<Sessions>,
}

impl AppState {
    pub fn new(engine: Option<Engine>, config: ApiConfig) -> Arc<Self> {
        Arc::new(AppState {
            engine: engine.map(Arc::new),
            config,
            sessions: Mutex::default(),
        })
    }

    fn engine(&self) -> Result<Arc<Engine>, ApiError> {
        self.engine.clone().ok_or_else(|| {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no dataset loaded".to_string())
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let mut sessions = self.sessions.lock().expect("session table poisoned");
        self.expire(&mut sessions);
        let entry = sessions
            .live
            .get_mut(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id:?}")))?;
        entry.last_used = Instant::now();
        Ok(entry.session.clone())
    }

    fn expire(&self, sessions: &mut Sessions) {
        let timeout = self.config.session_timeout;
        sessions.live.retain(|id, e| {
            let keep = e.last_used.elapsed() < timeout;
            if !keep {
                log::info!("session {id} expired");
            }
            keep
        });
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/cohort/summary", get(cohort_summary))
        .route("/query", post(query))
        .route("/scatter", get(scatter))
        .route("/drilldown", post(drilldown))
        .route("/rollup", post(rollup))
        .route("/search", get(search))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Map<String, Value>,
}

impl ApiError {
    fn new(status: StatusCode, message: String) -> Self {
        let mut body = Map::new();
        body.insert("error".into(), Value::String(message));
        ApiError { status, body }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message.into())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidQuery(_) | Error::InvalidWindow(_) | Error::BudgetTooSmall { .. } => StatusCode::BAD_REQUEST,
            Error::NoSuchNode(_) => StatusCode::NOT_FOUND,
            Error::NotInCut(_) | Error::CannotExpandLeaf(_) | Error::CannotRollUp { .. } => StatusCode::CONFLICT,
            Error::EmptyAlignedCohort | Error::DegenerateOutcome | Error::EmptyCohort | Error::MissingLabel(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut err = ApiError::new(status, e.to_string());
        if let Error::BudgetTooSmall { minimum } = e {
            err.body.insert("minimum_budget".into(), json!(minimum));
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, versioned(Value::Object(self.body))).into_response()
    }
}

fn versioned(body: Value) -> Json<Value> {
    let mut map = match body {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("data".into(), other);
            m
        }
    };
    map.insert("engine_version".into(), Value::String(ENGINE_VERSION.into()));
    Json(Value::Object(map))
}

type ApiResult = Result<Json<Value>, ApiError>;

fn to_value(v: impl serde::Serialize) -> Result<Value, ApiError> {
    serde_json::to_value(v).map_err(|e| ApiError::from(Error::from(e)))
}

async fn cohort_summary(State(state): State<Arc<AppState>>) -> ApiResult {
    let engine = state.engine()?;
    Ok(versioned(to_value(attribute_summary(&engine.dataset)?)?))
}

fn parse_budget(params: &HashMap<String, String>) -> Result<Option<usize>, ApiError> {
    params
        .get("budget")
        .map(|b| {
            b.parse::<usize>()
                .map_err(|_| ApiError::bad_request(format!("budget must be a non-negative integer, got {b:?}")))
        })
        .transpose()
}

fn required<'a>(params: &'a HashMap<String, String>, key: &str) -> Result<&'a str, ApiError> {
    params
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| ApiError::bad_request(format!("missing query parameter {key:?}")))
}

async fn query(
    State(state): State<Arc<AppState>>,
    Query(params): Query<HashMap<String, String>>,
    body: Bytes,
) -> ApiResult {
    let engine = state.engine()?;
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let query = TemporalQuery::from_json(text)?;
    let budget = parse_budget(&params)?.unwrap_or(state.config.default_budget);
    let id = {
        let mut sessions = state.sessions.lock().expect("session table poisoned");
        sessions.next_id += 1;
        format!("session-{}", sessions.next_id)
    };
    let session = tokio::task::spawn_blocking({
        let engine = engine.clone();
        let id = id.clone();
        move || Session::new(&engine, id, query, budget)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let body = json!({
        "session_id": id,
        "matched": session.matched(),
        "unmatched": session.unmatched(),
        "budget": session.budget(),
    });
    let mut sessions = state.sessions.lock().expect("session table poisoned");
    state.expire(&mut sessions);
    sessions.live.insert(
        id,
        Entry {
            session: Arc::new(Mutex::new(session)),
            last_used: Instant::now(),
        },
    );
    Ok(versioned(body))
}

fn points_body(session: &Session, points: Vec<crate::stats::ScatterPoint>) -> Result<Value, ApiError> {
    Ok(json!({
        "session_id": session.id,
        "budget": session.budget(),
        "points": to_value(points)?,
    }))
}

async fn scatter(State(state): State<Arc<AppState>>, Query(params): Query<HashMap<String, String>>) -> ApiResult {
    let engine = state.engine()?;
    let budget = parse_budget(&params)?;
    let session = state.session(required(&params, "session")?)?;
    let mut s = session.lock().expect("session poisoned");
    let points = s.scatter(&engine, budget)?;
    Ok(versioned(points_body(&s, points)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRequest {
    session: String,
    node_id: String,
}

fn node_request(body: &Bytes) -> Result<NodeRequest, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request: {e}")))
}

async fn drilldown(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let engine = state.engine()?;
    let req = node_request(&body)?;
    let session = state.session(&req.session)?;
    let mut s = session.lock().expect("session poisoned");
    let points = s.drill_down(&engine, &req.node_id)?;
    Ok(versioned(points_body(&s, points)?))
}

async fn rollup(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let engine = state.engine()?;
    let req = node_request(&body)?;
    let session = state.session(&req.session)?;
    let mut s = session.lock().expect("session poisoned");
    let points = s.roll_up(&engine, &req.node_id)?;
    Ok(versioned(points_body(&s, points)?))
}

async fn search(State(state): State<Arc<AppState>>, Query(params): Query<HashMap<String, String>>) -> ApiResult {
    let engine = state.engine()?;
    let session = state.session(required(&params, "session")?)?;
    let q = params.get("q").map(String::as_str).unwrap_or("");
    let s = session.lock().expect("session poisoned");
    Ok(versioned(json!({
        "query": q,
        "results": to_value(s.search(&engine, q))?,
    })))
}
