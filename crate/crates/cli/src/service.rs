//! HTTP routing service over immutable model state.
//!
//! - `POST /route` with `{"embedding": [..]}` returns the routing decision
//!   and `latency_ms`; 400 for a malformed body, 422 for a wrong width.
//! - `GET /healthz` returns the catalog hash and router config.

use std::future::Future;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use radialrouter_core::data::LlmCatalog;
use radialrouter_core::router::{RouterConfig, RouterModel, RoutingDecision};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

pub struct AppState {
    pub model: RouterModel,
    pub catalog: LlmCatalog,
    pub catalog_hash: String,
    pub alpha: f64,
}

impl AppState {
    pub fn new(model: RouterModel, catalog: LlmCatalog, alpha: f64) -> Self {
        Self {
            catalog_hash: catalog.hash(),
            model,
            catalog,
            alpha,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteRequest {
    pub embedding: Vec<f64>,
}

/// Decision as printed by `radialrouter route`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteOutput {
    pub chosen_name: String,
    pub chosen_index: usize,
    pub probabilities: Vec<f64>,
}

impl From<RoutingDecision> for RouteOutput {
    fn from(d: RoutingDecision) -> Self {
        Self {
            chosen_name: d.chosen_name,
            chosen_index: d.chosen_index,
            probabilities: d.probabilities,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteResponse {
    #[serde(flatten)]
    pub decision: RouteOutput,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub catalog_hash: String,
    pub llms: Vec<String>,
    pub alpha: f64,
    pub router: RouterConfig,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn reject(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

async fn route(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let start = Instant::now();
    let req: RouteRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return reject(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    if let Err(e) = state.model.check_embedding(req.embedding.len()) {
        return reject(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
    }
    match state.model.route(&req.embedding, &state.catalog) {
        Ok(d) => Json(RouteResponse {
            decision: d.into(),
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        })
        .into_response(),
        Err(e) if e.is_usage() => reject(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        catalog_hash: state.catalog_hash.clone(),
        llms: state.catalog.names().into_iter().map(String::from).collect(),
        alpha: state.alpha,
        router: state.model.config.clone(),
    })
}

pub fn app(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/route", post(route))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve<F>(listener: TcpListener, state: Arc<AppState>, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, app(state)).with_graceful_shutdown(shutdown).await
}
