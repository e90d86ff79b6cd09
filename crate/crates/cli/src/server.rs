//! Stateless JSON plan server.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::ops::{self, CapParams, PlanParams, SweepParams};

const SCHEMA: &str = include_str!("instance.schema.json");

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    pub instance_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
struct WithInstance<P> {
    instance: serde_json::Value,
    #[serde(flatten)]
    params: P,
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error_response(e: CliError) -> Response {
    let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let body = serde_json::json!({ "error": e.message });
    json_response(status, body.to_string())
}

/// Parse the body, resolve the instance, and run `f` off the async runtime.
async fn handle<P, F>(cfg: Arc<ServerConfig>, body: Result<Json<serde_json::Value>, JsonRejection>, f: F) -> Response
where
    P: DeserializeOwned + Send + 'static,
    F: FnOnce(&decoopt_core::model::Instance, &P) -> CliResult<String> + Send + 'static,
{
    let Json(value) = match body {
        Ok(v) => v,
        Err(e) => return error_response(CliError::validation(format!("invalid request: {}", e.body_text()))),
    };
    let work = move || -> CliResult<String> {
        let req: WithInstance<P> =
            serde_json::from_value(value).map_err(|e| CliError::validation(format!("invalid request: {e}")))?;
        let inst = ops::resolve_instance(&req.instance, cfg.instance_dir.as_deref())?;
        f(&inst, &req.params)
    };
    match tokio::task::spawn_blocking(work).await {
        Ok(Ok(body)) => json_response(StatusCode::OK, body),
        Ok(Err(e)) => error_response(e),
        Err(e) => error_response(CliError::internal(format!("worker failed: {e}"))),
    }
}

async fn plan(
    State(cfg): State<Arc<ServerConfig>>,
    body: Result<Json<serde_json::Value>, JsonRejection>,
) -> Response {
    handle(cfg, body, |inst, p: &PlanParams| ops::render(&ops::plan(inst, p)?)).await
}

async fn cap(
    State(cfg): State<Arc<ServerConfig>>,
    body: Result<Json<serde_json::Value>, JsonRejection>,
) -> Response {
    handle(cfg, body, |inst, p: &CapParams| ops::render(&ops::cap(inst, p)?)).await
}

async fn sweep(
    State(cfg): State<Arc<ServerConfig>>,
    body: Result<Json<serde_json::Value>, JsonRejection>,
) -> Response {
    handle(cfg, body, |inst, p: &SweepParams| ops::render(&ops::sweep(inst, p)?.0)).await
}

async fn schema(State(cfg): State<Arc<ServerConfig>>) -> Response {
    let mut schema: serde_json::Value = serde_json::from_str(SCHEMA).expect("bundled schema is valid JSON");
    schema["examples"] = serde_json::Value::from(fixture_names(cfg.instance_dir.as_deref()));
    json_response(StatusCode::OK, schema.to_string())
}

async fn health() -> &'static str {
    "ok"
}

/// Names of the `*.json` files in the instance directory, sorted.
pub fn fixture_names(dir: Option<&std::path::Path>) -> Vec<String> {
    let Some(dir) = dir else { return Vec::new() };
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".json").map(str::to_owned))
        .collect();
    names.sort();
    names
}

pub fn router(cfg: ServerConfig) -> Router {
    Router::new()
        .route("/api/plan", post(plan))
        .route("/api/cap", post(cap))
        .route("/api/sweep", post(sweep))
        .route("/api/schema", get(schema))
        .route("/api/health", get(health))
        .with_state(Arc::new(cfg))
}

pub async fn serve(port: u16, cfg: ServerConfig) -> std::io::Result<()> {
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(cfg)).await
}
