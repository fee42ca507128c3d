//! HTTP/JSON routes over a [`Store`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::SessionError;
use crate::session::{InterveneRequest, JudgeRequest, NsQuery, ScoringMode, SessionSpec};
use crate::store::Store;

impl IntoResponse for SessionError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type Shared = State<Arc<Store>>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, SessionError> {
    serde_json::from_slice(body).map_err(|e| SessionError::Validation(format!("bad request body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, SessionError> + Send + 'static,
) -> Result<T, SessionError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| SessionError::Internal(e.to_string()))?
}

async fn create(State(store): Shared, body: Bytes) -> Result<Response, SessionError> {
    let spec: SessionSpec = parse_body(&body)?;
    let snap = blocking(move || store.create(&spec)).await?;
    Ok((StatusCode::CREATED, Json(snap)).into_response())
}

async fn snapshot(State(store): Shared, Path(id): Path<String>) -> Result<Response, SessionError> {
    Ok(Json(store.snapshot(&id)?).into_response())
}

async fn intervene(State(store): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, SessionError> {
    let req: InterveneRequest = parse_body(&body)?;
    let out = blocking(move || store.intervene(&id, &req)).await?;
    Ok(Json(out).into_response())
}

async fn judge(State(store): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, SessionError> {
    let req: JudgeRequest = parse_body(&body)?;
    let out = blocking(move || store.judge(&id, &req)).await?;
    Ok(Json(out).into_response())
}

async fn analytics(
    State(store): Shared,
    Path(id): Path<String>,
    Query(ns): Query<NsQuery>,
) -> Result<Response, SessionError> {
    let out = blocking(move || store.analytics(&id, ns)).await?;
    Ok(Json(out).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct ScoreQuery {
    #[serde(default)]
    mode: ScoringMode,
}

async fn score(
    State(store): Shared,
    Path(id): Path<String>,
    Query(q): Query<ScoreQuery>,
) -> Result<Response, SessionError> {
    Ok(Json(store.score(&id, q.mode)?).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ExportPart {
    #[default]
    Behavior,
    FreeText,
    Events,
}

#[derive(Debug, Default, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    part: ExportPart,
}

async fn export(
    State(store): Shared,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, SessionError> {
    let (body, kind) = match q.part {
        ExportPart::Behavior => (store.export_csv(&id)?, "text/csv"),
        ExportPart::FreeText => (store.export_free_text(&id)?, "text/csv"),
        ExportPart::Events => {
            let mut s = String::new();
            for e in store.events(&id)? {
                s.push_str(&serde_json::to_string(&e).expect("events serialise"));
                s.push('\n');
            }
            (s, "application/x-ndjson")
        }
    };
    Ok(([(header::CONTENT_TYPE, kind)], body).into_response())
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(snapshot))
        .route("/sessions/{id}/intervene", post(intervene))
        .route("/sessions/{id}/judge", post(judge))
        .route("/sessions/{id}/analytics", get(analytics))
        .route("/sessions/{id}/score", get(score))
        .route("/sessions/{id}/export", get(export))
        .with_state(store)
}

/// Serves until the process is stopped.
pub async fn serve(store: Arc<Store>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}
