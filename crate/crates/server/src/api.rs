//! HTTP routes over a registry of curation sessions. Payloads reuse the
//! JSON shapes of the file formats.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ontoplace_core::SearchMethod;
use serde::Deserialize;
use serde_json::json;

use crate::session::{AcceptRequest, CurationSession, SessionError};

#[derive(Default, Clone)]
pub struct Registry {
    sessions: Arc<RwLock<BTreeMap<String, Arc<CurationSession>>>>,
}

impl Registry {
    pub fn insert(&self, session: CurationSession) -> Arc<CurationSession> {
        let session = Arc::new(session);
        self.sessions.write().expect("registry lock").insert(session.id().to_string(), session.clone());
        session
    }

    pub fn get(&self, id: &str) -> Result<Arc<CurationSession>, ApiError> {
        self.sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.into()).into())
    }
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use SessionError::*;
        let (status, kind) = match &self.0 {
            UnknownSession(_) | UnknownMention(_) => (StatusCode::NOT_FOUND, "not-found"),
            NotPending(_) => (StatusCode::CONFLICT, "not-pending"),
            StaleSlate { .. } => (StatusCode::CONFLICT, "stale-slate"),
            NoSlate(_) => (StatusCode::CONFLICT, "no-slate"),
            NotInSlate(_) | NoEdges => (StatusCode::UNPROCESSABLE_ENTITY, "invalid-placement"),
            MethodUnavailable(_) => (StatusCode::BAD_REQUEST, "method-unavailable"),
            Candidates(ontoplace_core::candidates::CandidateError::InvalidK(_)) => (StatusCode::BAD_REQUEST, "invalid-k"),
            Ontology(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ontology"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        (status, Json(json!({ "error": kind, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, SessionError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.expect("worker task").map_err(ApiError)
}

#[derive(Deserialize)]
struct CandidateQuery {
    k: Option<usize>,
    method: Option<String>,
}

fn method_of(raw: Option<&str>) -> Result<SearchMethod, Response> {
    raw.unwrap_or("lexical").parse().map_err(|e: String| {
        (StatusCode::BAD_REQUEST, Json(json!({ "error": "invalid-method", "message": e }))).into_response()
    })
}

async fn list_mentions(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult {
    let s = reg.get(&id)?;
    Ok(Json(json!({ "version": s.version(), "mentions": s.pending() })).into_response())
}

async fn candidates(
    State(reg): State<Registry>,
    Path((id, mid)): Path<(String, String)>,
    Query(q): Query<CandidateQuery>,
) -> ApiResult {
    let s = reg.get(&id)?;
    let method = match method_of(q.method.as_deref()) {
        Ok(m) => m,
        Err(r) => return Ok(r),
    };
    let k = q.k.unwrap_or(10);
    let slate = blocking(move || s.get_candidates(&mid, k, method)).await?;
    Ok(Json(slate).into_response())
}

async fn accept(
    State(reg): State<Registry>,
    Path((id, mid)): Path<(String, String)>,
    Json(body): Json<AcceptRequest>,
) -> ApiResult {
    let s = reg.get(&id)?;
    let version = blocking(move || s.accept_placement(&mid, &body)).await?;
    Ok(Json(json!({ "version": version })).into_response())
}

#[derive(Deserialize, Default)]
struct SkipBody {
    who: Option<String>,
}

async fn skip(
    State(reg): State<Registry>,
    Path((id, mid)): Path<(String, String)>,
    body: Option<Json<SkipBody>>,
) -> ApiResult {
    let s = reg.get(&id)?;
    let who = body.map(|Json(b)| b).unwrap_or_default().who;
    let queue = s.skip_mention(&mid, who.as_deref())?;
    Ok(Json(json!({ "ok": true, "queue": queue })).into_response())
}

async fn version(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(json!({ "version": reg.get(&id)?.version() })).into_response())
}

async fn log(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(reg.get(&id)?.log()).into_response())
}

async fn evaluation(State(reg): State<Registry>, Path(id): Path<String>, Query(q): Query<CandidateQuery>) -> ApiResult {
    let s = reg.get(&id)?;
    let method = match method_of(q.method.as_deref()) {
        Ok(m) => m,
        Err(r) => return Ok(r),
    };
    let k = q.k.unwrap_or(10);
    let report = blocking(move || s.evaluate(k, method)).await?;
    Ok(Json(report).into_response())
}

pub fn router(registry: Registry) -> Router {
    Router::new()
        .route("/sessions/{id}/mentions", get(list_mentions))
        .route("/sessions/{id}/mentions/{mid}/candidates", get(candidates))
        .route("/sessions/{id}/mentions/{mid}/accept", post(accept))
        .route("/sessions/{id}/mentions/{mid}/skip", post(skip))
        .route("/sessions/{id}/ontology/version", get(version))
        .route("/sessions/{id}/log", get(log))
        .route("/sessions/{id}/evaluation", get(evaluation))
        .with_state(registry)
}

/// Serves the registry until the process is stopped.
pub async fn serve(addr: SocketAddr, registry: Registry) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(registry)).await
}
