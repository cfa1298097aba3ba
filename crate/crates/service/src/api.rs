//! HTTP API. Errors are `application/problem+json` documents.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/cases` | store a dossier |
//! | GET | `/cases/{id}` | |
//! | POST | `/runs` | `{case_id, config?, nonce?}`; 202, executed by the worker pool |
//! | GET | `/runs/{id}` | status summary |
//! | GET | `/runs/{id}/trace?offset=n&follow=true` | NDJSON log from event `n`; `follow` streams until the run stops executing |
//! | GET | `/runs/{id}/report` | draft chain and final report |
//! | POST | `/runs/{id}/critiques` | one critique or `{critiques: [...]}`; 409 on a stale version |
//! | POST | `/runs/{id}/approve` | `{reviewer?}`; repeating it returns the same report |
//!
//! With an API token configured every route except `/health` requires
//! `Authorization: Bearer <token>`.

use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use feat_core::pipeline::CritiqueInput;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::runs::RunRequest;
use crate::{Service, ServiceError, StoreError};

const FOLLOW_POLL: Duration = Duration::from_millis(25);

#[derive(Debug, Clone, Serialize)]
pub struct Problem {
    #[serde(rename = "type")]
    pub kind: String,
    pub title: String,
    pub status: u16,
    pub detail: String,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, Value>,
}

impl Problem {
    pub fn new(status: StatusCode, kind: &str, detail: impl Into<String>) -> Self {
        Problem {
            kind: format!("urn:feat:problem:{kind}"),
            title: status.canonical_reason().unwrap_or("error").to_string(),
            status: status.as_u16(),
            detail: detail.into(),
            extra: Default::default(),
        }
    }
}

impl IntoResponse for Problem {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut resp = (status, Json(&self)).into_response();
        resp.headers_mut()
            .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/problem+json"));
        resp
    }
}

impl From<ServiceError> for Problem {
    fn from(e: ServiceError) -> Self {
        let detail = e.to_string();
        match e {
            ServiceError::Store(StoreError::NotFound(_)) => Problem::new(StatusCode::NOT_FOUND, "not-found", detail),
            ServiceError::Store(StoreError::InvalidId(_)) => Problem::new(StatusCode::BAD_REQUEST, "invalid-id", detail),
            ServiceError::Store(StoreError::Conflict(_)) | ServiceError::Conflict(_) => {
                Problem::new(StatusCode::CONFLICT, "conflict", detail)
            }
            ServiceError::Stale { target, current } => {
                let mut p = Problem::new(StatusCode::CONFLICT, "stale-version", detail);
                p.extra.insert("target_version".into(), target.into());
                p.extra.insert("current_version".into(), current.into());
                p
            }
            ServiceError::Busy(_) => Problem::new(StatusCode::CONFLICT, "run-busy", detail),
            ServiceError::Invalid(_) => Problem::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid-request", detail),
            ServiceError::Failed(_) => Problem::new(StatusCode::BAD_GATEWAY, "run-failed", detail),
            ServiceError::Store(_) | ServiceError::Persist(_) => {
                Problem::new(StatusCode::INTERNAL_SERVER_ERROR, "persistence", detail)
            }
            ServiceError::Config(_) | ServiceError::Startup(_) => {
                Problem::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
            }
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Service>,
    pub workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(service: Arc<Service>) -> Self {
        let workers = Arc::new(Semaphore::new(service.config().workers));
        AppState { service, workers }
    }

    /// Queues an already registered run on the worker pool.
    pub fn spawn_run(&self, run_id: String) {
        let service = self.service.clone();
        let workers = self.workers.clone();
        tokio::spawn(async move {
            let _permit = workers.acquire_owned().await.expect("semaphore open");
            let id = run_id.clone();
            match tokio::task::spawn_blocking(move || service.execute(&id)).await {
                Ok(Ok(_)) => {}
                Ok(Err(e)) => tracing::error!(%run_id, error = %e, "run aborted"),
                Err(e) => tracing::error!(%run_id, error = %e, "run worker panicked"),
            }
        });
    }
}

async fn blocking<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, Problem> {
    let service = state.service.clone();
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| Problem::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(Problem::from)
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, Problem> {
    serde_json::from_slice(body).map_err(|e| Problem::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid-request", e.to_string()))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn post_case(State(state): State<AppState>, body: Bytes) -> Result<Response, Problem> {
    let (dossier, created) = blocking(&state, move |s| s.put_case(&body)).await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(json!({"case_id": dossier.case_id, "created": created}))).into_response())
}

async fn get_case(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, Problem> {
    let dossier = blocking(&state, move |s| s.get_case(&id)).await?;
    Ok(Json(dossier).into_response())
}

async fn post_run(State(state): State<AppState>, body: Bytes) -> Result<Response, Problem> {
    let req: RunRequest = parse_body(&body)?;
    let entry = blocking(&state, move |s| s.create_run(&req)).await?;
    state.spawn_run(entry.run_id.clone());
    let location = format!("/runs/{}", entry.run_id);
    let mut resp = (
        StatusCode::ACCEPTED,
        Json(json!({"run_id": entry.run_id, "status": "queued", "config": entry.config})),
    )
        .into_response();
    resp.headers_mut()
        .insert(header::LOCATION, HeaderValue::from_str(&location).expect("run ids are ascii"));
    Ok(resp)
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, Problem> {
    Ok(Json(blocking(&state, move |s| s.view(&id)).await?).into_response())
}

#[derive(Debug, Deserialize)]
struct TraceQuery {
    #[serde(default)]
    offset: usize,
    #[serde(default)]
    follow: bool,
}

async fn get_trace(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<TraceQuery>) -> Result<Response, Problem> {
    let first_id = id.clone();
    let (bytes, next) = blocking(&state, move |s| s.trace(&first_id, q.offset)).await?;
    let body = if !q.follow {
        Body::from(bytes)
    } else {
        let chunks = futures::stream::unfold((state, id, Some(bytes), next, false), |(state, id, first, offset, done)| async move {
            if let Some(b) = first {
                return Some((Ok::<_, std::io::Error>(Bytes::from(b)), (state, id, None, offset, done)));
            }
            if done {
                return None;
            }
            loop {
                // Sample before reading: once the worker is gone, one more
                // read sees the whole log.
                let finished = !state.service.is_executing(&id);
                let rid = id.clone();
                let read = blocking(&state, move |s| s.trace(&rid, offset)).await;
                match read {
                    Ok((b, next)) if !b.is_empty() => {
                        return Some((Ok(Bytes::from(b)), (state, id, None, next, finished)));
                    }
                    Ok(_) if finished => return None,
                    Ok(_) => tokio::time::sleep(FOLLOW_POLL).await,
                    Err(p) => return Some((Err(std::io::Error::other(p.detail)), (state, id, None, offset, true))),
                }
            }
        });
        Body::from_stream(chunks)
    };
    let mut resp = Response::new(body);
    resp.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    resp.headers_mut().insert("x-next-offset", HeaderValue::from(next));
    Ok(resp)
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, Problem> {
    Ok(Json(blocking(&state, move |s| s.report(&id)).await?).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CritiqueBody {
    Batch { critiques: Vec<CritiqueInput> },
    One(CritiqueInput),
}

async fn post_critiques(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, Problem> {
    let inputs = match parse_body::<CritiqueBody>(&body)? {
        CritiqueBody::Batch { critiques } => critiques,
        CritiqueBody::One(c) => vec![c],
    };
    let draft = blocking(&state, move |s| s.critique(&id, inputs)).await?;
    Ok((StatusCode::CREATED, Json(draft)).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApproveBody {
    #[serde(default)]
    reviewer: Option<String>,
}

async fn post_approve(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, Problem> {
    let req: ApproveBody = if body.iter().all(u8::is_ascii_whitespace) {
        ApproveBody::default()
    } else {
        parse_body(&body)?
    };
    let report = blocking(&state, move |s| s.approve(&id, req.reviewer)).await?;
    Ok(Json(report).into_response())
}

async fn require_token(State(token): State<Arc<String>>, req: Request, next: Next) -> Response {
    let ok = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == token.as_str());
    if ok {
        next.run(req).await
    } else {
        Problem::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let mut api = Router::new()
        .route("/cases", post(post_case))
        .route("/cases/{id}", get(get_case))
        .route("/runs", post(post_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/trace", get(get_trace))
        .route("/runs/{id}/report", get(get_report))
        .route("/runs/{id}/critiques", post(post_critiques))
        .route("/runs/{id}/approve", post(post_approve));
    if let Some(token) = state.service.config().api_token.clone() {
        api = api.layer(middleware::from_fn_with_state(Arc::new(token), require_token));
    }
    api.route("/health", get(health))
        .fallback(|| async { Problem::new(StatusCode::NOT_FOUND, "not-found", "no such route") })
        .with_state(state)
}

/// Recovers interrupted runs, restarts queued ones, then serves until
/// `shutdown` resolves.
pub async fn serve(
    service: Arc<Service>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let state = AppState::new(service.clone());
    let recovered = {
        let s = service.clone();
        tokio::task::spawn_blocking(move || s.recover())
            .await
            .map_err(|e| ServiceError::Startup(e.to_string()))??
    };
    for r in recovered {
        match r {
            crate::Recovery::Queued { run_id } => match service.requeue(&run_id) {
                Ok(_) => state.spawn_run(run_id),
                Err(e) => tracing::warn!(%run_id, error = %e, "queued run not restarted"),
            },
            other => tracing::info!(?other, "recovery"),
        }
    }
    let addr = listener.local_addr().map_err(|e| ServiceError::Startup(e.to_string()))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServiceError::Startup(e.to_string()))
}
