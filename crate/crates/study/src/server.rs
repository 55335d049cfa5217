//! HTTP routes over a shared [`Study`].

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::service::{CreateSession, ExportQuery, Study, SubmitReview};
use crate::{StudyError, StudyResult};

pub type SharedStudy = Arc<Mutex<Study>>;

/// Header carrying the browser tab that holds a session.
pub const TAB_HEADER: &str = "x-tab-id";

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        if self.status() >= 500 {
            log::error!("{self}");
        }
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> StudyResult<T> {
    serde_json::from_slice(body).map_err(|e| StudyError::Validation(format!("invalid request body: {e}")))
}

fn tab(headers: &HeaderMap) -> Option<String> {
    headers.get(TAB_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string)
}

fn with_study<T: Serialize>(study: &SharedStudy, f: impl FnOnce(&mut Study) -> StudyResult<T>) -> Response {
    let mut guard = match study.lock() {
        Ok(g) => g,
        Err(p) => p.into_inner(),
    };
    match f(&mut guard) {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn create(State(study): State<SharedStudy>, body: Bytes) -> Response {
    with_study(&study, |s| s.create_session(parse::<CreateSession>(&body)?))
}

async fn next(State(study): State<SharedStudy>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    with_study(&study, |s| s.next_case(&id, tab(&headers).as_deref()))
}

async fn review(State(study): State<SharedStudy>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    with_study(&study, |s| s.submit_review(&id, parse::<SubmitReview>(&body)?, tab(&headers).as_deref()))
}

async fn export(State(study): State<SharedStudy>, q: Result<Query<ExportQuery>, QueryRejection>) -> Response {
    let Ok(Query(q)) = q else {
        return StudyError::Validation("invalid export query".into()).into_response();
    };
    let text = match study.lock() {
        Ok(g) => g.export(&q),
        Err(p) => p.into_inner().export(&q),
    };
    ([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response()
}

async fn health(State(study): State<SharedStudy>) -> Response {
    with_study(&study, |s| Ok(s.health()))
}

async fn not_found() -> Response {
    StudyError::UnknownSession("no such route".into()).into_response()
}

pub fn router(study: SharedStudy) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/review", post(review))
        .route("/export", get(export))
        .route("/health", get(health))
        .fallback(not_found)
        .with_state(study)
}

pub async fn serve(study: SharedStudy, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(study)).await
}

/// Runs the server on its own runtime thread; returns the bound address.
pub fn spawn(study: SharedStudy, addr: SocketAddr) -> std::io::Result<(SocketAddr, std::thread::JoinHandle<std::io::Result<()>>)> {
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let bound = listener.local_addr()?;
    let handle = std::thread::spawn(move || runtime.block_on(serve(study, listener)));
    Ok((bound, handle))
}
