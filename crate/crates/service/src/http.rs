//! HTTP routes.
//!
//! `POST /chat` streams server-sent events by default. Every frame carries
//! one event:
//!
//! ```text
//! event: <type>
//! data: <the event as one line of JSON, including "type" and "seq">
//!
//! ```
//!
//! With `"stream": false` the reply is a single JSON object instead. Errors
//! outside the stream have the body `{"error": {"kind": ..., "message": ...}}`.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream;
use meff_core::backend::BackendError;
use meff_core::fintools::{execute, ToolKind};
use meff_core::turn::{ChatEvent, RetrievedChunk, TurnError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use crate::sessions::valid_id;
use crate::state::{parse_expert, AppState, ChatError, ChatInput};

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/chat", post(chat))
        .route("/tools/execute", post(tools_execute))
        .route("/retrieve", get(retrieve))
        .route("/health", get(health))
        .route("/experts", get(experts))
        .route("/experts/reload", post(reload_experts))
        .route("/sessions/{id}", get(session))
        .with_state(state)
}

fn error(status: StatusCode, kind: &str, message: impl ToString) -> Response {
    let body = json!({ "error": { "kind": kind, "message": message.to_string() } });
    (status, Json(body)).into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatBody {
    #[serde(default)]
    pub session_id: Option<String>,
    pub message: String,
    #[serde(default)]
    pub expert: Option<String>,
    #[serde(default = "yes")]
    pub stream: bool,
}

fn yes() -> bool {
    true
}

/// One server-sent event frame for a chat event.
pub fn sse_frame(event: &ChatEvent) -> Event {
    Event::default()
        .event(event.kind())
        .data(serde_json::to_string(event).expect("events serialize"))
}

async fn chat(State(state): State<Shared>, body: Result<Json<ChatBody>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()),
    };
    if body.message.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "empty_message", ChatError::EmptyMessage);
    }
    let expert = match parse_expert(body.expert.as_deref()) {
        Ok(e) => e,
        Err(e) => return error(StatusCode::BAD_REQUEST, "unknown_expert", e),
    };
    if let Some(id) = body.session_id.as_deref().filter(|id| !valid_id(id)) {
        return error(StatusCode::BAD_REQUEST, "invalid_session_id", format!("invalid session id `{id}`"));
    }
    if let Err(e) = state.backend.health().await {
        return error(StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable", e);
    }
    let input = ChatInput {
        session_id: body.session_id,
        message: body.message,
        expert,
    };
    if body.stream {
        stream_chat(state, input)
    } else {
        complete_chat(state, input).await
    }
}

fn stream_chat(state: Shared, input: ChatInput) -> Response {
    let (tx, rx) = mpsc::unbounded_channel::<ChatEvent>();
    tokio::spawn(async move {
        let sent = state
            .chat(input, |e| {
                let _ = tx.send(e.clone());
            })
            .await;
        if let Err(e) = sent {
            tracing::error!(error = %e, "chat turn could not be recorded");
        }
    });
    let events = stream::unfold(rx, |mut rx| async move {
        rx.recv()
            .await
            .map(|e| (Ok::<_, Infallible>(sse_frame(&e)), rx))
    });
    Sse::new(events).into_response()
}

async fn complete_chat(state: Shared, input: ChatInput) -> Response {
    let result = match state.chat(input, |_| {}).await {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "session", e),
    };
    match result.outcome {
        Ok(o) => Json(json!({
            "session_id": result.session_id,
            "transcript": o.transcript,
            "metadata": o.metadata,
            "events": result.events,
        }))
        .into_response(),
        Err(e) => {
            let status = match &e {
                TurnError::Backend {
                    error: BackendError::Unavailable(_),
                    ..
                } => StatusCode::SERVICE_UNAVAILABLE,
                _ => StatusCode::BAD_GATEWAY,
            };
            let body = json!({
                "session_id": result.session_id,
                "error": { "kind": e.kind(), "message": e.to_string() },
                "events": result.events,
            });
            (status, Json(body)).into_response()
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolBody {
    pub tool: String,
    pub input: String,
}

async fn tools_execute(body: Result<Json<ToolBody>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()),
    };
    let Some(tool) = ToolKind::from_command_name(body.tool.trim()) else {
        return error(StatusCode::BAD_REQUEST, "unknown_tool", format!("unknown tool `{}`", body.tool));
    };
    match execute(tool, &body.input) {
        Ok(outcome) => Json(json!({
            "tool": tool.name(),
            "input": body.input,
            "rendered": outcome.rendered,
            "value": outcome.value,
        }))
        .into_response(),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.kind(), e),
    }
}

#[derive(Debug, Deserialize)]
pub struct RetrieveQuery {
    pub q: String,
    pub top_k: Option<usize>,
    pub threshold: Option<f64>,
}

async fn retrieve(State(state): State<Shared>, Query(query): Query<RetrieveQuery>) -> Response {
    let Some(index) = &state.index else {
        return error(StatusCode::CONFLICT, "index_not_loaded", "no knowledge index is loaded");
    };
    let step = state.config.kb.step();
    let top_k = query.top_k.unwrap_or(step.top_k);
    let threshold = query.threshold.unwrap_or(step.threshold);
    if top_k == 0 || threshold.is_nan() || threshold < 0.0 {
        return error(StatusCode::BAD_REQUEST, "invalid_parameter", "top_k must be positive and threshold non-negative");
    }
    let results: Vec<RetrievedChunk> = index
        .retrieve(&query.q, top_k, threshold)
        .iter()
        .map(RetrievedChunk::from)
        .collect();
    Json(json!({ "query": query.q, "results": results })).into_response()
}

async fn health(State(state): State<Shared>) -> Response {
    let backend = state.backend.health().await;
    let index = state.index.as_ref().map(|i| i.stats());
    let body = json!({
        "status": if backend.is_ok() { "ok" } else { "degraded" },
        "backend": {
            "name": state.backend.name(),
            "reachable": backend.is_ok(),
            "error": backend.err().map(|e| e.to_string()),
        },
        "index": {
            "loaded": index.is_some(),
            "docs": index.as_ref().map_or(0, |s| s.docs),
            "chunks": index.as_ref().map_or(0, |s| s.chunks),
        },
        "sessions": state.sessions.len(),
    });
    let status = if body["status"] == "ok" {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    (status, Json(body)).into_response()
}

#[derive(Debug, Serialize)]
struct ExpertView {
    id: String,
    adapter: String,
    preamble: String,
    tools_enabled: bool,
    retrieval_enabled: bool,
    rules: Vec<Value>,
}

fn expert_list(state: &AppState) -> Vec<ExpertView> {
    state
        .profiles()
        .iter()
        .map(|p| ExpertView {
            id: p.id.to_string(),
            adapter: p.adapter.id.clone(),
            preamble: p.preamble.clone(),
            tools_enabled: p.capabilities.tools_enabled,
            retrieval_enabled: p.capabilities.retrieval_enabled,
            rules: p
                .rules
                .iter()
                .map(|r| json!({ "pattern": r.pattern, "weight": r.weight }))
                .collect(),
        })
        .collect()
}

async fn experts(State(state): State<Shared>) -> Json<Vec<ExpertView>> {
    Json(expert_list(&state))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReloadBody {
    path: Option<PathBuf>,
}

async fn reload_experts(State(state): State<Shared>, body: Bytes) -> Response {
    let body: ReloadBody = if body.iter().all(u8::is_ascii_whitespace) {
        ReloadBody::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(b) => b,
            Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request", e),
        }
    };
    match state.reload_profiles(body.path) {
        Ok(_) => Json(json!({ "reloaded": true, "experts": expert_list(&state) })).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "invalid_profiles", e),
    }
}

async fn session(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let Some(handle) = state.sessions.get(&id) else {
        return error(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`"));
    };
    let snapshot = handle.lock().await.clone();
    Json(snapshot).into_response()
}
