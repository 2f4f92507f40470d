//! One chat turn end to end: route, plan, retrieve, then generate with
//! in-stream tool execution, reporting progress as numbered [`ChatEvent`]s.
//!
//! Every turn starts with a `route` event and ends with exactly one `done` or
//! `error` event. Concatenating the `text` of `token`, `tool_call` and
//! `tool_result` events in order reproduces `done.transcript`.

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, FinishReason, GenerationRequest, StreamItem};
use crate::dialogue::Message;
use crate::fintools::OutcomeValue;
use crate::knowledge::{KnowledgeIndex, RetrievalResult};
use crate::router::{plan, route, ExpertId, ProfileSet, Reference, RetrievalStep, RouteSource, RoutingDecision};
use crate::toolcall::{
    run_tool_loop, LoopEvent, LoopLimits, LoopStop, SpliceEvent, ToolFailure, ToolLoopError, ARROW,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatEvent {
    /// Position within the turn, from 0.
    pub seq: u64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl ChatEvent {
    pub fn kind(&self) -> &'static str {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub doc_id: String,
    pub seq: usize,
    pub title: String,
    pub score: f64,
    pub text: String,
}

impl From<&RetrievalResult> for RetrievedChunk {
    fn from(r: &RetrievalResult) -> Self {
        RetrievedChunk {
            doc_id: r.chunk.doc_id.clone(),
            seq: r.chunk.seq,
            title: r.title.clone(),
            score: r.score,
            text: r.chunk.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoneMetadata {
    pub expert: ExpertId,
    /// Adapter reported by the backend for the turn's generation.
    pub adapter: Option<String>,
    pub route: RouteSource,
    pub stop: LoopStop,
    pub tool_calls: usize,
    pub references: usize,
    pub completion_tokens: usize,
    pub backend_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    Route {
        expert: ExpertId,
        adapter: Option<String>,
        source: RouteSource,
    },
    Retrieval {
        /// False when the expert retrieves but no index is loaded.
        index_loaded: bool,
        results: Vec<RetrievedChunk>,
    },
    Token {
        text: String,
    },
    ToolCall {
        tool: String,
        args: String,
        /// The command as written into the transcript, through the arrow.
        text: String,
        offset: usize,
    },
    ToolResult {
        tool: String,
        args: String,
        /// Spliced result followed by `]`.
        text: String,
        rendered: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<OutcomeValue>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<ToolFailure>,
        offset: usize,
    },
    Done {
        transcript: String,
        metadata: DoneMetadata,
    },
    Error {
        kind: String,
        message: String,
        /// Transcript produced before the failure.
        partial: String,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::Route { .. } => "route",
            EventPayload::Retrieval { .. } => "retrieval",
            EventPayload::Token { .. } => "token",
            EventPayload::ToolCall { .. } => "tool_call",
            EventPayload::ToolResult { .. } => "tool_result",
            EventPayload::Done { .. } => "done",
            EventPayload::Error { .. } => "error",
        }
    }
}

/// Everything a turn reads besides the user input.
pub struct TurnContext<'a> {
    pub backend: &'a dyn Backend,
    pub profiles: &'a ProfileSet,
    pub index: Option<&'a KnowledgeIndex>,
    pub retrieval: RetrievalStep,
    pub limits: LoopLimits,
}

#[derive(Debug, Clone, Default)]
pub struct TurnRequest {
    pub message: String,
    pub expert: Option<ExpertId>,
    pub history: Vec<Message>,
    pub seed: u64,
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub decision: RoutingDecision,
    pub prompt: String,
    pub transcript: String,
    pub references: Vec<RetrievalResult>,
    pub splices: Vec<SpliceEvent>,
    pub metadata: DoneMetadata,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TurnError {
    #[error("{error}")]
    Backend { error: BackendError, partial: String },
    #[error("{0}")]
    Configuration(String),
}

impl TurnError {
    pub fn kind(&self) -> &'static str {
        match self {
            TurnError::Backend { error, .. } => match error {
                BackendError::Unavailable(_) => "backend_unavailable",
                BackendError::AdapterUnknown(_) => "adapter_unknown",
                BackendError::InvalidRequest(_) => "invalid_request",
                BackendError::Protocol(_) => "protocol",
            },
            TurnError::Configuration(_) => "configuration",
        }
    }

    fn partial(&self) -> &str {
        match self {
            TurnError::Backend { partial, .. } => partial,
            TurnError::Configuration(_) => "",
        }
    }
}

struct Emitter<'a> {
    seq: u64,
    sink: &'a mut (dyn FnMut(ChatEvent) + Send),
}

impl Emitter<'_> {
    fn emit(&mut self, payload: EventPayload) {
        let seq = self.seq;
        self.seq += 1;
        (self.sink)(ChatEvent { seq, payload });
    }
}

/// Runs one turn, streaming events to `on_event`.
pub async fn run_turn(
    ctx: &TurnContext<'_>,
    req: &TurnRequest,
    on_event: &mut (dyn FnMut(ChatEvent) + Send),
) -> Result<TurnOutcome, TurnError> {
    let mut out = Emitter { seq: 0, sink: on_event };
    let decision = route(&req.message, req.expert, ctx.profiles);
    let plan = plan(&decision, ctx.profiles, &req.message, ctx.retrieval);
    out.emit(EventPayload::Route {
        expert: plan.expert,
        adapter: plan.adapter.label().map(str::to_string),
        source: decision.source.clone(),
    });

    let mut references = Vec::new();
    if let Some(step) = plan.retrieval {
        if let Some(index) = ctx.index {
            references = index.retrieve(&req.message, step.top_k, step.threshold);
        }
        out.emit(EventPayload::Retrieval {
            index_loaded: ctx.index.is_some(),
            results: references.iter().map(RetrievedChunk::from).collect(),
        });
    }
    let refs: Vec<Reference> = references
        .iter()
        .map(|r| Reference {
            title: r.title.clone(),
            text: r.chunk.text.clone(),
        })
        .collect();
    let prompt = plan.render_prompt(&req.history, &refs);
    let mut gen = GenerationRequest::new(prompt.clone(), plan.adapter.clone());
    gen.seed = req.seed;
    gen.max_tokens = ctx.limits.max_tokens.max(1);

    let result = match &plan.tools {
        Some(registry) => {
            let mut on_loop = |ev: LoopEvent| match ev {
                LoopEvent::Text(text) => out.emit(EventPayload::Token { text }),
                LoopEvent::ToolCall(cmd) => out.emit(EventPayload::ToolCall {
                    tool: cmd.tool.name().to_string(),
                    text: format!("[{}({}){ARROW}", cmd.tool.name(), cmd.args),
                    args: cmd.args,
                    offset: cmd.start,
                }),
                LoopEvent::ToolResult(ev) => out.emit(EventPayload::ToolResult {
                    tool: ev.command.tool.name().to_string(),
                    args: ev.command.args.clone(),
                    text: format!("{}]", ev.spliced),
                    rendered: ev.spliced.clone(),
                    value: ev.outcome.as_ref().ok().map(|o| o.value.clone()),
                    error: ev.outcome.as_ref().err().cloned(),
                    offset: ev.resumed_at - ev.spliced.len() - 1,
                }),
            };
            run_tool_loop(ctx.backend, gen, registry, ctx.limits, &mut on_loop)
                .await
                .map(|o| (o.transcript, o.events, o.stop, o.adapter, o.completion_tokens, o.backend_calls))
                .map_err(|e| match e {
                    ToolLoopError::Backend { error, partial } => TurnError::Backend { error, partial },
                    ToolLoopError::UnknownTool(u) => TurnError::Configuration(u.to_string()),
                })
        }
        None => plain_generation(ctx.backend, gen, &mut out).await,
    };

    match result {
        Ok((transcript, splices, stop, adapter, completion_tokens, backend_calls)) => {
            let metadata = DoneMetadata {
                expert: plan.expert,
                adapter,
                route: decision.source.clone(),
                stop,
                tool_calls: splices.len(),
                references: references.len(),
                completion_tokens,
                backend_calls,
                session_id: req.session_id.clone(),
            };
            out.emit(EventPayload::Done {
                transcript: transcript.clone(),
                metadata: metadata.clone(),
            });
            Ok(TurnOutcome {
                decision,
                prompt,
                transcript,
                references,
                splices,
                metadata,
            })
        }
        Err(e) => {
            out.emit(EventPayload::Error {
                kind: e.kind().to_string(),
                message: e.to_string(),
                partial: e.partial().to_string(),
            });
            Err(e)
        }
    }
}

type Generated = (String, Vec<SpliceEvent>, LoopStop, Option<String>, usize, usize);

async fn plain_generation(
    backend: &dyn Backend,
    req: GenerationRequest,
    out: &mut Emitter<'_>,
) -> Result<Generated, TurnError> {
    let mut transcript = String::new();
    let fail = |error: BackendError, partial: &str| TurnError::Backend {
        error,
        partial: partial.to_string(),
    };
    let mut stream = backend.generate_stream(req).await.map_err(|e| fail(e, ""))?;
    let mut tokens = 0;
    let mut adapter = None;
    let mut stop = LoopStop::Finished;
    while let Some(item) = stream.next().await {
        match item.map_err(|e| fail(e, &transcript))? {
            StreamItem::Chunk { text, tokens: n } => {
                tokens += n;
                transcript.push_str(&text);
                out.emit(EventPayload::Token { text });
            }
            StreamItem::Done(done) => {
                adapter = Some(done.usage.adapter);
                stop = match done.finish_reason {
                    FinishReason::Stop => LoopStop::Finished,
                    FinishReason::Length => LoopStop::MaxTokens,
                    FinishReason::Error => {
                        return Err(fail(BackendError::Protocol("generation ended with an error".into()), &transcript))
                    }
                };
            }
        }
    }
    Ok((transcript, Vec::new(), stop, adapter, tokens, 1))
}

/// Joins the text-bearing events of one turn.
pub fn reconstruct(events: &[ChatEvent]) -> String {
    events
        .iter()
        .filter_map(|e| match &e.payload {
            EventPayload::Token { text } | EventPayload::ToolCall { text, .. } | EventPayload::ToolResult { text, .. } => {
                Some(text.as_str())
            }
            _ => None,
        })
        .collect()
}
