use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{execute_and_splice, ScannerState, SpliceEvent, ToolCommand, ToolRegistry, UnknownTool, ARROW};
use crate::backend::{Backend, BackendError, FinishReason, GenerationRequest, StreamItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopLimits {
    pub max_calls: usize,
    /// Completion tokens across all resumed generations.
    pub max_tokens: usize,
}

impl Default for LoopLimits {
    fn default() -> Self {
        LoopLimits {
            max_calls: 8,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStop {
    /// Natural end or a stop sequence.
    Finished,
    MaxTokens,
    /// A command arrived with no calls left; it was kept as plain text.
    CallBudgetExceeded,
}

/// Observations emitted while the loop runs, in transcript order.
#[derive(Debug, Clone, PartialEq)]
pub enum LoopEvent {
    Text(String),
    ToolCall(ToolCommand),
    ToolResult(SpliceEvent),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolLoopOutcome {
    pub transcript: String,
    pub events: Vec<SpliceEvent>,
    pub stop: LoopStop,
    /// Adapter echoed by the backend on the last completion record.
    pub adapter: Option<String>,
    pub completion_tokens: usize,
    pub backend_calls: usize,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ToolLoopError {
    #[error("{error}")]
    Backend { error: BackendError, partial: String },
    #[error(transparent)]
    UnknownTool(#[from] UnknownTool),
}

/// Generates from `request`, executing each completed command through
/// `registry` and resuming with the spliced transcript as prefix.
pub async fn run_tool_loop(
    backend: &dyn Backend,
    request: GenerationRequest,
    registry: &ToolRegistry,
    limits: LoopLimits,
    on_event: &mut (dyn FnMut(LoopEvent) + Send),
) -> Result<ToolLoopOutcome, ToolLoopError> {
    let mut transcript = request.prefix.clone();
    let mut events = Vec::new();
    let mut used_tokens = 0;
    let mut backend_calls = 0;
    let mut adapter = None;

    let stop = 'generation: loop {
        if used_tokens >= limits.max_tokens {
            break LoopStop::MaxTokens;
        }
        let mut req = request.clone();
        req.prefix = transcript.clone();
        req.max_tokens = limits.max_tokens - used_tokens;
        backend_calls += 1;
        let fail = |error: BackendError, partial: &str| ToolLoopError::Backend {
            error,
            partial: partial.to_string(),
        };
        let mut stream = match backend.generate_stream(req).await {
            Ok(s) => s,
            Err(e) => return Err(fail(e, &transcript)),
        };
        let mut scanner = ScannerState::new();
        let mut finish = FinishReason::Stop;

        while let Some(item) = stream.next().await {
            let item = match item {
                Ok(item) => item,
                Err(e) => {
                    transcript.push_str(&scanner.finish());
                    return Err(fail(e, &transcript));
                }
            };
            let (text, tokens) = match item {
                StreamItem::Chunk { text, tokens } => (text, tokens),
                StreamItem::Done(done) => {
                    finish = done.finish_reason;
                    adapter = Some(done.usage.adapter);
                    continue;
                }
            };
            used_tokens += tokens;
            let out = scanner.scan_chunk(&text);
            if !out.emitted.is_empty() {
                transcript.push_str(&out.emitted);
                on_event(LoopEvent::Text(out.emitted));
            }
            let Some(pending) = out.pending else { continue };

            if events.len() >= limits.max_calls {
                transcript.push_str(&pending.raw);
                on_event(LoopEvent::Text(pending.raw));
                break 'generation LoopStop::CallBudgetExceeded;
            }
            let start = transcript.len();
            transcript.push_str(&pending.normalized());
            let cmd = ToolCommand {
                tool: pending.tool,
                args: pending.args,
                start,
                arrow: transcript.len() - ARROW.len_utf8(),
            };
            on_event(LoopEvent::ToolCall(cmd.clone()));
            let event = execute_and_splice(cmd, registry, &mut transcript)?;
            on_event(LoopEvent::ToolResult(event.clone()));
            events.push(event);
            // Anything the model wrote past the arrow is dropped; resume.
            continue 'generation;
        }

        let tail = scanner.finish();
        if !tail.is_empty() {
            transcript.push_str(&tail);
            on_event(LoopEvent::Text(tail));
        }
        break match finish {
            FinishReason::Stop => LoopStop::Finished,
            FinishReason::Length => LoopStop::MaxTokens,
            FinishReason::Error => {
                return Err(fail(
                    BackendError::Protocol("generation finished with an error".into()),
                    &transcript,
                ))
            }
        };
    };

    let transcript = transcript[request.prefix.len()..].to_string();
    // Offsets were taken against prefix + transcript; rebase them.
    let base = request.prefix.len();
    for ev in &mut events {
        ev.command.start -= base;
        ev.command.arrow -= base;
        ev.resumed_at -= base;
    }
    Ok(ToolLoopOutcome {
        transcript,
        events,
        stop,
        adapter,
        completion_tokens: used_tokens,
        backend_calls,
    })
}
