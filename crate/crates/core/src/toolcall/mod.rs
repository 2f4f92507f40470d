//! Tool calls inside generated text.
//!
//! A model asks for a tool by writing `[Tool(args)→`. Decoding stops at the
//! arrow, the tool runs, `result]` is appended to the transcript and
//! generation resumes from the extended text.

mod scanner;
mod tool_loop;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fintools::{self, ToolError, ToolKind, ToolOutcome};

pub use scanner::{
    scan_commands, CommandSpan, PendingCommand, ScanMode, ScanOutput, ScannerState, ARROW,
    ASCII_ARROW, HOLD_BACK_CAP,
};
pub use tool_loop::{run_tool_loop, LoopEvent, LoopLimits, LoopStop, ToolLoopError, ToolLoopOutcome};

/// A command located in the transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCommand {
    pub tool: ToolKind,
    pub args: String,
    /// Byte offset of `[` in the transcript.
    pub start: usize,
    /// Byte offset of the arrow in the transcript.
    pub arrow: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolFailure {
    pub kind: String,
    pub message: String,
}

impl From<&ToolError> for ToolFailure {
    fn from(e: &ToolError) -> Self {
        ToolFailure {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpliceEvent {
    pub command: ToolCommand,
    pub outcome: Result<ToolOutcome, ToolFailure>,
    /// Text inserted after the arrow, without the closing `]`.
    pub spliced: String,
    /// Transcript offset just past the closing `]`.
    pub resumed_at: usize,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("tool `{0}` is not registered")]
pub struct UnknownTool(pub ToolKind);

pub type ToolFn = Arc<dyn Fn(&str) -> Result<ToolOutcome, ToolError> + Send + Sync>;

/// Immutable tool table, shared read-only between sessions.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<ToolKind, ToolFn>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Calculator, equation solver, counter and probability table.
    pub fn standard() -> Self {
        let mut reg = Self::empty();
        for kind in ToolKind::ALL {
            reg = reg.with(kind, Arc::new(move |input: &str| fintools::execute(kind, input)));
        }
        reg
    }

    pub fn with(mut self, kind: ToolKind, f: ToolFn) -> Self {
        self.tools.insert(kind, f);
        self
    }

    pub fn kinds(&self) -> impl Iterator<Item = ToolKind> + '_ {
        self.tools.keys().copied()
    }

    pub fn run(&self, kind: ToolKind, input: &str) -> Result<Result<ToolOutcome, ToolError>, UnknownTool> {
        let f = self.tools.get(&kind).ok_or(UnknownTool(kind))?;
        Ok(f(input))
    }
}

/// Text spliced after the arrow for a tool result.
pub fn splice_text(outcome: &Result<ToolOutcome, ToolError>) -> String {
    match outcome {
        Ok(o) => o.rendered.clone(),
        Err(e) => format!("ERROR: {}", e.kind()),
    }
}

/// Runs `cmd` and appends `result]` (or `ERROR: <kind>]`) to `transcript`,
/// which must end with the command's arrow.
pub fn execute_and_splice(
    cmd: ToolCommand,
    registry: &ToolRegistry,
    transcript: &mut String,
) -> Result<SpliceEvent, UnknownTool> {
    let outcome = registry.run(cmd.tool, &cmd.args)?;
    let spliced = splice_text(&outcome);
    transcript.push_str(&spliced);
    transcript.push(']');
    Ok(SpliceEvent {
        command: cmd,
        outcome: outcome.map_err(|e| ToolFailure::from(&e)),
        spliced,
        resumed_at: transcript.len(),
    })
}

/// A completed command read back from text: `[Tool(args)→result]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCall {
    pub tool: ToolKind,
    pub args: String,
    pub result: String,
}

/// Every command in `text` that is closed by `]`.
pub fn parse_calls(text: &str) -> Vec<ParsedCall> {
    scan_commands(text)
        .into_iter()
        .filter_map(|s| {
            s.result.map(|result| ParsedCall {
                tool: s.tool,
                args: s.args,
                result,
            })
        })
        .collect()
}

/// `[Tool(args)→result]`
pub fn render_call(tool: ToolKind, args: &str, result: &str) -> String {
    format!("[{}({args}){ARROW}{result}]", tool.name())
}
