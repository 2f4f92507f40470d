//! Incremental detection of `[Tool(args)→` in a generation stream.
//!
//! Text that cannot be part of a command is released immediately. A live
//! candidate is held back until it either completes at the arrow or fails,
//! in which case its first `[` is released and the rest is scanned again.

use serde::{Deserialize, Serialize};

use crate::fintools::ToolKind;

/// Candidates longer than this without reaching an arrow are released.
pub const HOLD_BACK_CAP: usize = 512;

pub const ARROW: char = '→';
pub const ASCII_ARROW: &str = "->";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanMode {
    Plain,
    InCommandName,
    InArgs(u32),
    /// Closing parenthesis seen, arrow expected next.
    AfterArgs,
    /// `-` of an ASCII arrow seen.
    AfterDash,
}

/// A complete command up to and including its arrow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingCommand {
    pub tool: ToolKind,
    pub args: String,
    /// The command text exactly as the model produced it.
    pub raw: String,
}

impl PendingCommand {
    /// Command text with the arrow normalized to `→`.
    pub fn normalized(&self) -> String {
        format!("[{}({})→", self.tool.name(), self.args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScanOutput {
    /// Text released downstream, in order.
    pub emitted: String,
    pub pending: Option<PendingCommand>,
    /// Input not consumed because a command completed before it.
    pub rest: String,
}

#[derive(Debug, Clone)]
pub struct ScannerState {
    mode: ScanMode,
    buffer: String,
    buffer_chars: usize,
}

impl Default for ScannerState {
    fn default() -> Self {
        Self::new()
    }
}

enum Step {
    Continue,
    Complete(PendingCommand),
    /// Candidate failed on the current char; release `[` and rescan the rest.
    Fail,
}

impl ScannerState {
    pub fn new() -> Self {
        ScannerState {
            mode: ScanMode::Plain,
            buffer: String::new(),
            buffer_chars: 0,
        }
    }

    pub fn mode(&self) -> ScanMode {
        self.mode
    }

    /// Text currently held back.
    pub fn held(&self) -> &str {
        &self.buffer
    }

    /// Feeds the next piece of the stream. Stops right after the first
    /// completed command and hands back the unconsumed remainder.
    pub fn scan_chunk(&mut self, chunk: &str) -> ScanOutput {
        let mut out = ScanOutput::default();
        // Work queue: replayed text first, then the chunk.
        let mut queue: Vec<char> = chunk.chars().rev().collect();
        while let Some(c) = queue.pop() {
            match self.step(c, &mut out.emitted) {
                Step::Continue => {}
                Step::Complete(cmd) => {
                    out.pending = Some(cmd);
                    out.rest = queue.iter().rev().collect();
                    return out;
                }
                Step::Fail => {
                    let held = std::mem::take(&mut self.buffer);
                    self.buffer_chars = 0;
                    self.mode = ScanMode::Plain;
                    let mut chars = held.chars();
                    if let Some(first) = chars.next() {
                        out.emitted.push(first);
                    }
                    queue.push(c);
                    let replay: Vec<char> = chars.collect();
                    queue.extend(replay.into_iter().rev());
                }
            }
        }
        out
    }

    /// End of stream: releases whatever is held, verbatim.
    pub fn finish(&mut self) -> String {
        self.mode = ScanMode::Plain;
        self.buffer_chars = 0;
        std::mem::take(&mut self.buffer)
    }

    fn hold(&mut self, c: char) {
        self.buffer.push(c);
        self.buffer_chars += 1;
    }

    fn step(&mut self, c: char, emitted: &mut String) -> Step {
        if self.mode != ScanMode::Plain && self.buffer_chars >= HOLD_BACK_CAP {
            return Step::Fail;
        }
        match self.mode {
            ScanMode::Plain => {
                if c == '[' {
                    self.hold(c);
                    self.mode = ScanMode::InCommandName;
                } else {
                    emitted.push(c);
                }
                Step::Continue
            }
            ScanMode::InCommandName => {
                let name = &self.buffer[1..];
                if c == '(' {
                    if ToolKind::from_command_name(name).is_some() {
                        self.hold(c);
                        self.mode = ScanMode::InArgs(1);
                        Step::Continue
                    } else {
                        Step::Fail
                    }
                } else if c.is_ascii_alphabetic()
                    && ToolKind::ALL.iter().any(|t| {
                        t.name().len() > name.len()
                            && t.name().starts_with(name)
                            && t.name()[name.len()..].starts_with(c)
                    })
                {
                    self.hold(c);
                    Step::Continue
                } else {
                    Step::Fail
                }
            }
            ScanMode::InArgs(depth) => match c {
                '(' => {
                    self.hold(c);
                    self.mode = ScanMode::InArgs(depth + 1);
                    Step::Continue
                }
                ')' => {
                    self.hold(c);
                    self.mode = if depth == 1 {
                        ScanMode::AfterArgs
                    } else {
                        ScanMode::InArgs(depth - 1)
                    };
                    Step::Continue
                }
                ']' | ARROW => Step::Fail,
                '>' if self.buffer.ends_with('-') => Step::Fail,
                _ => {
                    self.hold(c);
                    Step::Continue
                }
            },
            ScanMode::AfterArgs => match c {
                ARROW => {
                    self.hold(c);
                    Step::Complete(self.take_command())
                }
                '-' => {
                    self.hold(c);
                    self.mode = ScanMode::AfterDash;
                    Step::Continue
                }
                _ => Step::Fail,
            },
            ScanMode::AfterDash => {
                if c == '>' {
                    self.hold(c);
                    Step::Complete(self.take_command())
                } else {
                    Step::Fail
                }
            }
        }
    }

    fn take_command(&mut self) -> PendingCommand {
        let raw = std::mem::take(&mut self.buffer);
        self.buffer_chars = 0;
        self.mode = ScanMode::Plain;
        let open = raw.find('(').expect("command has an opening parenthesis");
        let tool = ToolKind::from_command_name(&raw[1..open]).expect("name checked on `(`");
        let body = raw
            .strip_suffix(ARROW)
            .or_else(|| raw.strip_suffix(ASCII_ARROW))
            .expect("command ends with an arrow");
        let args = body[open + 1..body.len() - 1].to_string();
        PendingCommand { tool, args, raw }
    }
}

/// Byte positions of a command found in a complete text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandSpan {
    pub tool: ToolKind,
    pub args: String,
    /// Offset of `[`.
    pub start: usize,
    /// Offset where the arrow begins.
    pub arrow_start: usize,
    /// Offset just past the arrow.
    pub arrow_end: usize,
    /// Text between the arrow and the next `]`, if that `]` exists.
    pub result: Option<String>,
    /// Offset just past the closing `]`.
    pub end: Option<usize>,
}

/// Finds every command in a finished text, as the streaming scanner would.
pub fn scan_commands(text: &str) -> Vec<CommandSpan> {
    let mut spans = Vec::new();
    let mut scanner = ScannerState::new();
    let mut offset = 0;
    let mut input = text.to_string();
    loop {
        let out = scanner.scan_chunk(&input);
        offset += out.emitted.len();
        let Some(cmd) = out.pending else { break };
        let start = offset;
        let arrow_end = start + cmd.raw.len();
        let arrow_len = if cmd.raw.ends_with(ARROW) { ARROW.len_utf8() } else { 2 };
        let (result, end) = match out.rest.find(']') {
            Some(k) => (Some(out.rest[..k].to_string()), Some(arrow_end + k + 1)),
            None => (None, None),
        };
        spans.push(CommandSpan {
            tool: cmd.tool,
            args: cmd.args,
            start,
            arrow_start: arrow_end - arrow_len,
            arrow_end,
            result,
            end,
        });
        offset = arrow_end;
        input = out.rest;
    }
    spans
}
