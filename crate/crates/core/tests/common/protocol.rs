//! Random model emissions containing tool commands, and a whole-text
//! reference reading of the command grammar that does not use the streaming
//! scanner.

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use meff_core::backend::{
    Backend, BackendError, Completion, GenerationRequest, GenerationStream, MockBackend, MockScript,
    StreamItem, Usage,
};
use meff_core::fintools::{OutcomeValue, ToolKind, ToolOutcome};
use meff_core::toolcall::ToolRegistry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NAMES: [&str; 4] = ["Calculator", "EquationSolver", "Counter", "ProbabilityTable"];
pub const MAX_COMMAND_CHARS: usize = 512;

/// A command as located by the reference reader.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefCommand {
    pub name: String,
    pub args: String,
    /// Byte offset of `[`.
    pub start: usize,
    /// Byte offset just past the arrow.
    pub end: usize,
}

/// Tries to read `[Name(args)→` or `[Name(args)->` at byte `at`.
pub fn command_at(text: &str, at: usize) -> Option<RefCommand> {
    let rest = &text[at..];
    let after_bracket = rest.strip_prefix('[')?;
    let name = NAMES.iter().find(|n| after_bracket.starts_with(&format!("{n}(")))?;
    let args_start = 1 + name.len() + 1;
    let mut depth = 1usize;
    let mut prev = '\0';
    for (i, c) in rest[args_start..].char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    let close = args_start + i;
                    let after = &rest[close + 1..];
                    let arrow_len = if after.starts_with('→') {
                        '→'.len_utf8()
                    } else if after.starts_with("->") {
                        2
                    } else {
                        return None;
                    };
                    let end = close + 1 + arrow_len;
                    if rest[..end].chars().count() > MAX_COMMAND_CHARS {
                        return None;
                    }
                    return Some(RefCommand {
                        name: name.to_string(),
                        args: rest[args_start..close].to_string(),
                        start: at,
                        end: at + end,
                    });
                }
            }
            ']' | '→' => return None,
            '>' if prev == '-' => return None,
            _ => {}
        }
        prev = c;
    }
    None
}

/// The first command starting at or after `from`.
pub fn next_command(text: &str, from: usize) -> Option<RefCommand> {
    text[from..]
        .match_indices('[')
        .find_map(|(i, _)| command_at(text, from + i))
}

/// Every command, reading on from each arrow.
pub fn all_commands(text: &str) -> Vec<RefCommand> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(cmd) = next_command(text, pos) {
        pos = cmd.end;
        out.push(cmd);
    }
    out
}

/// Result text the counting registry splices for a command.
pub fn stub_result(name: &str, args: &str) -> String {
    format!("{}:{}", &name[..2], args.chars().count())
}

/// What the tool loop should produce for a script served by the mock:
/// each command is closed by its result, the model's own guess up to its
/// `]` is dropped, and a command without a following `]` ends the text.
pub fn expected_transcript(script: &str) -> (String, usize) {
    let mut out = String::new();
    let mut pos = 0;
    let mut calls = 0;
    while let Some(cmd) = next_command(script, pos) {
        out.push_str(&script[pos..cmd.start]);
        out.push_str(&format!("[{}({})→{}]", cmd.name, cmd.args, stub_result(&cmd.name, &cmd.args)));
        calls += 1;
        match script[cmd.end..].find(']') {
            Some(k) => pos = cmd.end + k + 1,
            None => return (out, calls),
        }
    }
    out.push_str(&script[pos..]);
    (out, calls)
}

/// Registry whose tools echo a short tag and count their invocations.
pub fn counting_registry() -> (ToolRegistry, Arc<AtomicUsize>) {
    let count = Arc::new(AtomicUsize::new(0));
    let mut reg = ToolRegistry::empty();
    for kind in ToolKind::ALL {
        let count = count.clone();
        reg = reg.with(
            kind,
            Arc::new(move |args: &str| {
                count.fetch_add(1, Ordering::SeqCst);
                Ok(ToolOutcome {
                    value: OutcomeValue::Count(args.chars().count() as u64),
                    rendered: stub_result(kind.name(), args),
                })
            }),
        );
    }
    (reg, count)
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn plain<R: Rng>(rng: &mut R) -> String {
    const WORDS: &[&str] = &[
        "营业收入", "同比增长", "净利润", "为", "。", "，", "元", "the rate ", "is ", "Q1 ", "up 5% ",
        "(", ")", "-", ">", "→", "]", " ", "\n", "x", "2+3", "增长率", "->", "[]", "((", "))",
    ];
    let n = rng.random_range(0..5);
    (0..n).map(|_| pick(rng, WORDS)).collect()
}

fn args<R: Rng>(rng: &mut R) -> String {
    const PARTS: &[&str] = &["1", "2.5", "+", "*", "-", "/", "x", "=", ";", ",", " ", "增长", "[", "^", "%"];
    let mut s = String::new();
    for _ in 0..rng.random_range(0..8) {
        if rng.random_bool(0.15) {
            s.push('(');
            s.push_str(&args(rng));
            s.push(')');
        } else {
            s.push_str(pick(rng, PARTS));
        }
    }
    // Keep `-` from pairing with a following `>` or closing into an arrow.
    s.replace("->", "-")
}

fn guess<R: Rng>(rng: &mut R) -> String {
    let g: String = plain(rng).chars().filter(|c| *c != ']').collect();
    g
}

fn command<R: Rng>(rng: &mut R) -> String {
    let name = pick(rng, &NAMES);
    let arrow = if rng.random_bool(0.7) { "→" } else { "->" };
    match rng.random_range(0..10) {
        // Well formed, with the model's guess and the closing bracket.
        0..=4 => format!("[{name}({}){arrow}{}]", args(rng), guess(rng)),
        // A command inside the guess of another.
        5 => format!("[{name}({}){arrow}{}{}]", args(rng), guess(rng), command(rng)),
        // Truncated name or unknown tool.
        6 => {
            let cut = rng.random_range(1..name.len());
            let bad = pick(rng, &[&name[..cut], "NotATool", "calculator", "Calc ulator"]);
            format!("[{bad}({}){arrow}{}]", args(rng), guess(rng))
        }
        // Missing or broken arrow.
        7 => format!("[{name}({}){}{}]", args(rng), pick(rng, &["", " →", "-", "-x", ")"]), guess(rng)),
        // Bracket or arrow inside the arguments, or unbalanced parentheses.
        8 => {
            let poison = pick(rng, &["]", "→", "->", "("]);
            format!("[{name}({}{poison}{}){arrow}{}]", args(rng), args(rng), guess(rng))
        }
        // Arguments long enough to hit the hold-back cap.
        _ => {
            let len = rng.random_range(480..540);
            format!("[{name}({}){arrow}{}]", "1".repeat(len), guess(rng))
        }
    }
}

/// A random emission mixing plain text, commands and near misses.
pub fn random_script<R: Rng>(rng: &mut R) -> String {
    let mut s = String::new();
    for _ in 0..rng.random_range(0..7) {
        s.push_str(&plain(rng));
        if rng.random_bool(0.6) {
            s.push_str(&command(rng));
        }
        if rng.random_bool(0.1) {
            s.push('[');
        }
    }
    s.push_str(&plain(rng));
    if rng.random_bool(0.15) {
        // Stream ends right after an arrow, or in the middle of a command.
        let name = pick(rng, &NAMES);
        s.push_str(&pick(rng, &[
            &format!("[{name}(1+1)→"),
            &format!("[{name}(1+"),
            "[Calc",
        ]).to_string());
    }
    s
}

/// Splits `text` into random pieces at character boundaries.
pub fn random_chunks<R: Rng>(rng: &mut R, text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let n = rng.random_range(1..=9).min(chars.len() - i);
        out.push(chars[i..i + n].iter().collect());
        i += n;
    }
    out
}

/// Serves the mock's emission in randomly sized chunks.
pub struct ChunkedMock {
    inner: MockBackend,
    seed: u64,
}

impl ChunkedMock {
    pub fn new(script: &str, seed: u64) -> Self {
        ChunkedMock {
            inner: MockBackend::new(MockScript::new(script)),
            seed,
        }
    }
}

#[async_trait]
impl Backend for ChunkedMock {
    fn name(&self) -> &str {
        "chunked-mock"
    }

    async fn generate_stream(&self, req: GenerationRequest) -> Result<GenerationStream, BackendError> {
        req.validate()?;
        let (text, finish_reason) = self.inner.emission(&req);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (req.prefix.len() as u64).wrapping_mul(0x9e37_79b9));
        let mut items: Vec<Result<StreamItem, BackendError>> = random_chunks(&mut rng, &text)
            .into_iter()
            .map(|c| {
                let tokens = c.chars().count();
                Ok(StreamItem::Chunk { text: c, tokens })
            })
            .collect();
        items.push(Ok(StreamItem::Done(Completion {
            finish_reason,
            usage: Usage {
                prompt_tokens: 0,
                completion_tokens: text.chars().count(),
                adapter: req.adapter.id.clone(),
            },
        })));
        Ok(stream::iter(items).boxed())
    }

    async fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}
