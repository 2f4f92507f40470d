//! Deterministic scripted backend.
//!
//! A [`MockScript`] maps prompts to responses: the first rule whose matcher
//! hits the prompt wins, otherwise the script's default response is used.
//! Responses are templates; see [`render_template`] for the slot syntax.
//!
//! The mock behaves like a model that writes tool commands itself. A scripted
//! response such as `答案是[Calculator(100*0.2)→20]。` is emitted in full when
//! nothing interrupts it. When the caller resumes with a prefix that already
//! holds a spliced tool result, the mock skips its own guess (the text between
//! the arrow and the next `]`) and continues after it.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use regex::Regex;
use serde::Deserialize;

use super::{
    Backend, BackendError, Completion, FinishReason, GenerationRequest, GenerationStream,
    StreamItem, Usage,
};
use crate::toolcall::scan_commands;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub regex: Option<String>,
    #[serde(default)]
    pub response: String,
    /// Responses to choose between, deterministically per request.
    #[serde(default)]
    pub alternatives: Vec<String>,
}

#[derive(Debug, Clone)]
struct CompiledRule {
    contains: Option<String>,
    regex: Option<Regex>,
    responses: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default)]
    rules: Vec<MockRule>,
    #[serde(default)]
    default: String,
}

/// Ordered rules plus a default response.
#[derive(Debug, Clone, Default)]
pub struct MockScript {
    rules: Vec<CompiledRule>,
    default: String,
}

impl MockScript {
    pub fn new(default: impl Into<String>) -> Self {
        MockScript {
            rules: Vec::new(),
            default: default.into(),
        }
    }

    pub fn with_rule(mut self, rule: MockRule) -> Result<Self, BackendError> {
        let regex = rule
            .regex
            .as_deref()
            .map(Regex::new)
            .transpose()
            .map_err(|e| BackendError::InvalidRequest(format!("bad mock regex: {e}")))?;
        let mut responses = rule.alternatives;
        if !rule.response.is_empty() || responses.is_empty() {
            responses.insert(0, rule.response);
        }
        self.rules.push(CompiledRule {
            contains: rule.contains,
            regex,
            responses,
        });
        Ok(self)
    }

    /// Shorthand for a substring rule.
    pub fn when(self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.with_rule(MockRule {
            contains: Some(needle.into()),
            regex: None,
            response: response.into(),
            alternatives: Vec::new(),
        })
        .expect("substring rules always compile")
    }

    /// Returns the response template and regex captures for `prompt`.
    fn select(&self, prompt: &str, seed: u64) -> (&str, Vec<String>) {
        for rule in &self.rules {
            if let Some(needle) = &rule.contains {
                if !prompt.contains(needle.as_str()) {
                    continue;
                }
            }
            let mut captures = Vec::new();
            if let Some(re) = &rule.regex {
                match re.captures(prompt) {
                    Some(c) => {
                        captures = c
                            .iter()
                            .map(|m| m.map(|m| m.as_str().to_string()).unwrap_or_default())
                            .collect()
                    }
                    None => continue,
                }
            }
            let pick = if rule.responses.len() == 1 {
                0
            } else {
                (fnv1a(&[prompt.as_bytes(), &seed.to_le_bytes(), b"alternative"]) % rule.responses.len() as u64) as usize
            };
            return (&rule.responses[pick], captures);
        }
        (&self.default, Vec::new())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MockFile {
    #[serde(default)]
    chunk_chars: Option<usize>,
    #[serde(default)]
    scripts: BTreeMap<String, ScriptFile>,
}

/// Script selection by adapter id; the `default` script serves every other adapter.
#[derive(Debug, Clone)]
pub struct MockBackend {
    scripts: BTreeMap<String, MockScript>,
    fallback: MockScript,
    chunk_chars: usize,
    chunk_delay: Option<Duration>,
}

impl MockBackend {
    pub fn new(fallback: MockScript) -> Self {
        MockBackend {
            scripts: BTreeMap::new(),
            fallback,
            chunk_chars: 4,
            chunk_delay: None,
        }
    }

    pub fn with_script(mut self, adapter_id: impl Into<String>, script: MockScript) -> Self {
        self.scripts.insert(adapter_id.into(), script);
        self
    }

    pub fn with_chunk_chars(mut self, n: usize) -> Self {
        self.chunk_chars = n.max(1);
        self
    }

    pub fn with_chunk_delay(mut self, delay: Duration) -> Self {
        self.chunk_delay = Some(delay);
        self
    }

    /// Parses the TOML script file format:
    ///
    /// ```toml
    /// chunk_chars = 4
    /// [scripts.default]
    /// default = "好的。"
    /// [[scripts.lora-computing.rules]]
    /// contains = "增长率"
    /// response = "[Calculator((120-100)/100)→"
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, BackendError> {
        let file: MockFile = toml::from_str(text)
            .map_err(|e| BackendError::InvalidRequest(format!("mock script: {e}")))?;
        let mut fallback = MockScript::default();
        let mut scripts = BTreeMap::new();
        for (name, sf) in file.scripts {
            let mut script = MockScript::new(sf.default);
            for rule in sf.rules {
                script = script.with_rule(rule)?;
            }
            if name == "default" {
                fallback = script;
            } else {
                scripts.insert(name, script);
            }
        }
        let mut backend = MockBackend::new(fallback);
        backend.scripts = scripts;
        if let Some(n) = file.chunk_chars {
            backend = backend.with_chunk_chars(n);
        }
        Ok(backend)
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn script_for(&self, adapter_id: &str) -> &MockScript {
        self.scripts.get(adapter_id).unwrap_or(&self.fallback)
    }

    /// The full uninterrupted response for a request.
    pub fn full_response(&self, req: &GenerationRequest) -> String {
        let (template, captures) = self.script_for(&req.adapter.id).select(&req.prompt, req.seed);
        render_template(template, &TemplateContext {
            prompt: &req.prompt,
            adapter: &req.adapter.id,
            seed: req.seed,
            captures: &captures,
        })
    }

    /// Text the mock emits for this request, with its finish reason.
    pub fn emission(&self, req: &GenerationRequest) -> (String, FinishReason) {
        let full = self.full_response(req);
        let start = resume_point(&full, &req.prefix);
        let mut text = &full[start..];
        let mut finish = FinishReason::Stop;
        if let Some(cut) = req
            .stop_sequences
            .iter()
            .filter_map(|s| text.find(s.as_str()))
            .min()
        {
            text = &text[..cut];
        }
        if let Some((byte, _)) = text.char_indices().nth(req.max_tokens) {
            text = &text[..byte];
            finish = FinishReason::Length;
        }
        (text.to_string(), finish)
    }
}

#[async_trait]
impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    async fn generate_stream(&self, req: GenerationRequest) -> Result<GenerationStream, BackendError> {
        req.validate()?;
        let (text, finish_reason) = self.emission(&req);
        let chars: Vec<char> = text.chars().collect();
        let mut items: Vec<Result<StreamItem, BackendError>> = chars
            .chunks(self.chunk_chars)
            .map(|c| {
                Ok(StreamItem::Chunk {
                    text: c.iter().collect(),
                    tokens: c.len(),
                })
            })
            .collect();
        items.push(Ok(StreamItem::Done(Completion {
            finish_reason,
            usage: Usage {
                prompt_tokens: req.prompt.chars().count() + req.prefix.chars().count(),
                completion_tokens: chars.len(),
                adapter: req.adapter.id.clone(),
            },
        })));
        match self.chunk_delay {
            None => Ok(stream::iter(items).boxed()),
            Some(delay) => Ok(stream::iter(items)
                .then(move |item| async move {
                    tokio::time::sleep(delay).await;
                    item
                })
                .boxed()),
        }
    }

    async fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Where emission resumes in `full` given the already-produced `prefix`.
///
/// Plain text is matched character by character. At each tool command arrow
/// the prefix carries a spliced result up to `]`; the script's own guess up
/// to its `]` is skipped in step. On a mismatch the rest of `full` is emitted.
fn resume_point(full: &str, prefix: &str) -> usize {
    if prefix.is_empty() {
        return 0;
    }
    let commands = scan_commands(full);
    let mut i = 0;
    let mut j = 0;
    let mut next_cmd = 0;
    while j < prefix.len() {
        if i >= full.len() {
            return full.len();
        }
        // Commands inside a skipped guess are never reached.
        while commands.get(next_cmd).is_some_and(|c| c.arrow_start < i) {
            next_cmd += 1;
        }
        if let Some(cmd) = commands.get(next_cmd) {
            if i == cmd.arrow_start {
                let arrow_in_prefix = if prefix[j..].starts_with('→') {
                    '→'.len_utf8()
                } else if prefix[j..].starts_with("->") {
                    2
                } else {
                    return i;
                };
                j += arrow_in_prefix;
                match prefix[j..].find(']') {
                    Some(k) => j += k + 1,
                    None => return i,
                }
                i = match full[cmd.arrow_end..].find(']') {
                    Some(k) => cmd.arrow_end + k + 1,
                    None => full.len(),
                };
                next_cmd += 1;
                continue;
            }
        }
        let c = full[i..].chars().next().expect("i < len");
        let d = prefix[j..].chars().next().expect("j < len");
        if c != d {
            return i;
        }
        i += c.len_utf8();
        j += d.len_utf8();
    }
    i
}

pub struct TemplateContext<'a> {
    pub prompt: &'a str,
    pub adapter: &'a str,
    pub seed: u64,
    pub captures: &'a [String],
}

/// FNV-1a, stable across platforms and releases.
pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in *part {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Expands `{{...}}` slots:
///
/// * `{{prompt}}`, `{{adapter}}`: echo the request.
/// * `{{1}}` … : regex capture groups of the matching rule.
/// * `{{int:name:lo:hi}}`: pseudo-random integer in `[lo, hi]`, remembered as `name`.
/// * `{{var:name}}`: a remembered value.
/// * `{{pick:a|b|c}}`: one of the alternatives.
/// * `{{calc:expr}}`: calculator result of `expr` after replacing `$name` by values.
///
/// Random choices depend only on (prompt, adapter, seed), so rendering is deterministic.
pub fn render_template(template: &str, ctx: &TemplateContext<'_>) -> String {
    let mut state = fnv1a(&[ctx.prompt.as_bytes(), ctx.adapter.as_bytes(), &ctx.seed.to_le_bytes()]);
    let mut vars: BTreeMap<String, String> = BTreeMap::new();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else {
            out.push_str(&rest[open..]);
            rest = "";
            break;
        };
        let slot = &after[..close];
        rest = &after[close + 2..];
        let value = match slot.split_once(':') {
            None if slot == "prompt" => ctx.prompt.to_string(),
            None if slot == "adapter" => ctx.adapter.to_string(),
            None if slot.chars().all(|c| c.is_ascii_digit()) && !slot.is_empty() => ctx
                .captures
                .get(slot.parse::<usize>().unwrap_or(usize::MAX))
                .cloned()
                .unwrap_or_default(),
            Some(("int", spec)) => {
                let parts: Vec<&str> = spec.split(':').collect();
                match parts.as_slice() {
                    [name, lo, hi] => match (lo.parse::<i64>(), hi.parse::<i64>()) {
                        (Ok(lo), Ok(hi)) if lo <= hi => {
                            let span = (hi - lo) as u64 + 1;
                            let v = lo + (splitmix(&mut state) % span) as i64;
                            vars.insert(name.to_string(), v.to_string());
                            v.to_string()
                        }
                        _ => format!("{{{{{slot}}}}}"),
                    },
                    _ => format!("{{{{{slot}}}}}"),
                }
            }
            Some(("var", name)) => vars.get(name).cloned().unwrap_or_default(),
            Some(("pick", alts)) => {
                let alts: Vec<&str> = alts.split('|').collect();
                alts[(splitmix(&mut state) % alts.len() as u64) as usize].to_string()
            }
            Some(("calc", expr)) => {
                let mut e = expr.to_string();
                // Longest names first so `$ab` is not clobbered by `$a`.
                let mut names: Vec<&String> = vars.keys().collect();
                names.sort_by_key(|n| std::cmp::Reverse(n.len()));
                for name in names {
                    e = e.replace(&format!("${name}"), &vars[name]);
                }
                crate::fintools::eval_expression(&e)
                    .map(|o| o.rendered)
                    .unwrap_or_else(|_| "ERR".into())
            }
            _ => format!("{{{{{slot}}}}}"),
        };
        out.push_str(&value);
    }
    out.push_str(rest);
    out
}
