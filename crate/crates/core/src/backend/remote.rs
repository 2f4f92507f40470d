//! Client for an OpenAI-style streaming chat-completion server.
//!
//! The request carries the prompt as a user message and, when resuming, the
//! already produced text as a trailing assistant message with
//! `continue_final_message` set. The adapter label is sent as `model`.
//! Responses are server-sent events whose `data:` payloads hold
//! `choices[0].delta.content` and finally `choices[0].finish_reason`,
//! terminated by `data: [DONE]`.
//!
//! A failed attempt is retried with exponential backoff. If chunks were
//! already delivered, the retry resumes after them, so downstream never sees
//! a chunk twice.

use std::time::Duration;

use async_trait::async_trait;
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

use super::{
    Backend, BackendError, Completion, FinishReason, GenerationRequest, GenerationStream, StreamItem, Usage,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Model name used when the request has no adapter label.
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

fn default_backoff() -> u64 {
    250
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            api_key_env: None,
            model: model.into(),
            timeout_s: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if !(config.timeout_s.is_finite() && config.timeout_s > 0.0) {
            return Err(BackendError::InvalidRequest("timeout_s must be positive".into()));
        }
        let timeout = Duration::from_secs_f64(config.timeout_s);
        let client = reqwest::Client::builder()
            .connect_timeout(timeout)
            .read_timeout(timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let api_key = config.api_key_env.as_deref().and_then(|var| std::env::var(var).ok());
        Ok(RemoteBackend { config, api_key, client })
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn body(&self, req: &GenerationRequest) -> serde_json::Value {
        let mut messages = vec![json!({"role": "user", "content": req.prompt})];
        if !req.prefix.is_empty() {
            messages.push(json!({"role": "assistant", "content": req.prefix}));
        }
        let mut body = json!({
            "model": req.adapter.label().unwrap_or(&self.config.model),
            "messages": messages,
            "stream": true,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "seed": req.seed,
        });
        if !req.prefix.is_empty() {
            body["continue_final_message"] = json!(true);
            body["add_generation_prompt"] = json!(false);
        }
        if !req.stop_sequences.is_empty() {
            body["stop"] = json!(req.stop_sequences);
        }
        body
    }

    async fn open(&self, req: &GenerationRequest) -> Result<reqwest::Response, Attempt> {
        let mut call = self.client.post(self.endpoint("v1/chat/completions")).json(&self.body(req));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call
            .send()
            .await
            .map_err(|e| Attempt::Retry(BackendError::Unavailable(e.to_string())))?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let detail = resp.text().await.unwrap_or_default();
        let detail = format!("HTTP {status}: {}", detail.chars().take(200).collect::<String>());
        Err(match status.as_u16() {
            404 => Attempt::Fatal(BackendError::AdapterUnknown(req.adapter.id.clone())),
            400 | 422 => Attempt::Fatal(BackendError::InvalidRequest(detail)),
            408 | 429 | 500..=599 => Attempt::Retry(BackendError::Unavailable(detail)),
            _ => Attempt::Fatal(BackendError::Protocol(detail)),
        })
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

#[derive(Deserialize)]
struct StreamFrame {
    #[serde(default)]
    choices: Vec<FrameChoice>,
    #[serde(default)]
    usage: Option<FrameUsage>,
}

#[derive(Deserialize)]
struct FrameChoice {
    #[serde(default)]
    delta: Option<FrameDelta>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct FrameDelta {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct FrameUsage {
    #[serde(default)]
    prompt_tokens: usize,
    #[serde(default)]
    completion_tokens: usize,
}

/// Splits a byte stream into server-sent-event `data:` payloads.
#[derive(Default)]
pub(crate) struct SseDecoder {
    pending: Vec<u8>,
    data: Vec<String>,
}

impl SseDecoder {
    /// Feeds bytes; returns the payloads of every event completed by them.
    pub(crate) fn push(&mut self, bytes: &[u8]) -> Vec<String> {
        self.pending.extend_from_slice(bytes);
        let mut events = Vec::new();
        while let Some(nl) = self.pending.iter().position(|b| *b == b'\n') {
            let line: Vec<u8> = self.pending.drain(..=nl).collect();
            let line = String::from_utf8_lossy(&line);
            let line = line.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                if !self.data.is_empty() {
                    events.push(self.data.join("\n"));
                    self.data.clear();
                }
            } else if let Some(value) = line.strip_prefix("data:") {
                self.data.push(value.strip_prefix(' ').unwrap_or(value).to_string());
            }
        }
        events
    }

    pub(crate) fn finish(&mut self) -> Option<String> {
        if !self.pending.is_empty() {
            let mut rest = std::mem::take(&mut self.pending);
            rest.push(b'\n');
            let mut events = self.push(&rest);
            events.extend(self.finish());
            return events.into_iter().next();
        }
        (!self.data.is_empty()).then(|| {
            let payload = self.data.join("\n");
            self.data.clear();
            payload
        })
    }
}

fn finish_reason(s: &str) -> FinishReason {
    match s {
        "stop" | "eos" | "stop_sequence" => FinishReason::Stop,
        "length" | "max_tokens" => FinishReason::Length,
        _ => FinishReason::Error,
    }
}

type Sender = mpsc::Sender<Result<StreamItem, BackendError>>;

impl RemoteBackend {
    /// Drives attempts until completion, forwarding every new chunk once.
    async fn pump(self, mut req: GenerationRequest, tx: Sender) {
        let mut delivered_tokens = 0usize;
        let mut attempt = 0u32;
        loop {
            let failure = match self.open(&req).await {
                Ok(resp) => match self.relay(resp, &mut req, &mut delivered_tokens, &tx).await {
                    Ok(()) => return,
                    Err(e) => e,
                },
                Err(e) => e,
            };
            let error = match failure {
                Attempt::Fatal(e) => {
                    let _ = tx.send(Err(e)).await;
                    return;
                }
                Attempt::Retry(e) if attempt >= self.config.retries => {
                    let _ = tx.send(Err(e)).await;
                    return;
                }
                Attempt::Retry(e) => e,
            };
            if tx.is_closed() {
                return;
            }
            let delay = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
            tracing::warn!(attempt, %error, delay_ms = delay, "remote generation failed, retrying");
            tokio::time::sleep(Duration::from_millis(delay)).await;
            attempt += 1;
        }
    }

    async fn relay(
        &self,
        resp: reqwest::Response,
        req: &mut GenerationRequest,
        delivered_tokens: &mut usize,
        tx: &Sender,
    ) -> Result<(), Attempt> {
        let mut bytes = resp.bytes_stream();
        let mut decoder = SseDecoder::default();
        let mut finish = None;
        let mut usage = None;
        let mut ended = false;
        while !ended {
            let payloads = match bytes.next().await {
                Some(Ok(b)) => decoder.push(&b),
                Some(Err(e)) => return Err(Attempt::Retry(BackendError::Unavailable(e.to_string()))),
                None => {
                    ended = true;
                    decoder.finish().into_iter().collect()
                }
            };
            for payload in payloads {
                if payload.trim() == "[DONE]" {
                    let reason = finish.unwrap_or(FinishReason::Stop);
                    return self.complete(req, *delivered_tokens, reason, usage, tx).await;
                }
                let frame: StreamFrame = serde_json::from_str(&payload)
                    .map_err(|e| Attempt::Fatal(BackendError::Protocol(format!("bad frame: {e}"))))?;
                if let Some(u) = frame.usage {
                    usage = Some(u);
                }
                if let Some(choice) = frame.choices.into_iter().next() {
                    if let Some(text) = choice.delta.and_then(|d| d.content).filter(|t| !t.is_empty()) {
                        req.prefix.push_str(&text);
                        req.max_tokens = req.max_tokens.saturating_sub(1).max(1);
                        *delivered_tokens += 1;
                        if tx.send(Ok(StreamItem::Chunk { text, tokens: 1 })).await.is_err() {
                            return Ok(());
                        }
                    }
                    if let Some(reason) = choice.finish_reason {
                        finish = Some(finish_reason(&reason));
                    }
                }
            }
        }
        match finish {
            Some(reason) => self.complete(req, *delivered_tokens, reason, usage, tx).await,
            None => Err(Attempt::Retry(BackendError::Unavailable(
                "stream ended before completion".into(),
            ))),
        }
    }

    async fn complete(
        &self,
        req: &GenerationRequest,
        delivered_tokens: usize,
        reason: FinishReason,
        usage: Option<FrameUsage>,
        tx: &Sender,
    ) -> Result<(), Attempt> {
        let (prompt_tokens, completion_tokens) = match usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens.max(delivered_tokens)),
            None => (0, delivered_tokens),
        };
        let done = Completion {
            finish_reason: reason,
            usage: Usage {
                prompt_tokens,
                completion_tokens,
                adapter: req.adapter.id.clone(),
            },
        };
        let _ = tx.send(Ok(StreamItem::Done(done))).await;
        Ok(())
    }
}

#[async_trait]
impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    async fn generate_stream(&self, req: GenerationRequest) -> Result<GenerationStream, BackendError> {
        req.validate()?;
        let (tx, rx) = mpsc::channel(64);
        tokio::spawn(self.clone().pump(req, tx));
        Ok(futures::stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|item| (item, rx)) }).boxed())
    }

    async fn health(&self) -> Result<(), BackendError> {
        let mut call = self.client.get(self.endpoint("v1/models"));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().await.map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(BackendError::Unavailable(format!("HTTP {}", resp.status())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoder_handles_split_lines_and_multibyte_text() {
        let frame = "data: {\"x\":\"增长\"}\n\ndata: [DONE]\n\n".as_bytes();
        for cut in 0..frame.len() {
            let mut d = SseDecoder::default();
            let mut out = d.push(&frame[..cut]);
            out.extend(d.push(&frame[cut..]));
            assert_eq!(out, ["{\"x\":\"增长\"}", "[DONE]"], "cut at {cut}");
        }
    }

    #[test]
    fn decoder_flushes_unterminated_event() {
        let mut d = SseDecoder::default();
        assert!(d.push(b": comment\ndata: a").is_empty());
        assert_eq!(d.finish().as_deref(), Some("a"));
    }

    #[test]
    fn resume_request_continues_the_assistant_message() {
        let backend = RemoteBackend::new(RemoteConfig::new("http://localhost:1", "base")).unwrap();
        let mut req = GenerationRequest::new("p", super::super::AdapterRef::named("lora-task"));
        assert_eq!(backend.body(&req)["model"], "lora-task");
        assert!(backend.body(&req).get("continue_final_message").is_none());
        req.prefix = "已生成".into();
        let body = backend.body(&req);
        assert_eq!(body["messages"][1]["content"], "已生成");
        assert_eq!(body["continue_final_message"], true);
        req.adapter = super::super::AdapterRef::base();
        assert_eq!(backend.body(&req)["model"], "base");
    }
}
