//! Text generation behind one contract: a streamed continuation of
//! `prompt + prefix` under a named adapter.
//!
//! The adapter label is opaque here. A remote server swaps its LoRA weights
//! on it; the mock backend uses it to pick a script.

mod adapters;
pub mod mock;
pub mod remote;

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use futures::stream::BoxStream;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapters::AdapterRegistry;
pub use mock::{MockBackend, MockRule, MockScript};
pub use remote::{RemoteBackend, RemoteConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "label", rename_all = "snake_case")]
pub enum AdapterKind {
    /// Base model, no adapter loaded.
    None,
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRef {
    pub id: String,
    pub kind: AdapterKind,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl AdapterRef {
    pub fn named(id: impl Into<String>) -> Self {
        let id = id.into();
        AdapterRef {
            kind: AdapterKind::Named(id.clone()),
            id,
            metadata: BTreeMap::new(),
        }
    }

    pub fn base() -> Self {
        AdapterRef {
            id: "base".into(),
            kind: AdapterKind::None,
            metadata: BTreeMap::new(),
        }
    }

    /// Label sent to the backend, `None` for the bare base model.
    pub fn label(&self) -> Option<&str> {
        match &self.kind {
            AdapterKind::None => None,
            AdapterKind::Named(label) => Some(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    /// Assistant text already produced; generation resumes after it.
    #[serde(default)]
    pub prefix: String,
    pub adapter: AdapterRef,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    pub max_tokens: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, adapter: AdapterRef) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            prefix: String::new(),
            adapter,
            stop_sequences: Vec::new(),
            max_tokens: 1024,
            temperature: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if self.stop_sequences.iter().any(String::is_empty) {
            return Err(BackendError::InvalidRequest("empty stop sequence".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest("temperature must be in [0, 2]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    /// Adapter that served the request, echoed back by the backend.
    pub adapter: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    /// A piece of generated text and the number of tokens it accounts for.
    Chunk { text: String, tokens: usize },
    Done(Completion),
}

pub type GenerationStream = BoxStream<'static, Result<StreamItem, BackendError>>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("unknown adapter `{0}`")]
    AdapterUnknown(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[async_trait]
pub trait Backend: Send + Sync {
    /// Short name for logs and health output.
    fn name(&self) -> &str;

    async fn generate_stream(&self, req: GenerationRequest) -> Result<GenerationStream, BackendError>;

    async fn health(&self) -> Result<(), BackendError>;
}

pub type SharedBackend = Arc<dyn Backend>;

/// Drains a stream into the full text and its completion record.
pub async fn collect(mut stream: GenerationStream) -> Result<(String, Option<Completion>), BackendError> {
    use futures::StreamExt;
    let mut text = String::new();
    let mut done = None;
    while let Some(item) = stream.next().await {
        match item? {
            StreamItem::Chunk { text: t, .. } => text.push_str(&t),
            StreamItem::Done(c) => done = Some(c),
        }
    }
    Ok((text, done))
}

/// Runs one request to completion.
pub async fn generate_text(
    backend: &dyn Backend,
    req: GenerationRequest,
) -> Result<(String, Option<Completion>), BackendError> {
    collect(backend.generate_stream(req).await?).await
}
