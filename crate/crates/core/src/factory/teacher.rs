//! Teacher-model access for data construction.
//!
//! [`TeacherClient`] enforces the per-run call budget and records every call.
//! The log is line-delimited JSON, one [`CallRecord`] per line, and can be fed
//! to [`ReplayTeacher`] to rerun a construction without a live teacher.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{generate_text, AdapterRef, BackendError, GenerationRequest, SharedBackend};

/// Adapter label the teacher is served under.
pub const TEACHER_ADAPTER: &str = "teacher";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherParams {
    pub seed: u64,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl TeacherParams {
    pub fn seeded(seed: u64) -> Self {
        TeacherParams {
            seed,
            temperature: 0.7,
            max_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TeacherError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("replay log exhausted after {0} calls")]
    ReplayExhausted(usize),
    #[error("replay mismatch at call {index}: the prompt or parameters differ from the log")]
    ReplayMismatch { index: usize },
}

#[async_trait]
pub trait Teacher: Send + Sync {
    async fn complete(&self, prompt: &str, params: &TeacherParams) -> Result<String, TeacherError>;
}

/// One logged teacher call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub index: usize,
    pub prompt: String,
    pub params: TeacherParams,
    pub response: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("teacher budget of {0} calls exhausted")]
    BudgetExhausted(usize),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
}

/// Budgeted, logging front for a [`Teacher`].
pub struct TeacherClient {
    inner: Arc<dyn Teacher>,
    budget: usize,
    log: Mutex<Vec<CallRecord>>,
}

impl TeacherClient {
    pub fn new(inner: Arc<dyn Teacher>, budget: usize) -> Self {
        TeacherClient {
            inner,
            budget,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn calls(&self) -> usize {
        self.log.lock().expect("teacher log lock").len()
    }

    pub fn log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("teacher log lock").clone()
    }

    pub async fn complete(&self, prompt: &str, params: &TeacherParams) -> Result<String, ClientError> {
        if self.calls() >= self.budget {
            return Err(ClientError::BudgetExhausted(self.budget));
        }
        let response = self.inner.complete(prompt, params).await?;
        let mut log = self.log.lock().expect("teacher log lock");
        let index = log.len();
        log.push(CallRecord {
            index,
            prompt: prompt.to_string(),
            params: *params,
            response: response.clone(),
        });
        Ok(response)
    }

    pub fn write_log(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for record in self.log.lock().expect("teacher log lock").iter() {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

/// Serves the teacher from a generation backend under [`TEACHER_ADAPTER`].
pub struct BackendTeacher {
    backend: SharedBackend,
    adapter: AdapterRef,
}

impl BackendTeacher {
    pub fn new(backend: SharedBackend) -> Self {
        BackendTeacher {
            backend,
            adapter: AdapterRef::named(TEACHER_ADAPTER),
        }
    }

    pub fn with_adapter(mut self, adapter: AdapterRef) -> Self {
        self.adapter = adapter;
        self
    }
}

#[async_trait]
impl Teacher for BackendTeacher {
    async fn complete(&self, prompt: &str, params: &TeacherParams) -> Result<String, TeacherError> {
        let mut req = GenerationRequest::new(prompt, self.adapter.clone());
        req.seed = params.seed;
        req.temperature = params.temperature;
        req.max_tokens = params.max_tokens;
        let (text, _) = generate_text(self.backend.as_ref(), req).await?;
        Ok(text)
    }
}

/// Answers from a recorded call log, in order, checking each prompt.
pub struct ReplayTeacher {
    calls: Vec<CallRecord>,
    cursor: AtomicUsize,
}

impl ReplayTeacher {
    pub fn new(calls: Vec<CallRecord>) -> Self {
        ReplayTeacher {
            calls,
            cursor: AtomicUsize::new(0),
        }
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let calls = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<CallRecord>, _>>()?;
        Ok(Self::new(calls))
    }

    pub fn remaining(&self) -> usize {
        self.calls.len().saturating_sub(self.cursor.load(Ordering::SeqCst))
    }
}

#[async_trait]
impl Teacher for ReplayTeacher {
    async fn complete(&self, prompt: &str, params: &TeacherParams) -> Result<String, TeacherError> {
        let index = self.cursor.fetch_add(1, Ordering::SeqCst);
        let record = self
            .calls
            .get(index)
            .ok_or(TeacherError::ReplayExhausted(self.calls.len()))?;
        if record.prompt != prompt || record.params != *params {
            return Err(TeacherError::ReplayMismatch { index });
        }
        Ok(record.response.clone())
    }
}
