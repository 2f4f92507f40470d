//! Shared service state and the chat entry point used by both the HTTP
//! routes and the CLI.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use meff_core::backend::{BackendError, MockBackend, RemoteBackend, SharedBackend};
use meff_core::knowledge::{KnowledgeError, KnowledgeIndex};
use meff_core::router::{ExpertId, ProfileError, ProfileSet};
use meff_core::turn::{run_turn, ChatEvent, TurnContext, TurnError, TurnOutcome, TurnRequest};
use thiserror::Error;

use crate::config::{BackendKind, ServiceConfig};
use crate::sessions::{SessionError, SessionStore};

/// Mock script answering for the four expert adapters.
pub const EXPERTS_MOCK_SCRIPT: &str = include_str!("../data/experts_mock.toml");

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("expert profiles: {0}")]
    Profiles(#[from] ProfileError),
    #[error("knowledge index: {0}")]
    Index(#[from] KnowledgeError),
    #[error(transparent)]
    Sessions(#[from] SessionError),
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("message is empty")]
    EmptyMessage,
    #[error("unknown expert `{0}`")]
    UnknownExpert(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Parses an expert selector; `auto` and the empty string mean "route".
pub fn parse_expert(raw: Option<&str>) -> Result<Option<ExpertId>, ChatError> {
    match raw.map(str::trim) {
        None | Some("") | Some("auto") => Ok(None),
        Some(s) => s
            .to_ascii_lowercase()
            .parse()
            .map(Some)
            .map_err(|_| ChatError::UnknownExpert(s.to_string())),
    }
}

pub fn build_backend(config: &ServiceConfig) -> Result<SharedBackend, BackendError> {
    match config.backend.kind {
        BackendKind::Mock => {
            let mock = &config.backend.mock;
            let mut backend = match &mock.script_path {
                Some(p) => MockBackend::from_path(p)?,
                None => MockBackend::from_toml(EXPERTS_MOCK_SCRIPT)?,
            };
            if mock.chunk_delay_ms > 0 {
                backend = backend.with_chunk_delay(Duration::from_millis(mock.chunk_delay_ms));
            }
            Ok(Arc::new(backend))
        }
        BackendKind::Remote => {
            let remote = config
                .backend
                .remote
                .clone()
                .ok_or_else(|| BackendError::InvalidRequest("missing [backend.remote] section".into()))?;
            Ok(Arc::new(RemoteBackend::new(remote)?))
        }
    }
}

pub fn load_profiles(path: Option<&Path>) -> Result<ProfileSet, ProfileError> {
    match path {
        Some(p) => ProfileSet::from_path(p),
        None => Ok(ProfileSet::defaults()),
    }
}

pub struct ChatInput {
    pub session_id: Option<String>,
    pub message: String,
    pub expert: Option<ExpertId>,
}

pub struct ChatResult {
    pub session_id: String,
    pub events: Vec<ChatEvent>,
    pub outcome: Result<TurnOutcome, TurnError>,
}

pub struct AppState {
    pub config: ServiceConfig,
    pub backend: SharedBackend,
    profiles: RwLock<Arc<ProfileSet>>,
    pub index: Option<Arc<KnowledgeIndex>>,
    pub sessions: SessionStore,
}

impl AppState {
    pub fn new(
        config: ServiceConfig,
        backend: SharedBackend,
        profiles: ProfileSet,
        index: Option<KnowledgeIndex>,
        sessions: SessionStore,
    ) -> Self {
        AppState {
            config,
            backend,
            profiles: RwLock::new(Arc::new(profiles)),
            index: index.map(Arc::new),
            sessions,
        }
    }

    /// Builds everything the config describes. A configured index directory
    /// that does not exist yet is not an error: retrieval reports that no
    /// index is loaded until one is ingested and the service restarted.
    pub fn from_config(config: ServiceConfig) -> Result<Self, StartupError> {
        let backend = build_backend(&config)?;
        let profiles = load_profiles(config.experts.profiles_path.as_deref())?;
        let index = match &config.kb.index_path {
            Some(dir) if dir.exists() => Some(KnowledgeIndex::load(dir)?),
            Some(dir) => {
                tracing::warn!(path = %dir.display(), "knowledge index not found; retrieval disabled");
                None
            }
            None => None,
        };
        let sessions = match &config.sessions.dir {
            Some(dir) => SessionStore::open(dir)?,
            None => SessionStore::in_memory(),
        };
        Ok(AppState::new(config, backend, profiles, index, sessions))
    }

    pub fn profiles(&self) -> Arc<ProfileSet> {
        self.profiles.read().expect("profiles lock").clone()
    }

    /// Replaces the profiles from `path` (or the configured file). On error
    /// the current profiles stay in place.
    pub fn reload_profiles(&self, path: Option<PathBuf>) -> Result<Arc<ProfileSet>, ProfileError> {
        let path = path.or_else(|| self.config.experts.profiles_path.clone());
        let fresh = Arc::new(load_profiles(path.as_deref())?);
        *self.profiles.write().expect("profiles lock") = fresh.clone();
        tracing::info!(path = ?path, "reloaded expert profiles");
        Ok(fresh)
    }

    /// Runs one turn in a session. Turns of the same session are serialized;
    /// the turn is persisted whether it succeeds or fails.
    pub async fn chat(
        &self,
        input: ChatInput,
        mut on_event: impl FnMut(&ChatEvent) + Send,
    ) -> Result<ChatResult, ChatError> {
        if input.message.trim().is_empty() {
            return Err(ChatError::EmptyMessage);
        }
        let handle = self.sessions.get_or_create(input.session_id.as_deref())?;
        let mut session = handle.lock().await;
        let profiles = self.profiles();
        let ctx = TurnContext {
            backend: self.backend.as_ref(),
            profiles: &profiles,
            index: self.index.as_deref(),
            retrieval: self.config.kb.step(),
            limits: self.config.tool_loop,
        };
        let req = TurnRequest {
            message: input.message.clone(),
            expert: input.expert,
            history: session.history.clone(),
            seed: session.turns,
            session_id: Some(session.id.clone()),
        };
        let mut events = Vec::new();
        let outcome = run_turn(&ctx, &req, &mut |e| {
            on_event(&e);
            events.push(e);
        })
        .await;
        let (answer, expert) = match &outcome {
            Ok(o) => (Some(o.transcript.as_str()), Some(o.metadata.expert)),
            Err(_) => (None, None),
        };
        self.sessions
            .record_turn(&mut session, &input.message, answer, expert, events.clone())?;
        Ok(ChatResult {
            session_id: session.id.clone(),
            events,
            outcome,
        })
    }
}
