//! Service configuration: one TOML file with a section per concern.
//!
//! Unknown keys are rejected. Relative paths resolve against the directory
//! holding the config file. Environment variables are consulted only for
//! secrets (the remote backend's API key, named by `api_key_env`).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use meff_core::backend::RemoteConfig;
use meff_core::evalkit::EvalConfig;
use meff_core::factory::FactoryConfig;
use meff_core::router::RetrievalStep;
use meff_core::toolcall::LoopLimits;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockSection {
    /// Mock script; the bundled expert script when absent.
    pub script_path: Option<PathBuf>,
    /// Delay between streamed chunks, for exercising concurrency.
    pub chunk_delay_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub mock: MockSection,
    pub remote: Option<RemoteConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertsSection {
    /// Expert profile file; the shipped profiles when absent.
    pub profiles_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KbSection {
    /// Directory written by `meff ingest`.
    pub index_path: Option<PathBuf>,
    pub top_k: usize,
    pub threshold: f64,
    /// When set, replaces `factory.retrieval.noise_prob`.
    pub noise_prob: Option<f64>,
}

impl Default for KbSection {
    fn default() -> Self {
        let step = RetrievalStep::default();
        KbSection {
            index_path: None,
            top_k: step.top_k,
            threshold: step.threshold,
            noise_prob: None,
        }
    }
}

impl KbSection {
    pub fn step(&self) -> RetrievalStep {
        RetrievalStep {
            top_k: self.top_k,
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionsSection {
    /// Where session logs are kept; sessions live in memory only when absent.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub backend: BackendSection,
    pub experts: ExpertsSection,
    pub kb: KbSection,
    pub sessions: SessionsSection,
    pub tool_loop: LoopLimits,
    pub factory: FactoryConfig,
    pub eval: EvalConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            backend: BackendSection::default(),
            experts: ExpertsSection::default(),
            kb: KbSection::default(),
            sessions: SessionsSection::default(),
            tool_loop: LoopLimits::default(),
            factory: FactoryConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn rebase(base: &Path, path: &mut Option<PathBuf>) {
    if let Some(p) = path {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg: ServiceConfig = toml::from_str(text)?;
        if let Some(base) = base_dir {
            rebase(base, &mut cfg.backend.mock.script_path);
            rebase(base, &mut cfg.experts.profiles_path);
            rebase(base, &mut cfg.kb.index_path);
            rebase(base, &mut cfg.sessions.dir);
            let s = &mut cfg.factory.sources;
            for p in [&mut s.terms, &mut s.topics, &mut s.task_samples, &mut s.seeds, &mut s.kb_corpus] {
                rebase(base, p);
            }
        }
        if let Some(noise) = cfg.kb.noise_prob {
            cfg.factory.retrieval.noise_prob = noise;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path.parent())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.backend.kind == BackendKind::Remote && self.backend.remote.is_none() {
            return invalid("backend.kind = \"remote\" needs a [backend.remote] section");
        }
        if self.kb.top_k == 0 {
            return invalid("kb.top_k must be at least 1");
        }
        if !(self.kb.threshold >= 0.0 && self.kb.threshold.is_finite()) {
            return invalid("kb.threshold must be a non-negative number");
        }
        if let Some(p) = self.kb.noise_prob {
            if !(0.0..=1.0).contains(&p) {
                return invalid("kb.noise_prob must lie in [0, 1]");
            }
        }
        if self.tool_loop.max_tokens == 0 {
            return invalid("tool_loop.max_tokens must be at least 1");
        }
        if self.eval.parallelism == 0 {
            return invalid("eval.parallelism must be at least 1");
        }
        self.factory
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("factory: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ServiceConfig::from_toml("", None).unwrap();
        assert_eq!(cfg, ServiceConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ServiceConfig::from_toml("colour = 1", None).is_err());
        assert!(ServiceConfig::from_toml("[kb]\ntopk = 3", None).is_err());
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let cfg = ServiceConfig::from_toml("[kb]\nindex_path = \"idx\"\nnoise_prob = 0.5", Some(Path::new("/etc/meff")))
            .unwrap();
        assert_eq!(cfg.kb.index_path.as_deref(), Some(Path::new("/etc/meff/idx")));
        assert_eq!(cfg.factory.retrieval.noise_prob, 0.5);
    }

    #[test]
    fn remote_kind_needs_a_remote_section() {
        assert!(matches!(
            ServiceConfig::from_toml("[backend]\nkind = \"remote\"", None),
            Err(ConfigError::Invalid(_))
        ));
    }
}
