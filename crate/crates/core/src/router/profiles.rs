use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use super::ExpertId;
use crate::backend::{AdapterRef, AdapterRegistry};

/// Profiles shipped with the crate.
pub const DEFAULT_PROFILES: &str = include_str!("../../config/experts.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub tools_enabled: bool,
    pub retrieval_enabled: bool,
}

#[derive(Debug, Clone)]
pub struct RoutingRule {
    pub pattern: String,
    pub weight: f64,
    regex: Regex,
}

impl RoutingRule {
    pub fn new(pattern: impl Into<String>, weight: f64) -> Result<Self, ProfileError> {
        let pattern = pattern.into();
        if !(weight.is_finite() && weight > 0.0) {
            return Err(ProfileError::Invalid(format!(
                "rule `{pattern}` needs a positive finite weight"
            )));
        }
        let regex = Regex::new(&pattern).map_err(|e| ProfileError::Invalid(format!("rule `{pattern}`: {e}")))?;
        Ok(RoutingRule { pattern, weight, regex })
    }

    pub fn matches(&self, query: &str) -> bool {
        self.regex.is_match(query)
    }
}

impl PartialEq for RoutingRule {
    fn eq(&self, other: &Self) -> bool {
        self.pattern == other.pattern && self.weight == other.weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertProfile {
    pub id: ExpertId,
    pub adapter: AdapterRef,
    pub preamble: String,
    pub capabilities: Capabilities,
    pub rules: Vec<RoutingRule>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read profiles from {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed profile file: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid profiles: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    pattern: String,
    weight: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    adapter: String,
    preamble: Option<String>,
    preamble_file: Option<PathBuf>,
    #[serde(default)]
    tools_enabled: bool,
    #[serde(default)]
    retrieval_enabled: bool,
    #[serde(default)]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfiles {
    consulting: RawProfile,
    task: RawProfile,
    computing: RawProfile,
    retrieval: RawProfile,
}

/// The complete set of four expert profiles. Immutable once built; reloads
/// construct a new set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    profiles: BTreeMap<ExpertId, ExpertProfile>,
}

impl ProfileSet {
    pub fn defaults() -> Self {
        Self::from_toml(DEFAULT_PROFILES, None).expect("shipped profiles are valid")
    }

    /// Parses profiles; `preamble_file` entries resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self, ProfileError> {
        let raw: RawProfiles = toml::from_str(text)?;
        let mut profiles = BTreeMap::new();
        for (id, raw) in [
            (ExpertId::Consulting, raw.consulting),
            (ExpertId::Task, raw.task),
            (ExpertId::Computing, raw.computing),
            (ExpertId::Retrieval, raw.retrieval),
        ] {
            profiles.insert(id, build_profile(id, raw, base_dir)?);
        }
        let set = ProfileSet { profiles };
        set.validate()?;
        Ok(set)
    }

    pub fn from_path(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path.parent())
    }

    pub fn from_profiles(list: Vec<ExpertProfile>) -> Result<Self, ProfileError> {
        let set = ProfileSet {
            profiles: list.into_iter().map(|p| (p.id, p)).collect(),
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<(), ProfileError> {
        for id in ExpertId::ALL {
            let Some(p) = self.profiles.get(&id) else {
                return Err(ProfileError::Invalid(format!("missing expert `{id}`")));
            };
            let want = Capabilities {
                tools_enabled: id == ExpertId::Computing,
                retrieval_enabled: id == ExpertId::Retrieval,
            };
            if p.capabilities != want {
                return Err(ProfileError::Invalid(format!(
                    "expert `{id}` must have tools_enabled={} and retrieval_enabled={}",
                    want.tools_enabled, want.retrieval_enabled
                )));
            }
        }
        self.adapter_registry().map(|_| ())
    }

    /// # Panics
    /// Never: a set always holds all four experts.
    pub fn get(&self, id: ExpertId) -> &ExpertProfile {
        &self.profiles[&id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ExpertProfile> {
        self.profiles.values()
    }

    pub fn adapter_registry(&self) -> Result<AdapterRegistry, ProfileError> {
        let mut reg = AdapterRegistry::new();
        for p in self.profiles.values() {
            reg.register(p.id, p.adapter.clone())
                .map_err(|e| ProfileError::Invalid(e.to_string()))?;
        }
        Ok(reg)
    }

    /// Same profiles with every rule weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, ProfileError> {
        let mut out = self.clone();
        for p in out.profiles.values_mut() {
            for r in &mut p.rules {
                *r = RoutingRule::new(r.pattern.clone(), r.weight * factor)?;
            }
        }
        Ok(out)
    }
}

fn build_profile(id: ExpertId, raw: RawProfile, base_dir: Option<&Path>) -> Result<ExpertProfile, ProfileError> {
    if raw.adapter.trim().is_empty() {
        return Err(ProfileError::Invalid(format!("expert `{id}` has an empty adapter id")));
    }
    let preamble = match (raw.preamble, raw.preamble_file) {
        (Some(text), None) => text,
        (None, Some(file)) => {
            let path = base_dir.map(|d| d.join(&file)).unwrap_or(file);
            std::fs::read_to_string(&path).map_err(|source| ProfileError::Io { path, source })?
        }
        _ => {
            return Err(ProfileError::Invalid(format!(
                "expert `{id}` needs exactly one of preamble or preamble_file"
            )))
        }
    };
    let rules = raw
        .rules
        .into_iter()
        .map(|r| RoutingRule::new(r.pattern, r.weight))
        .collect::<Result<_, _>>()?;
    Ok(ExpertProfile {
        id,
        adapter: AdapterRef::named(raw.adapter),
        preamble,
        capabilities: Capabilities {
            tools_enabled: raw.tools_enabled,
            retrieval_enabled: raw.retrieval_enabled,
        },
        rules,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_profiles_bind_distinct_adapters() {
        let set = ProfileSet::defaults();
        let reg = set.adapter_registry().unwrap();
        assert_eq!(reg.activate(ExpertId::Computing).unwrap().id, "lora-computing");
        assert_eq!(reg.iter().count(), 4);
    }

    #[test]
    fn rejects_bad_files() {
        let broken = DEFAULT_PROFILES.replace("tools_enabled = true", "tools_enabled = false");
        assert!(matches!(ProfileSet::from_toml(&broken, None), Err(ProfileError::Invalid(_))));
        let unknown = format!("{DEFAULT_PROFILES}\n[extra]\nadapter = \"x\"\n");
        assert!(matches!(ProfileSet::from_toml(&unknown, None), Err(ProfileError::Syntax(_))));
        let dup = DEFAULT_PROFILES.replace("lora-task", "lora-consulting");
        assert!(ProfileSet::from_toml(&dup, None).is_err());
        let bad_regex = DEFAULT_PROFILES.replace("多少", "(多少");
        assert!(ProfileSet::from_toml(&bad_regex, None).is_err());
    }

    #[test]
    fn preamble_files_resolve_relative_to_the_profile_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("task.txt"), "任务助手").unwrap();
        let text = DEFAULT_PROFILES.replacen(
            "preamble = \"你是一名金融文本处理助手。请严格按照指令完成情感分析、信息抽取、文本分类、摘要等任务，只输出任务要求的结果。\"",
            "preamble_file = \"task.txt\"",
            1,
        );
        let path = dir.path().join("experts.toml");
        std::fs::write(&path, text).unwrap();
        let set = ProfileSet::from_path(&path).unwrap();
        assert_eq!(set.get(ExpertId::Task).preamble, "任务助手");
    }
}
