//! Expert selection and execution planning.
//!
//! Four experts share one base model, each behind its own adapter. A query
//! goes to the explicitly requested expert if there is one, otherwise to the
//! expert whose routing rules score highest, otherwise to Consulting.

mod profiles;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::AdapterRef;
use crate::dialogue::Message;
use crate::toolcall::ToolRegistry;

pub use profiles::{Capabilities, ExpertProfile, ProfileError, ProfileSet, RoutingRule, DEFAULT_PROFILES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertId {
    Consulting,
    Task,
    Computing,
    Retrieval,
}

impl ExpertId {
    pub const ALL: [ExpertId; 4] = [
        ExpertId::Consulting,
        ExpertId::Task,
        ExpertId::Computing,
        ExpertId::Retrieval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExpertId::Consulting => "consulting",
            ExpertId::Task => "task",
            ExpertId::Computing => "computing",
            ExpertId::Retrieval => "retrieval",
        }
    }
}

impl fmt::Display for ExpertId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown expert `{0}`")]
pub struct UnknownExpert(pub String);

impl FromStr for ExpertId {
    type Err = UnknownExpert;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        ExpertId::ALL
            .into_iter()
            .find(|e| e.as_str() == lower)
            .ok_or_else(|| UnknownExpert(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RouteSource {
    Explicit,
    /// The strongest matching pattern of the winning expert.
    Rule { pattern: String },
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub expert: ExpertId,
    pub source: RouteSource,
    pub scores: BTreeMap<ExpertId, f64>,
}

/// Picks the expert for `query`.
pub fn route(query: &str, explicit: Option<ExpertId>, profiles: &ProfileSet) -> RoutingDecision {
    let mut scores = BTreeMap::new();
    let mut strongest: BTreeMap<ExpertId, &RoutingRule> = BTreeMap::new();
    for profile in profiles.iter() {
        let mut total = 0.0;
        for rule in profile.rules.iter().filter(|r| r.matches(query)) {
            total += rule.weight;
            let best = strongest.entry(profile.id).or_insert(rule);
            if rule.weight > best.weight {
                *best = rule;
            }
        }
        scores.insert(profile.id, total);
    }

    if let Some(expert) = explicit {
        return RoutingDecision { expert, source: RouteSource::Explicit, scores };
    }

    let top = scores.values().copied().fold(0.0_f64, f64::max);
    let leaders: Vec<ExpertId> = scores
        .iter()
        .filter(|(_, s)| **s == top)
        .map(|(e, _)| *e)
        .collect();
    match leaders.as_slice() {
        [winner] if top > 0.0 => RoutingDecision {
            expert: *winner,
            source: RouteSource::Rule {
                pattern: strongest[winner].pattern.clone(),
            },
            scores,
        },
        _ => RoutingDecision {
            expert: ExpertId::Consulting,
            source: RouteSource::Default,
            scores,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalStep {
    pub top_k: usize,
    pub threshold: f64,
}

impl Default for RetrievalStep {
    fn default() -> Self {
        RetrievalStep { top_k: 3, threshold: 0.0 }
    }
}

/// A retrieved passage as it appears in a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub expert: ExpertId,
    pub adapter: AdapterRef,
    pub preamble: String,
    pub query: String,
    pub tools: Option<ToolRegistry>,
    pub retrieval: Option<RetrievalStep>,
}

impl ExecutionPlan {
    /// Preamble, optional references, earlier turns, then the query.
    pub fn render_prompt(&self, history: &[Message], references: &[Reference]) -> String {
        let mut prompt = self.preamble.trim_end().to_string();
        prompt.push_str("\n\n");
        if !references.is_empty() {
            prompt.push_str("参考资料：\n");
            for (i, r) in references.iter().enumerate() {
                prompt.push_str(&format!("[{}] {}\n{}\n", i + 1, r.title, r.text));
            }
            prompt.push('\n');
        }
        for m in history {
            prompt.push_str(&format!("{}：{}\n", m.role.speaker(), m.text));
        }
        prompt.push_str(&format!("用户：{}\n助手：", self.query));
        prompt
    }
}

pub fn plan(
    decision: &RoutingDecision,
    profiles: &ProfileSet,
    query: &str,
    retrieval: RetrievalStep,
) -> ExecutionPlan {
    let profile = profiles.get(decision.expert);
    ExecutionPlan {
        expert: profile.id,
        adapter: profile.adapter.clone(),
        preamble: profile.preamble.clone(),
        query: query.to_string(),
        tools: profile
            .capabilities
            .tools_enabled
            .then(ToolRegistry::standard),
        retrieval: profile.capabilities.retrieval_enabled.then_some(retrieval),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> ProfileSet {
        ProfileSet::defaults()
    }

    #[test]
    fn explicit_wins() {
        let d = route("请计算增长率", Some(ExpertId::Task), &defaults());
        assert_eq!(d.expert, ExpertId::Task);
        assert_eq!(d.source, RouteSource::Explicit);
    }

    #[test]
    fn rules_and_default() {
        let d = route("帮我计算一下", None, &defaults());
        assert_eq!(d.expert, ExpertId::Computing);
        assert_eq!(d.source, RouteSource::Rule { pattern: "计算|算一下|算出".into() });

        let d = route("今天天气", None, &defaults());
        assert_eq!(d.expert, ExpertId::Consulting);
        assert_eq!(d.source, RouteSource::Default);
        assert!(d.scores.values().all(|s| *s == 0.0));

        assert_eq!(route("", None, &defaults()).expert, ExpertId::Consulting);
        assert_eq!(route("最近有哪些关于新能源行业的新闻？", None, &defaults()).expert, ExpertId::Retrieval);
        assert_eq!(route("请对下面这句话进行情感分析", None, &defaults()).expert, ExpertId::Task);
    }

    #[test]
    fn ties_fall_back_to_consulting() {
        let set = ProfileSet::from_toml(
            r#"
            [consulting]
            adapter = "a"
            preamble = "p"
            [task]
            adapter = "b"
            preamble = "p"
            rules = [{ pattern = "x", weight = 1.0 }]
            [computing]
            adapter = "c"
            preamble = "p"
            tools_enabled = true
            rules = [{ pattern = "x", weight = 1.0 }]
            [retrieval]
            adapter = "d"
            preamble = "p"
            retrieval_enabled = true
            "#,
            None,
        )
        .unwrap();
        let d = route("x", None, &set);
        assert_eq!((d.expert, d.source), (ExpertId::Consulting, RouteSource::Default));
    }

    #[test]
    fn plans_follow_capabilities() {
        let set = defaults();
        for expert in ExpertId::ALL {
            let d = route("q", Some(expert), &set);
            let p = plan(&d, &set, "q", RetrievalStep::default());
            assert_eq!(p.adapter, set.get(expert).adapter);
            assert_eq!(p.tools.is_some(), expert == ExpertId::Computing);
            assert_eq!(p.retrieval.is_some(), expert == ExpertId::Retrieval);
        }
        let d = route("q", Some(ExpertId::Computing), &set);
        let kinds: Vec<_> = plan(&d, &set, "q", RetrievalStep::default()).tools.unwrap().kinds().collect();
        assert_eq!(kinds.len(), 4);
    }

    #[test]
    fn prompt_layout() {
        let set = defaults();
        let d = route("q", Some(ExpertId::Retrieval), &set);
        let p = plan(&d, &set, "利润如何？", RetrievalStep::default());
        let prompt = p.render_prompt(
            &[Message::human("你好"), Message::assistant("你好！")],
            &[Reference { title: "年报".into(), text: "利润增长。".into() }],
        );
        assert!(prompt.starts_with(&set.get(ExpertId::Retrieval).preamble));
        assert!(prompt.contains("参考资料：\n[1] 年报\n利润增长。\n"));
        assert!(prompt.ends_with("用户：你好\n助手：你好！\n用户：利润如何？\n助手："));
    }

    #[test]
    fn expert_names_round_trip() {
        for e in ExpertId::ALL {
            assert_eq!(e.as_str().parse::<ExpertId>().unwrap(), e);
            assert_eq!(serde_json::to_string(&e).unwrap(), format!("\"{e}\""));
        }
        assert_eq!("Computing".parse::<ExpertId>().unwrap(), ExpertId::Computing);
        assert!("auto".parse::<ExpertId>().is_err());
    }
}
