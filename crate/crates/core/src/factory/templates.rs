//! Prompt templates with `{slot}` placeholders.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use super::{Category, FactoryError};
use crate::knowledge::DocKind;

pub const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateGroup {
    Consulting,
    Task,
    Computing,
    RetrievalEnhanced,
    Eval,
}

impl TemplateGroup {
    pub fn category(self) -> Option<Category> {
        match self {
            TemplateGroup::Consulting => Some(Category::Consulting),
            TemplateGroup::Task => Some(Category::Task),
            TemplateGroup::Computing => Some(Category::Computing),
            TemplateGroup::RetrievalEnhanced => Some(Category::RetrievalEnhanced),
            TemplateGroup::Eval => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    TermQa,
    QuestionAnswer,
    SelfChatTurn,
    Task,
    RcQuestion,
    RcAnswer,
    Computing,
    RetrievalQuestion,
    RetrievalAnswer,
    Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShotMode {
    ZeroShot,
    FewShot(usize),
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: String,
    pub group: TemplateGroup,
    pub purpose: Purpose,
    pub shot_mode: ShotMode,
    pub body: String,
    /// Per-demonstration subtemplate for few-shot bodies.
    pub example: Option<String>,
    pub required_slots: BTreeSet<String>,
    /// Task name for task-instruction templates.
    pub task: Option<String>,
    pub doc_kind: Option<DocKind>,
    /// Label to answer text.
    pub verbalizer: BTreeMap<String, String>,
}

/// Slot names in `text`: `{name}` with `name` made of ASCII letters, digits and `_`.
pub fn slots(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    scan(text, |piece| {
        if let Piece::Slot(name) = piece {
            out.insert(name.to_string());
        }
    });
    out
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn scan<'a>(text: &'a str, mut f: impl FnMut(Piece<'a>)) {
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            f(Piece::Text(&rest[..open]));
            f(Piece::Slot(&after[..name_len]));
            rest = &after[name_len + 1..];
        } else {
            f(Piece::Text(&rest[..=open]));
            rest = after;
        }
    }
    f(Piece::Text(rest));
}

/// Fills every slot of `text` in a single pass; values are inserted verbatim.
pub fn fill(template_id: &str, text: &str, values: &BTreeMap<&str, String>) -> Result<String, FactoryError> {
    let mut out = String::with_capacity(text.len() * 2);
    let mut missing = None;
    scan(text, |piece| match piece {
        Piece::Text(t) => out.push_str(t),
        Piece::Slot(name) => match values.get(name) {
            Some(v) => out.push_str(v),
            None => {
                missing.get_or_insert_with(|| name.to_string());
            }
        },
    });
    match missing {
        Some(slot) => Err(FactoryError::SlotMismatch {
            template: template_id.to_string(),
            slot,
        }),
        None => Ok(out),
    }
}

impl PromptTemplate {
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, FactoryError> {
        fill(&self.id, &self.body, values)
    }

    pub fn render_example(&self, values: &BTreeMap<&str, String>) -> Result<String, FactoryError> {
        let example = self.example.as_deref().ok_or_else(|| {
            FactoryError::Template(format!("template `{}` has no example subtemplate", self.id))
        })?;
        fill(&self.id, example, values)
    }

    /// Answer text for a label: the verbalizer entry, or the label itself.
    pub fn verbalize<'a>(&'a self, label: &'a str) -> &'a str {
        self.verbalizer.get(label).map(String::as_str).unwrap_or(label)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    templates: Vec<TemplateSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateSpec {
    id: String,
    category: TemplateGroup,
    purpose: Purpose,
    #[serde(default)]
    shot: Option<String>,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    task: Option<String>,
    #[serde(default)]
    doc_kind: Option<DocKind>,
    body: String,
    #[serde(default)]
    example: Option<String>,
    #[serde(default)]
    verbalizer: BTreeMap<String, String>,
}

/// All templates, in file order.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: Vec<PromptTemplate>,
}

impl TemplateRegistry {
    pub fn defaults() -> Self {
        Self::from_toml(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, FactoryError> {
        let file: TemplateFile =
            toml::from_str(text).map_err(|e| FactoryError::Template(e.to_string()))?;
        let mut seen = BTreeSet::new();
        let mut templates = Vec::with_capacity(file.templates.len());
        for spec in file.templates {
            if !seen.insert(spec.id.clone()) {
                return Err(FactoryError::Template(format!("duplicate template id `{}`", spec.id)));
            }
            let shot_mode = match (spec.shot.as_deref(), spec.k) {
                (None | Some("zero"), None) => ShotMode::ZeroShot,
                (Some("few"), Some(k)) if k >= 1 => ShotMode::FewShot(k),
                _ => {
                    return Err(FactoryError::Template(format!(
                        "template `{}`: shot must be \"zero\" or \"few\" with k >= 1",
                        spec.id
                    )))
                }
            };
            if matches!(shot_mode, ShotMode::FewShot(_)) != spec.example.is_some() {
                return Err(FactoryError::Template(format!(
                    "template `{}`: few-shot templates need an example subtemplate, others must not have one",
                    spec.id
                )));
            }
            let mut required_slots = slots(&spec.body);
            if let Some(example) = &spec.example {
                if !required_slots.contains("examples") {
                    return Err(FactoryError::Template(format!(
                        "template `{}`: few-shot body lacks an {{examples}} slot",
                        spec.id
                    )));
                }
                required_slots.extend(slots(example));
            }
            if spec.purpose == Purpose::Task && spec.task.is_none() {
                return Err(FactoryError::Template(format!("task template `{}` names no task", spec.id)));
            }
            templates.push(PromptTemplate {
                id: spec.id,
                group: spec.category,
                purpose: spec.purpose,
                shot_mode,
                body: spec.body,
                example: spec.example,
                required_slots,
                task: spec.task,
                doc_kind: spec.doc_kind,
                verbalizer: spec.verbalizer,
            });
        }
        Ok(TemplateRegistry { templates })
    }

    pub fn all(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn get(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn by_purpose(&self, purpose: Purpose) -> Vec<&PromptTemplate> {
        self.templates.iter().filter(|t| t.purpose == purpose).collect()
    }

    /// The first template with `purpose`, or an error naming it.
    pub fn first(&self, purpose: Purpose) -> Result<&PromptTemplate, FactoryError> {
        self.templates
            .iter()
            .find(|t| t.purpose == purpose)
            .ok_or_else(|| FactoryError::Template(format!("no template for {purpose:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_templates_load() {
        let reg = TemplateRegistry::defaults();
        assert!(reg.all().len() >= 15);
        let judge = reg.first(Purpose::Judge).unwrap();
        assert_eq!(judge.group.category(), None);
        let few = reg.get("task.sentiment.few.01").unwrap();
        assert_eq!(few.shot_mode, ShotMode::FewShot(2));
        assert!(few.required_slots.contains("label"));
    }

    #[test]
    fn complete_slot_map_leaves_no_markers() {
        let reg = TemplateRegistry::defaults();
        for t in reg.all() {
            let values: BTreeMap<&str, String> = t
                .required_slots
                .iter()
                .map(|s| (s.as_str(), format!("<{s}>")))
                .collect();
            let out = t.render(&values).unwrap();
            assert!(slots(&out).is_empty(), "{}: {out}", t.id);
        }
    }

    #[test]
    fn missing_slot_is_named() {
        let err = fill("t", "新闻：{text}", &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, FactoryError::SlotMismatch { slot, .. } if slot == "text"));
    }

    #[test]
    fn braces_that_are_not_slots_are_kept() {
        let values = BTreeMap::from([("a", "1".to_string())]);
        assert_eq!(fill("t", "{a} {b c} {} {", &values).unwrap(), "1 {b c} {} {");
        let values = BTreeMap::from([("a", "{a}".to_string())]);
        assert_eq!(fill("t", "x{a}y { z", &values).unwrap(), "x{a}y { z");
    }
}
