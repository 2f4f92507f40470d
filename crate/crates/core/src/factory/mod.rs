//! Instruction-data construction.
//!
//! Four pipelines build the four record categories with a teacher model:
//! consulting QA and self-chat dialogues, task instructions and reading
//! comprehension, self-instructed computing problems whose tool commands are
//! checked by re-execution, and retrieval-enhanced answers over a knowledge
//! base with injected noise references.
//!
//! Output is line-delimited JSON, one [`InstructionRecord`] per line, with a
//! sidecar of rejected candidates and the teacher call log. Everything is
//! driven by one seed, so a rerun with the same seed, data and teacher script
//! reproduces the files byte for byte.

mod data;
mod pipelines;
pub mod teacher;
pub mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dialogue::{Message, Role};
use crate::fintools;
use crate::knowledge::{KnowledgeError, TrainingRetrieval};
use crate::toolcall::scan_commands;

pub use data::{ConsultingInput, DataSources, LabeledSample, SeedOrigin, SeedTask, Sources, Topic};
pub use pipelines::{make_data, quotas, AnalysisCategory, Factory};
pub use teacher::{
    BackendTeacher, CallRecord, ClientError, ReplayTeacher, Teacher, TeacherClient, TeacherError, TeacherParams,
    TEACHER_ADAPTER,
};
pub use templates::{PromptTemplate, Purpose, ShotMode, TemplateGroup, TemplateRegistry};

/// Version written into every record.
pub const SCHEMA_VERSION: u32 = 1;

/// Mock script that plays the teacher (and judge) in offline runs.
pub const TEACHER_MOCK_SCRIPT: &str = include_str!("../../data/teacher_mock.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Consulting,
    Task,
    Computing,
    RetrievalEnhanced,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Consulting,
        Category::Task,
        Category::Computing,
        Category::RetrievalEnhanced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Consulting => "consulting",
            Category::Task => "task",
            Category::Computing => "computing",
            Category::RetrievalEnhanced => "retrieval_enhanced",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = FactoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "consulting" => Ok(Category::Consulting),
            "task" => Ok(Category::Task),
            "computing" => Ok(Category::Computing),
            "retrieval_enhanced" | "retrieval" => Ok(Category::RetrievalEnhanced),
            other => Err(FactoryError::InvalidConfig(format!("unknown category `{other}`"))),
        }
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRecord {
    pub schema_version: u32,
    pub id: String,
    pub category: Category,
    pub messages: Vec<Message>,
    /// Passage or references the conversation is grounded in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// Provenance: `source`, `template_id`, `seed_id`, `analysis_category`,
    /// `generated_at`, `references` and the like.
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("record id is empty")]
    EmptyId,
    #[error("record has no messages")]
    NoMessages,
    #[error("message {0} breaks human/assistant alternation")]
    RoleOrder(usize),
    #[error("conversation must end with an assistant message")]
    UnansweredTurn,
    #[error("message {0} is empty")]
    EmptyMessage(usize),
    #[error("assistant message {0} contains no complete tool command")]
    MissingCommand(usize),
    #[error("record needs a non-empty context")]
    MissingContext,
    #[error("record lacks meta.{0}")]
    MissingMeta(&'static str),
}

/// Schema and category checks every emitted record must pass.
pub fn validate_record(record: &InstructionRecord) -> Result<(), RecordError> {
    if record.schema_version != SCHEMA_VERSION {
        return Err(RecordError::SchemaVersion(record.schema_version));
    }
    if record.id.trim().is_empty() {
        return Err(RecordError::EmptyId);
    }
    if record.messages.is_empty() {
        return Err(RecordError::NoMessages);
    }
    for (i, m) in record.messages.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::Human } else { Role::Assistant };
        if m.role != expected {
            return Err(RecordError::RoleOrder(i));
        }
        if m.text.trim().is_empty() {
            return Err(RecordError::EmptyMessage(i));
        }
    }
    if !record.messages.len().is_multiple_of(2) {
        return Err(RecordError::UnansweredTurn);
    }
    match record.category {
        Category::Computing => {
            for (i, m) in record.messages.iter().enumerate() {
                if m.role == Role::Assistant && crate::toolcall::parse_calls(&m.text).is_empty() {
                    return Err(RecordError::MissingCommand(i));
                }
            }
        }
        Category::RetrievalEnhanced => {
            if record.context.as_deref().is_none_or(|c| c.trim().is_empty()) {
                return Err(RecordError::MissingContext);
            }
            if !record.meta.contains_key("references") {
                return Err(RecordError::MissingMeta("references"));
            }
        }
        Category::Consulting | Category::Task => {}
    }
    if !record.meta.contains_key("template_id") {
        return Err(RecordError::MissingMeta("template_id"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComputingError {
    #[error("answer contains no tool command")]
    NoCommands,
    #[error("tool command at byte {0} is not closed")]
    Unterminated(usize),
    #[error("{tool}({args}) fails on re-execution: {kind}")]
    ToolFailed { tool: String, args: String, kind: String },
    #[error("{tool}({args}) re-executes to `{expected}`, text says `{embedded}`")]
    Mismatch {
        tool: String,
        args: String,
        expected: String,
        embedded: String,
    },
}

/// Re-executes every tool command in `answer` and requires each embedded
/// result to equal the rendered result exactly. Returns the command count.
pub fn validate_computing(answer: &str) -> Result<usize, ComputingError> {
    let spans = scan_commands(answer);
    if spans.is_empty() {
        return Err(ComputingError::NoCommands);
    }
    for span in &spans {
        let Some(embedded) = &span.result else {
            return Err(ComputingError::Unterminated(span.start));
        };
        let tool = span.tool.name().to_string();
        match fintools::execute(span.tool, &span.args) {
            Err(e) => {
                return Err(ComputingError::ToolFailed {
                    tool,
                    args: span.args.clone(),
                    kind: e.kind().to_string(),
                })
            }
            Ok(outcome) if outcome.rendered != *embedded => {
                return Err(ComputingError::Mismatch {
                    tool,
                    args: span.args.clone(),
                    expected: outcome.rendered,
                    embedded: embedded.clone(),
                })
            }
            Ok(_) => {}
        }
    }
    Ok(spans.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MalformedTeacherOutput,
    ValidationFailed,
}

/// A discarded candidate, kept for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub category: Category,
    pub reason: RejectReason,
    pub detail: String,
    /// The teacher output that was rejected.
    pub output: String,
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub records: Vec<InstructionRecord>,
    pub rejects: Vec<Reject>,
}

impl Batch {
    pub fn extend(&mut self, other: Batch) {
        self.records.extend(other.records);
        self.rejects.extend(other.rejects);
    }

    /// Writes records to `out` and rejects to its `.rejects.jsonl` sidecar.
    pub fn write(&self, out: &Path) -> std::io::Result<()> {
        write_jsonl(out, &self.records)?;
        write_jsonl(&sidecar(out, "rejects"), &self.rejects)
    }
}

/// `data.jsonl` -> `data.<kind>.jsonl`
pub fn sidecar(out: &Path, kind: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{kind}.jsonl"))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_records(path: &Path) -> Result<Vec<InstructionRecord>, FactoryError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| FactoryError::Data(e.to_string())))
        .collect()
}

#[derive(Debug, Error)]
pub enum FactoryError {
    #[error("no input to generate from: {0}")]
    EmptyInput(&'static str),
    #[error("teacher budget of {budget} calls exceeded after {} records", completed.records.len())]
    TeacherBudgetExceeded { budget: usize, completed: Box<Batch> },
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error("template `{template}` needs slot `{slot}`")]
    SlotMismatch { template: String, slot: String },
    #[error("few-shot `{task}` needs {needed} samples, found {available}")]
    InsufficientSamplesForFewShot { task: String, needed: usize, available: usize },
    #[error("computing needs at least {needed} seed tasks, found {available}")]
    NotEnoughSeeds { needed: usize, available: usize },
    #[error("seed task `{id}` fails re-execution: {source}")]
    InvalidSeed {
        id: String,
        #[source]
        source: ComputingError,
    },
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("invalid factory config: {0}")]
    InvalidConfig(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

fn default_generated_at() -> String {
    "2024-01-01T00:00:00Z".into()
}

/// Settings for one construction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactoryConfig {
    pub seed: u64,
    /// Timestamp stamped into every record; fixed so output is reproducible.
    #[serde(default = "default_generated_at")]
    pub generated_at: String,
    /// Maximum teacher calls per run.
    pub budget: usize,
    /// Question-type shares for retrieval-enhanced records.
    pub category_mix: BTreeMap<AnalysisCategory, f64>,
    pub retrieval: TrainingRetrieval,
    pub self_chat_turns: usize,
    /// Share of consulting records that are self-chat dialogues.
    pub self_chat_share: f64,
    /// Share of task records that are reading comprehension.
    pub reading_share: f64,
    /// Share of task instructions rendered with few-shot templates.
    pub few_shot_share: f64,
    pub max_chunk_tokens: usize,
    pub sources: DataSources,
}

impl Default for FactoryConfig {
    fn default() -> Self {
        FactoryConfig {
            seed: 42,
            generated_at: default_generated_at(),
            budget: 20_000,
            category_mix: AnalysisCategory::default_mix(),
            retrieval: TrainingRetrieval::default(),
            self_chat_turns: 3,
            self_chat_share: 0.3,
            reading_share: 0.5,
            few_shot_share: 0.5,
            max_chunk_tokens: 128,
            sources: DataSources::default(),
        }
    }
}

impl FactoryConfig {
    pub fn validate(&self) -> Result<(), FactoryError> {
        let bad = |m: String| Err(FactoryError::InvalidConfig(m));
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if self.self_chat_turns == 0 {
            return bad("self_chat_turns must be at least 1".into());
        }
        for (name, v) in [
            ("self_chat_share", self.self_chat_share),
            ("reading_share", self.reading_share),
            ("few_shot_share", self.few_shot_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.max_chunk_tokens == 0 {
            return bad("max_chunk_tokens must be at least 1".into());
        }
        if chrono::DateTime::parse_from_rfc3339(&self.generated_at).is_err() {
            return bad(format!("generated_at `{}` is not an RFC 3339 timestamp", self.generated_at));
        }
        pipelines::validate_mix(&self.category_mix)?;
        self.retrieval.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(category: Category, texts: &[(&str, Role)]) -> InstructionRecord {
        InstructionRecord {
            schema_version: SCHEMA_VERSION,
            id: "r1".into(),
            category,
            messages: texts
                .iter()
                .map(|(t, r)| Message { role: *r, text: t.to_string() })
                .collect(),
            context: None,
            meta: BTreeMap::from([("template_id".to_string(), Value::from("t"))]),
        }
    }

    #[test]
    fn alternation_and_emptiness() {
        use Role::*;
        assert!(validate_record(&record(Category::Consulting, &[("问", Human), ("答", Assistant)])).is_ok());
        assert_eq!(
            validate_record(&record(Category::Consulting, &[("答", Assistant), ("问", Human)])),
            Err(RecordError::RoleOrder(0))
        );
        assert_eq!(
            validate_record(&record(Category::Consulting, &[("问", Human), (" ", Assistant)])),
            Err(RecordError::EmptyMessage(1))
        );
        assert_eq!(
            validate_record(&record(Category::Consulting, &[("问", Human)])),
            Err(RecordError::UnansweredTurn)
        );
        assert_eq!(
            validate_record(&record(Category::Computing, &[("问", Human), ("答案是5", Assistant)])),
            Err(RecordError::MissingCommand(1))
        );
    }

    #[test]
    fn computing_validator_recomputes() {
        assert_eq!(validate_computing("增长为[Calculator(100*1.05)→105]。"), Ok(1));
        assert!(matches!(
            validate_computing("[Calculator(2+2)→5]"),
            Err(ComputingError::Mismatch { expected, .. }) if expected == "4"
        ));
        assert!(matches!(validate_computing("[Calculator(1/0)→0]"), Err(ComputingError::ToolFailed { .. })));
        assert_eq!(validate_computing("没有命令"), Err(ComputingError::NoCommands));
        assert_eq!(validate_computing("[Calculator(1+1)→2"), Err(ComputingError::Unterminated(0)));
        assert_eq!(
            validate_computing("[EquationSolver(x+y=3; x-y=1)→x=2, y=1]和[ProbabilityTable(0)→0.5000]"),
            Ok(2)
        );
    }

    #[test]
    fn config_defaults_validate() {
        FactoryConfig::default().validate().unwrap();
        let cfg: FactoryConfig = toml::from_str("seed = 7\n[category_mix]\nindustry = 1.0").unwrap();
        assert_eq!(cfg.seed, 7);
        cfg.validate().unwrap();
        assert!(toml::from_str::<FactoryConfig>("sede = 7").is_err());
        let bad: FactoryConfig = toml::from_str("[category_mix]\nindustry = 0.5").unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("/tmp/out.jsonl"), "rejects"), Path::new("/tmp/out.rejects.jsonl"));
    }
}
