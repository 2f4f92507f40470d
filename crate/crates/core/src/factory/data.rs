//! Input data for the pipelines, bundled or loaded from files.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{validate_computing, FactoryError};
use crate::knowledge::{parse_corpus, Document, KnowledgeError};

const TERMS: &str = include_str!("../../data/terms.txt");
const TOPICS: &str = include_str!("../../data/topics.jsonl");
const TASK_SAMPLES: &str = include_str!("../../data/task_samples.jsonl");
const SEEDS: &str = include_str!("../../data/seeds.jsonl");
const KB_FIXTURE: &str = include_str!("../../data/kb_fixture.jsonl");

/// A financial term to explain, or a question to answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsultingInput {
    Term(String),
    Question(String),
}

impl ConsultingInput {
    /// Lines ending in a question mark are questions; everything else is a term.
    pub fn parse(line: &str) -> Option<Self> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        Some(if line.ends_with('？') || line.ends_with('?') {
            ConsultingInput::Question(line.to_string())
        } else {
            ConsultingInput::Term(line.to_string())
        })
    }

    pub fn text(&self) -> &str {
        match self {
            ConsultingInput::Term(t) | ConsultingInput::Question(t) => t,
        }
    }
}

/// A forum topic that seeds a self-chat dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topic {
    pub id: String,
    pub topic: String,
    pub context: String,
}

/// A labeled example for a non-generative task. Fields other than `id` and
/// `task` (for instance `text` and `label`) fill template slots by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub task: String,
    #[serde(flatten)]
    pub fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeedOrigin {
    FinanceExam,
    ReportContext,
    GeneralMath,
}

/// A hand-written computing problem whose answer embeds tool commands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedTask {
    pub id: String,
    pub question: String,
    pub answer_with_commands: String,
    pub origin: SeedOrigin,
}

impl SeedTask {
    pub fn validate(&self) -> Result<(), FactoryError> {
        validate_computing(&self.answer_with_commands)
            .map(|_| ())
            .map_err(|source| FactoryError::InvalidSeed { id: self.id.clone(), source })
    }
}

/// Optional file overrides for the bundled inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSources {
    pub terms: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    pub task_samples: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    /// Corpus for reading comprehension and retrieval-enhanced records.
    pub kb_corpus: Option<PathBuf>,
}

/// Parsed pipeline inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Sources {
    pub terms: Vec<ConsultingInput>,
    pub topics: Vec<Topic>,
    pub task_samples: Vec<LabeledSample>,
    pub seeds: Vec<SeedTask>,
    pub kb: Vec<Document>,
}

fn jsonl<T: for<'de> Deserialize<'de>>(what: &str, text: &str) -> Result<Vec<T>, FactoryError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| FactoryError::Data(format!("{what} line {}: {e}", i + 1)))
        })
        .collect()
}

fn read(path: &Option<PathBuf>, bundled: &'static str) -> Result<String, FactoryError> {
    match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| FactoryError::Data(format!("{}: {e}", p.display()))),
        None => Ok(bundled.to_string()),
    }
}

impl Sources {
    pub fn bundled() -> Self {
        Self::load(&DataSources::default()).expect("bundled data is valid")
    }

    pub fn load(paths: &DataSources) -> Result<Self, FactoryError> {
        let terms = read(&paths.terms, TERMS)?
            .lines()
            .filter_map(ConsultingInput::parse)
            .collect();
        let topics = jsonl("topics", &read(&paths.topics, TOPICS)?)?;
        let task_samples = jsonl("task samples", &read(&paths.task_samples, TASK_SAMPLES)?)?;
        let seeds: Vec<SeedTask> = jsonl("seeds", &read(&paths.seeds, SEEDS)?)?;
        for seed in &seeds {
            seed.validate()?;
        }
        let kb = match parse_corpus(&read(&paths.kb_corpus, KB_FIXTURE)?) {
            Ok(corpus) => corpus.documents,
            Err(KnowledgeError::EmptyCorpus) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Sources {
            terms,
            topics,
            task_samples,
            seeds,
            kb,
        })
    }

    /// The bundled fixture corpus, for demos and tests.
    pub fn fixture_corpus() -> &'static str {
        KB_FIXTURE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_data_parses_and_seeds_reexecute() {
        let s = Sources::bundled();
        assert!(s.terms.iter().any(|t| matches!(t, ConsultingInput::Question(_))));
        assert!(s.terms.contains(&ConsultingInput::Term("杠杆收购".into())));
        assert!(s.topics.len() >= 10);
        assert!(s.seeds.len() >= 10);
        assert!(s.kb.len() >= 20);
        assert!(s.task_samples.iter().all(|t| t.fields.contains_key("text") && t.fields.contains_key("label")));
    }

    #[test]
    fn questions_are_recognized_by_their_mark() {
        assert_eq!(ConsultingInput::parse("什么是久期？"), Some(ConsultingInput::Question("什么是久期？".into())));
        assert_eq!(ConsultingInput::parse(" 久期 "), Some(ConsultingInput::Term("久期".into())));
        assert_eq!(ConsultingInput::parse("# note"), None);
    }
}
