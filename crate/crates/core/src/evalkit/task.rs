//! Benchmark task files.
//!
//! A task file is line-delimited JSON. The first line is a [`TaskHeader`];
//! every following non-blank line is one [`EvalItem`]. Which item fields are
//! required depends on the task kind:
//!
//! | kind              | fields                                   |
//! |-------------------|------------------------------------------|
//! | `classification`  | `input`, `gold`                          |
//! | `extraction`      | `input`, `gold`                          |
//! | `summarization`   | `input`, `gold`                          |
//! | `multiple_choice` | `input`, `choices`, `gold` (letter or choice text) |
//! | `computing`       | `input`, `gold_formula`, `gold_result`, optional `tolerance` |
//! | `judge_scored`    | `input`, optional `references`           |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComputingItem, EvalError};
use crate::router::{ExpertId, Reference};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Extraction,
    Summarization,
    MultipleChoice,
    Computing,
    JudgeScored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1,
    Rouge,
    FormulaAcc,
    JudgeScores,
}

impl TaskKind {
    pub fn default_metric(self) -> Metric {
        match self {
            TaskKind::Classification | TaskKind::MultipleChoice => Metric::Accuracy,
            TaskKind::Extraction => Metric::F1,
            TaskKind::Summarization => Metric::Rouge,
            TaskKind::Computing => Metric::FormulaAcc,
            TaskKind::JudgeScored => Metric::JudgeScores,
        }
    }

    fn allows(self, metric: Metric) -> bool {
        match self {
            TaskKind::Classification | TaskKind::Extraction | TaskKind::Summarization => {
                matches!(metric, Metric::Accuracy | Metric::F1 | Metric::Rouge)
            }
            _ => metric == self.default_metric(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskHeader {
    pub id: String,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    /// Sends every item to this expert instead of routing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert: Option<ExpertId>,
    /// Worked examples prepended to multiple-choice prompts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demonstrations: Vec<EvalItem>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalItem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub input: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub gold: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_formula: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_result: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<Reference>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalTask {
    pub id: String,
    pub kind: TaskKind,
    pub metric: Metric,
    pub expert: Option<ExpertId>,
    pub demonstrations: Vec<EvalItem>,
    pub items: Vec<EvalItem>,
}

/// Choice label for position `i`: A, B, C, ...
pub fn choice_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

impl EvalItem {
    /// The gold choice as a letter, accepting either the letter or the
    /// choice text.
    pub fn gold_letter(&self) -> Option<char> {
        let g = self.gold.trim();
        let mut chars = g.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            let c = c.to_ascii_uppercase();
            if c.is_ascii_uppercase() && ((c as u8 - b'A') as usize) < self.choices.len() {
                return Some(c);
            }
        }
        self.choices.iter().position(|c| c.trim() == g).map(choice_letter)
    }

    pub fn computing(&self) -> Option<ComputingItem> {
        Some(ComputingItem {
            question: self.input.clone(),
            gold_formula: self.gold_formula.clone()?,
            gold_result: self.gold_result?,
            tolerance: self.tolerance.unwrap_or(DEFAULT_TOLERANCE),
        })
    }

    fn check(&self, kind: TaskKind) -> Result<(), String> {
        if self.input.trim().is_empty() {
            return Err("empty input".into());
        }
        match kind {
            TaskKind::Classification | TaskKind::Extraction | TaskKind::Summarization => {
                if self.gold.trim().is_empty() {
                    return Err("missing gold".into());
                }
            }
            TaskKind::MultipleChoice => {
                if self.choices.len() < 2 || self.choices.len() > 26 {
                    return Err(format!("{} choices; expected 2 to 26", self.choices.len()));
                }
                if self.gold_letter().is_none() {
                    return Err(format!("gold `{}` is not one of the choices", self.gold));
                }
            }
            TaskKind::Computing => {
                let item = self
                    .computing()
                    .ok_or("computing items need gold_formula and gold_result")?;
                item.validate().map_err(|e| e.to_string())?;
            }
            TaskKind::JudgeScored => {}
        }
        Ok(())
    }
}

fn format_error(line: usize, message: impl Into<String>) -> EvalError {
    EvalError::TaskFormat {
        line,
        message: message.into(),
    }
}

impl EvalTask {
    pub fn parse(text: &str) -> Result<EvalTask, EvalError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let (header_line, header) = lines.next().ok_or_else(|| format_error(0, "empty task file"))?;
        let header: TaskHeader =
            serde_json::from_str(header).map_err(|e| format_error(header_line, format!("header: {e}")))?;
        let metric = header.metric.unwrap_or(header.kind.default_metric());
        if !header.kind.allows(metric) {
            return Err(format_error(
                header_line,
                format!("metric {metric:?} does not apply to {:?} tasks", header.kind),
            ));
        }
        for (i, demo) in header.demonstrations.iter().enumerate() {
            demo.check(header.kind)
                .map_err(|m| format_error(header_line, format!("demonstration {}: {m}", i + 1)))?;
        }
        let mut items = Vec::new();
        for (n, line) in lines {
            let item: EvalItem = serde_json::from_str(line).map_err(|e| format_error(n, e.to_string()))?;
            item.check(header.kind).map_err(|m| format_error(n, m))?;
            items.push(item);
        }
        if items.is_empty() {
            return Err(format_error(header_line, "task has no items"));
        }
        Ok(EvalTask {
            id: header.id,
            kind: header.kind,
            metric,
            expert: header.expert,
            demonstrations: header.demonstrations,
            items,
        })
    }

    pub fn load(path: &Path) -> Result<EvalTask, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        EvalTask::parse(&text)
    }

    /// Serializes back to the task file format.
    pub fn to_jsonl(&self) -> String {
        let header = TaskHeader {
            id: self.id.clone(),
            kind: self.kind,
            metric: Some(self.metric),
            expert: self.expert,
            demonstrations: self.demonstrations.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        for item in &self.items {
            out.push('\n');
            out.push_str(&serde_json::to_string(item).expect("item serializes"));
        }
        out.push('\n');
        out
    }
}
