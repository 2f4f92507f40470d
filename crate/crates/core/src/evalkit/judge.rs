//! Model-judged scoring of open-ended answers on four criteria.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::factory::{PromptTemplate, TeacherClient, TeacherParams};
use crate::router::Reference;

pub const JUDGE_MIN: f64 = 1.0;
pub const JUDGE_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub accuracy: f64,
    pub usefulness: f64,
    pub linguistic: f64,
    pub reflectiveness: f64,
}

impl JudgeScores {
    pub const NAMES: [&'static str; 4] = ["accuracy", "usefulness", "linguistic", "reflectiveness"];

    pub fn values(&self) -> [f64; 4] {
        [self.accuracy, self.usefulness, self.linguistic, self.reflectiveness]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub scores: JudgeScores,
    pub rationale: String,
}

fn score_patterns() -> &'static [Regex; 4] {
    static PATTERNS: OnceLock<[Regex; 4]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        JudgeScores::NAMES.map(|name| {
            let name = if name == "linguistic" { "linguistic(?:[ _]quality)?" } else { name };
            Regex::new(&format!(r"(?i)\b{name}\s*[:：=]\s*([0-9]+(?:\.[0-9]+)?)")).expect("valid pattern")
        })
    })
}

/// Reads the four scores from a judge reply. Every score must be present and
/// lie in the 1 to 5 range.
pub fn parse_verdict(reply: &str) -> Option<JudgeVerdict> {
    let mut values = [0.0; 4];
    let mut last_end = 0;
    for (slot, re) in values.iter_mut().zip(score_patterns()) {
        let caps = re.captures(reply)?;
        let v: f64 = caps[1].parse().ok()?;
        if !(JUDGE_MIN..=JUDGE_MAX).contains(&v) {
            return None;
        }
        *slot = v;
        last_end = last_end.max(caps.get(0).map_or(0, |m| m.end()));
    }
    let rest = &reply[last_end..];
    let rationale = rest.split_once('\n').map_or("", |(_, r)| r).trim().to_string();
    let [accuracy, usefulness, linguistic, reflectiveness] = values;
    Some(JudgeVerdict {
        scores: JudgeScores {
            accuracy,
            usefulness,
            linguistic,
            reflectiveness,
        },
        rationale,
    })
}

pub fn render_reference_list(refs: &[Reference]) -> String {
    if refs.is_empty() {
        return "（无）".into();
    }
    refs.iter()
        .enumerate()
        .map(|(i, r)| format!("[{}] {}\n{}", i + 1, r.title, r.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A judge model behind a teacher client, prompted with a rubric template.
pub struct Judge<'a> {
    client: &'a TeacherClient,
    template: &'a PromptTemplate,
}

impl<'a> Judge<'a> {
    pub fn new(client: &'a TeacherClient, template: &'a PromptTemplate) -> Self {
        Judge { client, template }
    }

    /// Asks for a verdict, retrying once with a different seed when the
    /// reply cannot be parsed.
    pub async fn score(
        &self,
        question: &str,
        references: &[Reference],
        answer: &str,
        seed: u64,
    ) -> Result<JudgeVerdict, EvalError> {
        let values = BTreeMap::from([
            ("question", question.to_string()),
            ("references", render_reference_list(references)),
            ("answer", answer.to_string()),
        ]);
        let prompt = self
            .template
            .render(&values)
            .map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
        let mut last = String::new();
        for attempt in 0..2u64 {
            let params = TeacherParams::seeded(seed.wrapping_add(attempt));
            last = self
                .client
                .complete(&prompt, &params)
                .await
                .map_err(|e| EvalError::Judge(e.to_string()))?;
            if let Some(v) = parse_verdict(&last) {
                return Ok(v);
            }
        }
        Err(EvalError::JudgeFailure { output: last })
    }
}

/// Per-criterion means over the parsed verdicts, in rubric order.
pub fn judge_means(verdicts: &[JudgeScores]) -> Option<JudgeScores> {
    if verdicts.is_empty() {
        return None;
    }
    let n = verdicts.len() as f64;
    let sum = |f: fn(&JudgeScores) -> f64| verdicts.iter().map(f).sum::<f64>() / n;
    Some(JudgeScores {
        accuracy: sum(|s| s.accuracy),
        usefulness: sum(|s| s.usefulness),
        linguistic: sum(|s| s.linguistic),
        reflectiveness: sum(|s| s.reflectiveness),
    })
}

/// A Markdown table with one row per labeled set of means.
pub fn judge_table(rows: &[(&str, JudgeScores)]) -> String {
    let mut out = String::from("| Model | Accuracy | Usefulness | Linguistic | Reflectiveness |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (label, s) in rows {
        let _ = writeln!(
            out,
            "| {label} | {:.2} | {:.2} | {:.2} | {:.2} |",
            s.accuracy, s.usefulness, s.linguistic, s.reflectiveness
        );
    }
    out
}
