//! Benchmark evaluation in four parts: text-task metrics, multiple-choice
//! accuracy, formula and result checks for tool-assisted calculation, and
//! model-judged scoring of retrieval-grounded answers.
//!
//! [`run_benchmark`] answers every item through the same routed turn the
//! chat service uses and produces a deterministic [`EvalReport`].

mod computing;
mod judge;
mod metrics;
mod task;

use std::collections::BTreeMap;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use computing::{formulas_match, score_computing, within, ComputingItem, ComputingScore};
pub use judge::{judge_means, judge_table, parse_verdict, render_reference_list, Judge, JudgeScores, JudgeVerdict};
pub use metrics::{lcs_len, normalize, score_accuracy, score_f1, score_rouge_l, tokens, Prf};
pub use task::{choice_letter, EvalItem, EvalTask, Metric, TaskHeader, TaskKind, DEFAULT_TOLERANCE};

use crate::backend::BackendError;
use crate::router::{ExpertId, Reference};
use crate::turn::{run_turn, TurnContext, TurnError, TurnRequest};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("{preds} predictions against {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("task file line {line}: {message}")]
    TaskFormat { line: usize, message: String },
    #[error("invalid item: {0}")]
    InvalidItem(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("judge reply could not be parsed: {output:?}")]
    JudgeFailure { output: String },
    #[error("judge call failed: {0}")]
    Judge(String),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    /// Demonstrations prepended to multiple-choice prompts.
    pub few_shot_k: usize,
    /// Items answered concurrently.
    pub parallelism: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 7,
            few_shot_k: 5,
            parallelism: 4,
        }
    }
}

/// First choice letter in `reply` that stands on its own, that is, is not
/// part of a longer Latin word or number.
pub fn extract_choice(reply: &str, n_choices: usize) -> Option<char> {
    let chars: Vec<char> = reply
        .chars()
        .map(|c| match c {
            '\u{FF01}'..='\u{FF5E}' => char::from_u32(c as u32 - 0xFEE0).unwrap_or(c),
            _ => c,
        })
        .collect();
    let last = choice_letter(n_choices.clamp(1, 26) - 1);
    let joined = |c: Option<&char>| c.is_some_and(|c| c.is_ascii_alphanumeric());
    (0..chars.len()).find_map(|i| {
        let c = chars[i];
        let standalone = !joined(i.checked_sub(1).and_then(|j| chars.get(j))) && !joined(chars.get(i + 1));
        (('A'..=last).contains(&c) && standalone).then_some(c)
    })
}

fn render_choice_block(item: &EvalItem) -> String {
    let mut out = format!("题目：{}\n", item.input);
    for (i, c) in item.choices.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", choice_letter(i), c));
    }
    out.push_str("答案：");
    out
}

/// The message sent for one item.
pub fn item_prompt(task: &EvalTask, item: &EvalItem, few_shot_k: usize) -> String {
    match task.kind {
        TaskKind::MultipleChoice => {
            let mut out = String::from("以下是金融领域的单项选择题，请直接给出正确答案的选项字母。\n\n");
            for demo in task.demonstrations.iter().take(few_shot_k) {
                out.push_str(&render_choice_block(demo));
                out.push(demo.gold_letter().unwrap_or('A'));
                out.push_str("\n\n");
            }
            out.push_str(&render_choice_block(item));
            out
        }
        _ => item.input.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub expert: Option<ExpertId>,
    pub prediction: String,
    pub gold: String,
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub backend: String,
    pub seed: u64,
    pub few_shot_k: usize,
    pub parallelism: usize,
    pub max_calls: usize,
    pub max_tokens: usize,
    pub top_k: usize,
    pub threshold: f64,
    pub expert: Option<ExpertId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub kind: TaskKind,
    pub metric: Metric,
    pub rows: Vec<EvalRow>,
    /// Mean of each per-row score, plus failure counts.
    pub aggregate: BTreeMap<String, f64>,
    pub config: ConfigSnapshot,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// The four judge means, when this is a judge-scored report with at
    /// least one parsed verdict.
    pub fn judge_means(&self) -> Option<JudgeScores> {
        let get = |k: &str| self.aggregate.get(k).copied();
        Some(JudgeScores {
            accuracy: get("accuracy")?,
            usefulness: get("usefulness")?,
            linguistic: get("linguistic")?,
            reflectiveness: get("reflectiveness")?,
        })
    }
}

fn score_row(task: &EvalTask, item: &EvalItem, prediction: &str) -> BTreeMap<String, f64> {
    let mut scores = BTreeMap::new();
    match task.kind {
        TaskKind::MultipleChoice => {
            let hit = extract_choice(prediction, item.choices.len()) == item.gold_letter();
            scores.insert("accuracy".into(), f64::from(u8::from(hit)));
        }
        TaskKind::Classification | TaskKind::Extraction | TaskKind::Summarization => {
            let v = match task.metric {
                Metric::F1 => score_f1(prediction, &item.gold).f1,
                Metric::Rouge => score_rouge_l(prediction, &item.gold).f1,
                _ => f64::from(u8::from(normalize(prediction) == normalize(&item.gold))),
            };
            let name = match task.metric {
                Metric::F1 => "f1",
                Metric::Rouge => "rouge_l",
                _ => "accuracy",
            };
            scores.insert(name.into(), v);
        }
        TaskKind::Computing | TaskKind::JudgeScored => {}
    }
    scores
}

fn gold_text(task: &EvalTask, item: &EvalItem) -> String {
    match task.kind {
        TaskKind::MultipleChoice => item.gold_letter().map(String::from).unwrap_or_default(),
        TaskKind::Computing => format!(
            "{} = {}",
            item.gold_formula.as_deref().unwrap_or(""),
            item.gold_result.unwrap_or(f64::NAN)
        ),
        _ => item.gold.clone(),
    }
}

type ItemResult = Result<(EvalRow, Option<JudgeScores>), EvalError>;

async fn answer_item(
    task: &EvalTask,
    ctx: &TurnContext<'_>,
    judge: Option<&Judge<'_>>,
    config: &EvalConfig,
    index: usize,
    item: &EvalItem,
) -> ItemResult {
    let req = TurnRequest {
        message: item_prompt(task, item, config.few_shot_k),
        expert: task.expert,
        history: Vec::new(),
        seed: config.seed.wrapping_add(index as u64),
        session_id: None,
    };
    let turn = run_turn(ctx, &req, &mut |_| {}).await;
    let mut row = EvalRow {
        index,
        id: item.id.clone(),
        expert: None,
        prediction: String::new(),
        gold: gold_text(task, item),
        scores: BTreeMap::new(),
        error: None,
    };
    let outcome = match turn {
        Ok(o) => o,
        Err(TurnError::Backend {
            error: BackendError::Unavailable(m),
            ..
        }) => return Err(EvalError::BackendUnavailable(m)),
        Err(e) => {
            row.error = Some(format!("{}: {e}", e.kind()));
            return Ok((row, None));
        }
    };
    row.expert = Some(outcome.metadata.expert);
    row.prediction = outcome.transcript.trim().to_string();
    row.scores = score_row(task, item, &row.prediction);
    let mut verdict = None;
    match task.kind {
        TaskKind::Computing => {
            let gold = item.computing().expect("validated computing item");
            let s = score_computing(&outcome.transcript, &outcome.splices, &gold);
            row.scores.insert("formula".into(), f64::from(u8::from(s.formula_correct)));
            row.scores
                .insert("formula_and_result".into(), f64::from(u8::from(s.result_correct)));
        }
        TaskKind::JudgeScored => {
            let refs: Vec<Reference> = if item.references.is_empty() {
                outcome
                    .references
                    .iter()
                    .map(|r| Reference {
                        title: r.title.clone(),
                        text: r.chunk.text.clone(),
                    })
                    .collect()
            } else {
                item.references.clone()
            };
            let judge = judge.expect("checked above");
            let seed = config.seed.wrapping_add(index as u64);
            match judge.score(&item.input, &refs, &row.prediction, seed).await {
                Ok(v) => {
                    for (name, value) in JudgeScores::NAMES.iter().zip(v.scores.values()) {
                        row.scores.insert((*name).into(), value);
                    }
                    verdict = Some(v.scores);
                }
                Err(e @ EvalError::JudgeFailure { .. }) => row.error = Some(format!("judge_failure: {e}")),
                Err(e) => return Err(e),
            }
        }
        _ => {}
    }
    Ok((row, verdict))
}

/// Answers every item of `task` through routed turns and scores the answers.
/// Judge-scored tasks need a `judge`.
pub async fn run_benchmark(
    task: &EvalTask,
    ctx: &TurnContext<'_>,
    judge: Option<&Judge<'_>>,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if config.parallelism == 0 {
        return Err(EvalError::InvalidConfig("parallelism must be at least 1".into()));
    }
    if task.kind == TaskKind::JudgeScored && judge.is_none() {
        return Err(EvalError::InvalidConfig("judge-scored tasks need a judge".into()));
    }
    ctx.backend
        .health()
        .await
        .map_err(|e| EvalError::BackendUnavailable(e.to_string()))?;

    let results: Vec<ItemResult> = stream::iter(task.items.iter().enumerate())
        .map(|(i, item)| answer_item(task, ctx, judge, config, i, item))
        .buffered(config.parallelism)
        .collect()
        .await;
    let mut rows = Vec::with_capacity(results.len());
    let mut verdicts = Vec::new();
    for r in results {
        let (row, verdict) = r?;
        rows.push(row);
        verdicts.extend(verdict);
    }

    let mut aggregate = BTreeMap::new();
    let n = rows.len() as f64;
    let metric_names: &[&str] = match task.kind {
        TaskKind::Computing => &["formula", "formula_and_result"],
        TaskKind::JudgeScored => &[],
        TaskKind::MultipleChoice => &["accuracy"],
        _ => match task.metric {
            Metric::F1 => &["f1"],
            Metric::Rouge => &["rouge_l"],
            _ => &["accuracy"],
        },
    };
    for name in metric_names {
        let total: f64 = rows.iter().filter_map(|r| r.scores.get(*name)).sum();
        aggregate.insert((*name).to_string(), total / n);
    }
    if let Some(means) = judge_means(&verdicts) {
        for (name, value) in JudgeScores::NAMES.iter().zip(means.values()) {
            aggregate.insert((*name).to_string(), value);
        }
    }
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    aggregate.insert("failures".into(), failures as f64);

    Ok(EvalReport {
        task_id: task.id.clone(),
        kind: task.kind,
        metric: task.metric,
        rows,
        aggregate,
        config: ConfigSnapshot {
            backend: ctx.backend.name().to_string(),
            seed: config.seed,
            few_shot_k: config.few_shot_k,
            parallelism: config.parallelism,
            max_calls: ctx.limits.max_calls,
            max_tokens: ctx.limits.max_tokens,
            top_k: ctx.retrieval.top_k,
            threshold: ctx.retrieval.threshold,
            expert: task.expert,
        },
    })
}
