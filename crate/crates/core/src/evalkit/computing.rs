//! Scoring of tool-assisted calculations: was the right formula written, and
//! does the result shown in the answer agree with the gold value.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::fintools::{expr, ToolKind};
use crate::toolcall::{parse_calls, SpliceEvent};

/// Relative tolerance for numeric leaves when comparing folded formulas.
const FORMULA_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputingItem {
    pub question: String,
    pub gold_formula: String,
    pub gold_result: f64,
    /// Relative tolerance on the result.
    pub tolerance: f64,
}

pub fn within(value: f64, gold: f64, tolerance: f64) -> bool {
    (value - gold).abs() <= tolerance * (1.0 + gold.abs())
}

impl ComputingItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |why: String| EvalError::InvalidItem(format!("computing item `{}`: {why}", self.question));
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(bad(format!("tolerance {} is not a non-negative number", self.tolerance)));
        }
        let value = expr::parse(&self.gold_formula)
            .and_then(|e| e.eval())
            .map_err(|e| bad(format!("gold formula does not evaluate: {e}")))?;
        if !within(value, self.gold_result, self.tolerance) {
            return Err(bad(format!(
                "gold formula evaluates to {value}, not {}",
                self.gold_result
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputingScore {
    pub formula_correct: bool,
    pub result_correct: bool,
}

/// True when both expressions parse and agree after constant folding.
pub fn formulas_match(candidate: &str, gold: &str) -> bool {
    match (expr::parse(candidate), expr::parse(gold)) {
        (Ok(c), Ok(g)) => c.fold_constants().approx_eq(&g.fold_constants(), FORMULA_REL_TOL),
        _ => false,
    }
}

/// Scores the calculator commands in `transcript`. When `events` is
/// non-empty, only commands that were actually executed count; the result
/// is always read from the transcript, which is what the reader sees.
pub fn score_computing(transcript: &str, events: &[SpliceEvent], item: &ComputingItem) -> ComputingScore {
    let executed = |args: &str| {
        events.is_empty()
            || events
                .iter()
                .any(|e| e.command.tool == ToolKind::Calculator && e.command.args == args)
    };
    let mut score = ComputingScore::default();
    for call in parse_calls(transcript) {
        if call.tool != ToolKind::Calculator || !executed(&call.args) {
            continue;
        }
        if !formulas_match(&call.args, &item.gold_formula) {
            continue;
        }
        score.formula_correct = true;
        if let Ok(v) = call.result.trim().parse::<f64>() {
            if within(v, item.gold_result, item.tolerance) {
                score.result_correct = true;
            }
        }
    }
    score
}
