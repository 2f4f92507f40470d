//! Text metrics: normalized exact match, token-multiset F1 and ROUGE-L.
//!
//! Both overlap metrics share one tokenization: each Han character is a
//! token, and the rest of the text splits on whitespace into words with
//! surrounding punctuation removed.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::knowledge::is_cjk;

/// Trims, unifies full-width forms with their ASCII counterparts and
/// lowercases.
pub fn normalize(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\u{3000}' => ' ',
            '\u{FF01}'..='\u{FF5E}' => char::from_u32(c as u32 - 0xFEE0).unwrap_or(c),
            _ => c,
        })
        .flat_map(char::to_lowercase)
        .collect::<String>()
        .trim()
        .to_string()
}

pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        let w = word.trim_matches(|c: char| !c.is_alphanumeric());
        if !w.is_empty() {
            out.push(w.to_string());
        }
        word.clear();
    };
    for c in normalize(text).chars() {
        if is_cjk(c) {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        } else if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else {
            word.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Fraction of positions where prediction and gold match after [`normalize`].
pub fn score_accuracy<P: AsRef<str>, G: AsRef<str>>(preds: &[P], golds: &[G]) -> Result<f64, EvalError> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalize(p.as_ref()) == normalize(g.as_ref()))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_overlap(overlap: usize, pred_len: usize, gold_len: usize) -> Prf {
        match (pred_len, gold_len) {
            (0, 0) => Prf { precision: 1.0, recall: 1.0, f1: 1.0 },
            (0, _) | (_, 0) => Prf { precision: 0.0, recall: 0.0, f1: 0.0 },
            _ => {
                let precision = overlap as f64 / pred_len as f64;
                let recall = overlap as f64 / gold_len as f64;
                let f1 = if overlap == 0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                Prf { precision, recall, f1 }
            }
        }
    }
}

pub fn score_f1(pred: &str, gold: &str) -> Prf {
    let (p, g) = (tokens(pred), tokens(gold));
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let overlap = p
        .iter()
        .filter(|t| match counts.get_mut(t.as_str()) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        })
        .count();
    Prf::from_overlap(overlap, p.len(), g.len())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L with equal weight on precision and recall.
pub fn score_rouge_l(pred: &str, gold: &str) -> Prf {
    let (p, g) = (tokens(pred), tokens(gold));
    Prf::from_overlap(lcs_len(&p, &g), p.len(), g.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization_splits_han_and_words() {
        assert_eq!(tokens("  ＰＥ 比率为 12.5 倍。"), ["pe", "比", "率", "为", "12.5", "倍"]);
        assert_eq!(tokens("The cat, sat."), ["the", "cat", "sat"]);
        assert!(tokens("。，").is_empty());
    }

    #[test]
    fn accuracy_requires_equal_nonempty_lists() {
        assert_eq!(score_accuracy(&["ａ"], &["a"]).unwrap(), 1.0);
        assert!(matches!(score_accuracy(&["a"], &["a", "b"]), Err(EvalError::LengthMismatch { .. })));
        assert!(score_accuracy::<&str, &str>(&[], &[]).is_err());
    }

    #[test]
    fn rouge_matches_the_worked_example() {
        let r = score_rouge_l("the cat sat", "the cat");
        assert_eq!((r.recall, r.precision), (1.0, 2.0 / 3.0));
        assert!((r.f1 - 0.8).abs() < 1e-12);
    }
}
