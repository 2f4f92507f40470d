//! The four calculation tools: expression calculator, linear equation solver,
//! sample counter and standard normal probability table.
//!
//! Every tool is a pure function from its textual argument to a [`ToolOutcome`].
//! The `rendered` form is what gets spliced back into generated text.

pub mod expr;
mod linear;
mod normal;
mod render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use linear::{parse_system, LinearSystem, MAX_VARIABLES};
pub use normal::standard_normal_cdf;
pub use render::{render_number, render_probability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MathError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("result is not a finite number")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("parse error at {position}: {message}")]
    Parse { position: usize, message: String },
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("nonlinear term: {0}")]
    NonlinearTerm(String),
    #[error("the equation system has no solution")]
    Inconsistent,
    #[error("the equation system has infinitely many solutions")]
    Underdetermined,
    #[error("too many variables ({0}, at most {MAX_VARIABLES})")]
    TooManyVariables(usize),
}

impl ToolError {
    /// Short error kind, as spliced into transcripts (`ERROR: <kind>]`).
    pub fn kind(&self) -> &'static str {
        match self {
            ToolError::Parse { .. } => "ParseError",
            ToolError::Math(_) => "MathError",
            ToolError::NonlinearTerm(_) => "NonlinearTerm",
            ToolError::Inconsistent => "Inconsistent",
            ToolError::Underdetermined => "Underdetermined",
            ToolError::TooManyVariables(_) => "TooManyVariables",
        }
    }
}

/// The tools a model may call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToolKind {
    Calculator,
    EquationSolver,
    Counter,
    ProbabilityTable,
}

impl ToolKind {
    pub const ALL: [ToolKind; 4] = [
        ToolKind::Calculator,
        ToolKind::EquationSolver,
        ToolKind::Counter,
        ToolKind::ProbabilityTable,
    ];

    /// Command name as it appears in `[Name(args)→result]`.
    pub fn name(self) -> &'static str {
        match self {
            ToolKind::Calculator => "Calculator",
            ToolKind::EquationSolver => "EquationSolver",
            ToolKind::Counter => "Counter",
            ToolKind::ProbabilityTable => "ProbabilityTable",
        }
    }

    pub fn from_command_name(name: &str) -> Option<ToolKind> {
        ToolKind::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToolKind {
    type Err = String;

    /// Accepts the command name in any case, plus kebab/snake spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .flat_map(char::to_lowercase)
            .collect();
        ToolKind::ALL
            .into_iter()
            .find(|t| t.name().to_lowercase() == folded)
            .ok_or_else(|| format!("unknown tool `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum OutcomeValue {
    Number(f64),
    /// Variable assignments in order of first appearance.
    Solution(Vec<(String, f64)>),
    Count(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolOutcome {
    pub value: OutcomeValue,
    pub rendered: String,
}

pub fn eval_expression(src: &str) -> Result<ToolOutcome, ToolError> {
    let v = expr::parse(src)?.eval()?;
    Ok(ToolOutcome {
        value: OutcomeValue::Number(v),
        rendered: render_number(v),
    })
}

/// Solves a system given as equations separated by `;`, `,` or newlines.
pub fn solve_equations(src: &str) -> Result<ToolOutcome, ToolError> {
    let equations: Vec<&str> = src
        .split([';', ',', '\n', '；', '，'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    solve_linear_system(&equations)
}

pub fn solve_linear_system<S: AsRef<str>>(equations: &[S]) -> Result<ToolOutcome, ToolError> {
    let system = parse_system(equations)?;
    let solution = system.solve()?;
    let rendered = solution
        .iter()
        .map(|(name, v)| format!("{name}={}", render_number(*v)))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(ToolOutcome {
        value: OutcomeValue::Solution(solution),
        rendered,
    })
}

/// Parses `[3, 1, 4]`, `3,1,4` or whitespace-separated numbers.
pub fn parse_samples(src: &str) -> Result<Vec<f64>, ToolError> {
    let trimmed = src.trim();
    let inner = trimmed
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .or_else(|| trimmed.strip_prefix('［').and_then(|s| s.strip_suffix('］')))
        .unwrap_or(trimmed);
    let mut out = Vec::new();
    let mut offset = 0;
    for piece in inner.split(|c: char| c == ',' || c == '，' || c == '、' || c.is_whitespace()) {
        let item = piece.trim();
        if !item.is_empty() {
            let v: f64 = item.parse().map_err(|_| ToolError::Parse {
                position: offset,
                message: format!("not a number: `{item}`"),
            })?;
            if !v.is_finite() {
                return Err(ToolError::Parse {
                    position: offset,
                    message: format!("sample must be finite: `{item}`"),
                });
            }
            out.push(v);
        }
        offset += piece.chars().count() + 1;
    }
    Ok(out)
}

pub fn count_samples(src: &str) -> Result<ToolOutcome, ToolError> {
    let n = parse_samples(src)?.len() as u64;
    Ok(ToolOutcome {
        value: OutcomeValue::Count(n),
        rendered: n.to_string(),
    })
}

pub fn normal_cdf(src: &str) -> Result<ToolOutcome, ToolError> {
    let s = src.trim().replace('−', "-");
    let x: f64 = s.parse().map_err(|_| ToolError::Parse {
        position: 0,
        message: format!("not a number: `{s}`"),
    })?;
    if !x.is_finite() {
        return Err(ToolError::Parse {
            position: 0,
            message: "input must be finite".into(),
        });
    }
    let p = standard_normal_cdf(x);
    Ok(ToolOutcome {
        value: OutcomeValue::Number(p),
        rendered: render_probability(p),
    })
}

/// Dispatches to the named tool.
pub fn execute(tool: ToolKind, input: &str) -> Result<ToolOutcome, ToolError> {
    match tool {
        ToolKind::Calculator => eval_expression(input),
        ToolKind::EquationSolver => solve_equations(input),
        ToolKind::Counter => count_samples(input),
        ToolKind::ProbabilityTable => normal_cdf(input),
    }
}
