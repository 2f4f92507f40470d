//! Linear equation systems: parsing into coefficient form and Gaussian
//! elimination with partial pivoting.

use std::collections::HashMap;

use super::expr::{self, apply_binary, BinOp, Expr};
use super::ToolError;

pub const MAX_VARIABLES: usize = 26;

/// Pivots below this fraction of the largest row norm count as zero.
const PIVOT_TOLERANCE: f64 = 1e-12;

/// A leftover right-hand side above this fraction of the augmented scale
/// means the system is inconsistent.
const CONSISTENCY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    /// Variable names in order of first appearance.
    pub variables: Vec<String>,
    /// One row per equation, `variables.len()` wide.
    pub coefficients: Vec<Vec<f64>>,
    pub constants: Vec<f64>,
}

/// `Σ coeff·var + constant`.
#[derive(Debug, Default, Clone)]
struct LinearForm {
    coeffs: HashMap<String, f64>,
    constant: f64,
}

impl LinearForm {
    fn constant(v: f64) -> Self {
        LinearForm {
            coeffs: HashMap::new(),
            constant: v,
        }
    }

    fn is_constant(&self) -> bool {
        self.coeffs.values().all(|c| *c == 0.0)
    }

    fn scale(mut self, k: f64) -> Self {
        for c in self.coeffs.values_mut() {
            *c *= k;
        }
        self.constant *= k;
        self
    }

    fn add(mut self, other: LinearForm, sign: f64) -> Self {
        for (name, c) in other.coeffs {
            *self.coeffs.entry(name).or_insert(0.0) += sign * c;
        }
        self.constant += sign * other.constant;
        self
    }
}

fn linearize(e: &Expr, order: &mut Vec<String>) -> Result<LinearForm, ToolError> {
    if !e.has_vars() {
        return Ok(LinearForm::constant(e.eval()?));
    }
    match e {
        Expr::Num(v) => Ok(LinearForm::constant(*v)),
        Expr::Var(name) => {
            if !order.contains(name) {
                order.push(name.clone());
            }
            let mut f = LinearForm::default();
            f.coeffs.insert(name.clone(), 1.0);
            Ok(f)
        }
        Expr::Neg(inner) => Ok(linearize(inner, order)?.scale(-1.0)),
        Expr::Percent(inner) => Ok(linearize(inner, order)?.scale(0.01)),
        Expr::Binary(op, l, r) => {
            let lf = linearize(l, order)?;
            let rf = linearize(r, order)?;
            match op {
                BinOp::Add => Ok(lf.add(rf, 1.0)),
                BinOp::Sub => Ok(lf.add(rf, -1.0)),
                BinOp::Mul if lf.is_constant() => Ok(rf.scale(lf.constant)),
                BinOp::Mul if rf.is_constant() => Ok(lf.scale(rf.constant)),
                BinOp::Div if rf.is_constant() => {
                    let k = apply_binary(BinOp::Div, 1.0, rf.constant)?;
                    Ok(lf.scale(k))
                }
                BinOp::Pow if rf.is_constant() && rf.constant == 1.0 => Ok(lf),
                BinOp::Pow if rf.is_constant() && rf.constant == 0.0 => {
                    Ok(LinearForm::constant(1.0))
                }
                _ => Err(ToolError::NonlinearTerm(e.to_string())),
            }
        }
        Expr::Call(..) => Err(ToolError::NonlinearTerm(e.to_string())),
    }
}

/// Parses equations of the form `<linear> = <linear>`.
pub fn parse_system<S: AsRef<str>>(equations: &[S]) -> Result<LinearSystem, ToolError> {
    if equations.is_empty() {
        return Err(ToolError::Parse {
            position: 0,
            message: "no equations".into(),
        });
    }
    let mut order = Vec::new();
    let mut forms = Vec::with_capacity(equations.len());
    for eq in equations {
        let eq = eq.as_ref();
        let (lhs, rhs) = match eq.split_once('=') {
            Some((l, r)) if !r.contains('=') => (l, r),
            _ => {
                return Err(ToolError::Parse {
                    position: 0,
                    message: format!("equation must contain exactly one `=`: `{eq}`"),
                })
            }
        };
        let lf = linearize(&expr::parse_with_vars(lhs)?, &mut order)?;
        let rf = linearize(&expr::parse_with_vars(rhs)?, &mut order)?;
        forms.push(lf.add(rf, -1.0));
    }
    if order.len() > MAX_VARIABLES {
        return Err(ToolError::TooManyVariables(order.len()));
    }
    let coefficients = forms
        .iter()
        .map(|f| order.iter().map(|v| f.coeffs.get(v).copied().unwrap_or(0.0)).collect())
        .collect();
    let constants = forms.iter().map(|f| -f.constant).collect();
    Ok(LinearSystem {
        variables: order,
        coefficients,
        constants,
    })
}

impl LinearSystem {
    /// Largest `|Σ a_ij x_j − b_i| / (1 + |b_i|)` over all equations.
    pub fn max_scaled_residual(&self, x: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .zip(&self.constants)
            .map(|(row, b)| {
                let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
                (lhs - b).abs() / (1.0 + b.abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn solve(&self) -> Result<Vec<(String, f64)>, ToolError> {
        let n = self.variables.len();
        if n == 0 {
            return if self.constants.iter().all(|b| *b == 0.0) {
                Err(ToolError::Underdetermined)
            } else {
                Err(ToolError::Inconsistent)
            };
        }
        let mut x = self.eliminate()?;
        // One round of iterative refinement.
        let residual: Vec<f64> = self
            .coefficients
            .iter()
            .zip(&self.constants)
            .map(|(row, b)| b - row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>())
            .collect();
        let correction = LinearSystem {
            variables: self.variables.clone(),
            coefficients: self.coefficients.clone(),
            constants: residual,
        }
        .eliminate();
        if let Ok(correction) = correction {
            let refined: Vec<f64> = x.iter().zip(&correction).map(|(a, d)| a + d).collect();
            if self.max_scaled_residual(&refined) <= self.max_scaled_residual(&x) {
                x = refined;
            }
        }
        Ok(self.variables.iter().cloned().zip(x).collect())
    }

    fn eliminate(&self) -> Result<Vec<f64>, ToolError> {
        let n = self.variables.len();
        let m = self.coefficients.len();
        let mut a: Vec<Vec<f64>> = self
            .coefficients
            .iter()
            .zip(&self.constants)
            .map(|(row, b)| {
                let mut r = row.clone();
                r.push(*b);
                r
            })
            .collect();

        let row_norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let coeff_scale = a.iter().map(|r| row_norm(&r[..n])).fold(0.0, f64::max);
        let full_scale = a.iter().map(|r| row_norm(r)).fold(0.0, f64::max);
        let pivot_tol = PIVOT_TOLERANCE * coeff_scale;

        let mut pivot_cols = Vec::with_capacity(n);
        let mut rank = 0;
        for col in 0..n {
            if rank == m {
                break;
            }
            let (best, mag) = (rank..m)
                .map(|r| (r, a[r][col].abs()))
                .fold((rank, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            if mag <= pivot_tol {
                continue;
            }
            a.swap(rank, best);
            for r in rank + 1..m {
                let factor = a[r][col] / a[rank][col];
                if factor != 0.0 {
                    for c in col..=n {
                        a[r][c] -= factor * a[rank][c];
                    }
                }
                a[r][col] = 0.0;
            }
            pivot_cols.push(col);
            rank += 1;
        }

        if a[rank..]
            .iter()
            .any(|r| r[n].abs() > CONSISTENCY_TOLERANCE * full_scale.max(f64::MIN_POSITIVE))
        {
            return Err(ToolError::Inconsistent);
        }
        if rank < n {
            return Err(ToolError::Underdetermined);
        }

        let mut x = vec![0.0; n];
        for (r, &col) in pivot_cols.iter().enumerate().rev() {
            let tail: f64 = (col + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[col] = (a[r][n] - tail) / a[r][col];
        }
        Ok(x)
    }
}
