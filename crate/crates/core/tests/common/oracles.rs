//! Independent reference computations used by the integration and acceptance
//! suites. Nothing here calls into the crate's evaluation paths.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;

/// Random expression tree with exact rational semantics.
#[derive(Debug, Clone)]
pub enum RExpr {
    Lit(String),
    Neg(Box<RExpr>),
    Percent(Box<RExpr>),
    Abs(Box<RExpr>),
    Bin(char, Box<RExpr>, Box<RExpr>),
    /// Base raised to a small integer literal.
    Pow(Box<RExpr>, i32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    DivisionByZero,
    Overflow,
}

impl RExpr {
    /// Fully parenthesized source text.
    pub fn render(&self) -> String {
        match self {
            RExpr::Lit(s) => s.clone(),
            RExpr::Neg(e) => format!("(-{})", e.render()),
            RExpr::Percent(e) => format!("({})%", e.render()),
            RExpr::Abs(e) => format!("abs({})", e.render()),
            RExpr::Bin(op, l, r) => format!("({} {op} {})", l.render(), r.render()),
            RExpr::Pow(b, k) => format!("({})^({k})", b.render()),
        }
    }

    pub fn eval(&self) -> Result<BigRational, OracleError> {
        let v = match self {
            RExpr::Lit(s) => parse_decimal(s),
            RExpr::Neg(e) => -e.eval()?,
            RExpr::Percent(e) => e.eval()? / BigRational::from_integer(100.into()),
            RExpr::Abs(e) => e.eval()?.abs(),
            RExpr::Bin(op, l, r) => {
                let (a, b) = (l.eval()?, r.eval()?);
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => {
                        if b.is_zero() {
                            return Err(OracleError::DivisionByZero);
                        }
                        a / b
                    }
                    '%' => {
                        if b.is_zero() {
                            return Err(OracleError::DivisionByZero);
                        }
                        // Truncated remainder: sign follows the dividend.
                        let q = (&a / &b).trunc();
                        a - b * q
                    }
                    _ => unreachable!(),
                }
            }
            RExpr::Pow(base, k) => {
                let b = base.eval()?;
                if b.is_zero() && *k < 0 {
                    return Err(OracleError::DivisionByZero);
                }
                let mut acc = BigRational::from_integer(1.into());
                for _ in 0..k.unsigned_abs() {
                    acc *= &b;
                }
                if *k < 0 {
                    acc.recip()
                } else {
                    acc
                }
            }
        };
        let max = BigRational::from_float(f64::MAX).unwrap();
        if v.abs() > max {
            return Err(OracleError::Overflow);
        }
        Ok(v)
    }
}

pub fn parse_decimal(s: &str) -> BigRational {
    match s.split_once('.') {
        None => BigRational::from_integer(s.parse::<BigInt>().unwrap()),
        Some((int, frac)) => {
            let digits: BigInt = format!("{int}{frac}").parse().unwrap();
            let scale = BigInt::from(10).pow(frac.len() as u32);
            BigRational::new(digits, scale)
        }
    }
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap()
}

fn literal<R: Rng>(rng: &mut R) -> String {
    match rng.random_range(0..4) {
        0 => rng.random_range(0..=1_000_000u32).to_string(),
        1 => rng.random_range(1..=100u32).to_string(),
        2 => format!("{}.{:02}", rng.random_range(0..=999_999u32), rng.random_range(0..100u32)),
        _ => format!("0.{:02}", rng.random_range(1..100u32)),
    }
}

/// Random tree of depth at most `depth`. Literal magnitudes stay ≤ 1e6 and
/// exponents lie in [-4, 4].
pub fn random_expr<R: Rng>(rng: &mut R, depth: u32) -> RExpr {
    if depth <= 1 || rng.random_bool(0.2) {
        return RExpr::Lit(literal(rng));
    }
    match rng.random_range(0..10) {
        0..=3 => {
            let op = ['+', '-', '*', '/'][rng.random_range(0..4)];
            RExpr::Bin(
                op,
                Box::new(random_expr(rng, depth - 1)),
                Box::new(random_expr(rng, depth - 1)),
            )
        }
        4 => RExpr::Neg(Box::new(random_expr(rng, depth - 1))),
        5 => RExpr::Percent(Box::new(random_expr(rng, depth - 1))),
        6 => RExpr::Abs(Box::new(random_expr(rng, depth - 1))),
        7 | 8 => {
            // Shallow bases keep the oracle's big integers small.
            let base = random_expr(rng, depth.min(3) - 1);
            RExpr::Pow(Box::new(base), rng.random_range(-4..=4))
        }
        _ => RExpr::Bin(
            '%',
            Box::new(RExpr::Lit(rng.random_range(0..=1_000_000u32).to_string())),
            Box::new(RExpr::Lit(rng.random_range(0..=1000u32).to_string())),
        ),
    }
}

/// Adaptive Simpson quadrature of the standard normal density: Φ(x) = ½ + ∫₀ˣ φ.
pub fn phi_by_quadrature(x: f64) -> f64 {
    fn density(t: f64) -> f64 {
        (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn adapt(a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (density(lm), density(rm));
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            left + right + (left + right - whole) / 15.0
        } else {
            adapt(a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
                + adapt(m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
        }
    }
    if x == 0.0 {
        return 0.5;
    }
    let (a, b) = (0.0, x);
    let (fa, fb, fm) = (density(a), density(b), density(0.5 * (a + b)));
    let whole = simpson(a, b, fa, fm, fb);
    0.5 + adapt(a, b, fa, fm, fb, whole, 1e-15, 50)
}

/// Square nonsingular integer system `A·x = b` built as `L·U` with unit-lower
/// `L` and nonzero-diagonal `U`, so det(A) ≠ 0 exactly.
pub struct IntSystem {
    pub names: Vec<String>,
    pub a: Vec<Vec<i64>>,
    pub b: Vec<i64>,
}

impl IntSystem {
    pub fn random<R: Rng>(rng: &mut R, n: usize) -> IntSystem {
        let mut l = vec![vec![0i64; n]; n];
        let mut u = vec![vec![0i64; n]; n];
        for i in 0..n {
            l[i][i] = 1;
            for j in 0..i {
                l[i][j] = rng.random_range(-3..=3);
            }
            let d: i64 = rng.random_range(1..=4);
            u[i][i] = if rng.random_bool(0.5) { d } else { -d };
            for j in i + 1..n {
                u[i][j] = rng.random_range(-3..=3);
            }
        }
        let a: Vec<Vec<i64>> = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| l[i][k] * u[k][j]).sum()).collect())
            .collect();
        let x: Vec<i64> = (0..n).map(|_| rng.random_range(-20..=20)).collect();
        let b = a.iter().map(|row| row.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
        let names = (0..n).map(|i| ((b'a' + i as u8) as char).to_string()).collect();
        IntSystem { names, a, b }
    }

    pub fn equations(&self) -> Vec<String> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| {
                let lhs: Vec<String> = row
                    .iter()
                    .zip(&self.names)
                    .map(|(c, v)| format!("({c})*{v}"))
                    .collect();
                format!("{} = {b}", lhs.join(" + "))
            })
            .collect()
    }

    /// Largest `|A x − b| / (1 + |b|)` computed from the integer matrices.
    pub fn max_scaled_residual(&self, solution: &[(String, f64)]) -> f64 {
        let x: Vec<f64> = self
            .names
            .iter()
            .map(|n| solution.iter().find(|(k, _)| k == n).map(|(_, v)| *v).unwrap())
            .collect();
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| {
                let lhs: f64 = row.iter().zip(&x).map(|(c, v)| *c as f64 * v).sum();
                (lhs - *b as f64).abs() / (1.0 + (*b as f64).abs())
            })
            .fold(0.0, f64::max)
    }
}
