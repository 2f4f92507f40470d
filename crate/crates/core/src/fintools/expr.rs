//! Arithmetic expression grammar used by the calculator and the equation solver.
//!
//! Precedence, loosest first:
//!
//! ```text
//! sum      := product (('+' | '-') product)*
//! product  := unary (('*' | '/' | '%') unary)*
//! unary    := '-' unary | '+' unary | power
//! power    := postfix ('^' unary)?          right-associative
//! postfix  := primary '%'*                  percent, when no operand follows
//! primary  := number | ident | func '(' sum ')' | '(' sum ')'
//! ```
//!
//! Unary minus sits below `^`, so `-2^2` is `-(2^2)`. A `%` followed by an
//! operand start (number, identifier, `(`) is modulo; otherwise it is percent.

use std::fmt;

use super::{MathError, ToolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Mod,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
            BinOp::Mod => '%',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Abs,
    Ln,
    Exp,
    Log10,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Ln => "ln",
            Func::Exp => "exp",
            Func::Log10 => "log10",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            "ln" => Some(Func::Ln),
            "exp" => Some(Func::Exp),
            "log10" => Some(Func::Log10),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> Result<f64, MathError> {
        match self {
            Func::Sqrt if x < 0.0 => Err(MathError::Domain("sqrt of a negative number")),
            Func::Ln if x <= 0.0 => Err(MathError::Domain("ln of a non-positive number")),
            Func::Log10 if x <= 0.0 => Err(MathError::Domain("log10 of a non-positive number")),
            Func::Sqrt => Ok(x.sqrt()),
            Func::Abs => Ok(x.abs()),
            Func::Ln => Ok(x.ln()),
            Func::Exp => Ok(x.exp()),
            Func::Log10 => Ok(x.log10()),
        }
    }
}

/// Parsed expression tree. Parenthesized groups are not kept as nodes; the
/// tree shape already records them.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Percent(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn has_vars(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(_) => true,
            Expr::Neg(e) | Expr::Percent(e) | Expr::Call(_, e) => e.has_vars(),
            Expr::Binary(_, l, r) => l.has_vars() || r.has_vars(),
        }
    }

    /// Evaluates a variable-free tree. Every intermediate value must stay finite.
    pub fn eval(&self) -> Result<f64, ToolError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => {
                return Err(ToolError::Parse {
                    position: 0,
                    message: format!("free variable `{name}`"),
                })
            }
            Expr::Neg(e) => -e.eval()?,
            Expr::Percent(e) => e.eval()? / 100.0,
            Expr::Call(f, e) => f.apply(e.eval()?)?,
            Expr::Binary(op, l, r) => apply_binary(*op, l.eval()?, r.eval()?)?,
        };
        finite(v)
    }

    /// Replaces every variable-free subtree by its value. Subtrees that fail
    /// to evaluate are left as they are.
    pub fn fold_constants(&self) -> Expr {
        if !self.has_vars() {
            if let Ok(v) = self.eval() {
                return Expr::Num(v);
            }
        }
        match self {
            Expr::Num(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(e) => Expr::Neg(Box::new(e.fold_constants())),
            Expr::Percent(e) => Expr::Percent(Box::new(e.fold_constants())),
            Expr::Call(f, e) => Expr::Call(*f, Box::new(e.fold_constants())),
            Expr::Binary(op, l, r) => {
                Expr::Binary(*op, Box::new(l.fold_constants()), Box::new(r.fold_constants()))
            }
        }
    }

    /// Structural equality where numeric leaves may differ by `rel_tol`.
    pub fn approx_eq(&self, other: &Expr, rel_tol: f64) -> bool {
        match (self, other) {
            (Expr::Num(a), Expr::Num(b)) => {
                a == b || (a - b).abs() <= rel_tol * a.abs().max(b.abs())
            }
            (Expr::Var(a), Expr::Var(b)) => a == b,
            (Expr::Neg(a), Expr::Neg(b)) | (Expr::Percent(a), Expr::Percent(b)) => {
                a.approx_eq(b, rel_tol)
            }
            (Expr::Call(f, a), Expr::Call(g, b)) => f == g && a.approx_eq(b, rel_tol),
            (Expr::Binary(o1, l1, r1), Expr::Binary(o2, l2, r2)) => {
                o1 == o2 && l1.approx_eq(l2, rel_tol) && r1.approx_eq(r2, rel_tol)
            }
            _ => false,
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Percent(_) => 5,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 6,
        }
    }
}

fn finite(v: f64) -> Result<f64, ToolError> {
    if v.is_finite() {
        Ok(v)
    } else if v.is_nan() {
        Err(MathError::Domain("undefined result").into())
    } else {
        Err(MathError::Overflow.into())
    }
}

pub(crate) fn apply_binary(op: BinOp, l: f64, r: f64) -> Result<f64, MathError> {
    let v = match op {
        BinOp::Add => l + r,
        BinOp::Sub => l - r,
        BinOp::Mul => l * r,
        BinOp::Div => {
            if r == 0.0 {
                return Err(MathError::DivisionByZero);
            }
            l / r
        }
        BinOp::Mod => {
            if r == 0.0 {
                return Err(MathError::DivisionByZero);
            }
            l % r
        }
        BinOp::Pow => {
            if l == 0.0 && r < 0.0 {
                return Err(MathError::DivisionByZero);
            }
            if r.fract() == 0.0 && r.abs() <= i32::MAX as f64 {
                l.powi(r as i32)
            } else {
                l.powf(r)
            }
        }
    };
    if v.is_nan() {
        Err(MathError::Domain("undefined result"))
    } else if v.is_infinite() {
        Err(MathError::Overflow)
    } else {
        Ok(v)
    }
}

impl fmt::Display for Expr {
    /// Canonical text with the minimum parentheses needed to re-parse to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
            Expr::Neg(e) => {
                // `-` followed by a unary or tighter operand.
                if e.precedence() < 3 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Percent(e) => {
                if e.precedence() < 5 {
                    write!(f, "({e})%")
                } else {
                    write!(f, "{e}%")
                }
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                let (l_paren, r_paren) = if *op == BinOp::Pow {
                    // Base must be postfix-level; exponent may be any unary.
                    (l.precedence() < 5, r.precedence() < 3)
                } else {
                    (l.precedence() < p, r.precedence() <= p)
                };
                write_operand(f, l, l_paren)?;
                write!(f, "{}", op.symbol())?;
                write_operand(f, r, r_paren)
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, paren: bool) -> fmt::Result {
    if paren {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

struct Lexer;

impl Lexer {
    fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ToolError> {
        let chars: Vec<char> = src.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let start = i;
            match c {
                c if c.is_whitespace() => {
                    i += 1;
                }
                '0'..='9' | '.' => {
                    let mut s = String::new();
                    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                        s.push(chars[i]);
                        i += 1;
                    }
                    // Optional exponent, only when digits follow.
                    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                        let mut j = i + 1;
                        if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                            j += 1;
                        }
                        if j < chars.len() && chars[j].is_ascii_digit() {
                            while j < chars.len() && chars[j].is_ascii_digit() {
                                j += 1;
                            }
                            s.extend(&chars[i..j]);
                            i = j;
                        }
                    }
                    let v: f64 = s.parse().map_err(|_| ToolError::Parse {
                        position: start,
                        message: format!("bad number `{s}`"),
                    })?;
                    out.push((Tok::Num(v), start));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut s = String::new();
                    while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                    {
                        s.push(chars[i]);
                        i += 1;
                    }
                    out.push((Tok::Ident(s), start));
                }
                '(' | '（' => {
                    out.push((Tok::LParen, start));
                    i += 1;
                }
                ')' | '）' => {
                    out.push((Tok::RParen, start));
                    i += 1;
                }
                '+' | '-' | '*' | '/' | '^' | '%' => {
                    out.push((Tok::Op(c), start));
                    i += 1;
                }
                '×' => {
                    out.push((Tok::Op('*'), start));
                    i += 1;
                }
                '÷' => {
                    out.push((Tok::Op('/'), start));
                    i += 1;
                }
                '−' | '－' => {
                    out.push((Tok::Op('-'), start));
                    i += 1;
                }
                '％' => {
                    out.push((Tok::Op('%'), start));
                    i += 1;
                }
                other => {
                    return Err(ToolError::Parse {
                        position: start,
                        message: format!("unexpected character `{other}`"),
                    })
                }
            }
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    allow_vars: bool,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ToolError> {
        Err(ToolError::Parse {
            position: self.offset(),
            message: message.into(),
        })
    }

    fn sum(&mut self) -> Result<Expr, ToolError> {
        let mut lhs = self.product()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ToolError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op('*')) => BinOp::Mul,
                Some(Tok::Op('/')) => BinOp::Div,
                Some(Tok::Op('%')) => BinOp::Mod,
                // Implicit multiplication such as `2x`, equations only.
                Some(Tok::Ident(_)) if self.allow_vars => {
                    let rhs = self.unary()?;
                    lhs = Expr::Binary(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                    continue;
                }
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ToolError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ToolError> {
        let base = self.postfix()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, ToolError> {
        let mut e = self.primary()?;
        while let Some(Tok::Op('%')) = self.peek() {
            let next = self.toks.get(self.pos + 1).map(|(t, _)| t);
            if matches!(next, Some(Tok::Num(_) | Tok::Ident(_) | Tok::LParen)) {
                break;
            }
            self.pos += 1;
            e = Expr::Percent(Box::new(e));
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, ToolError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if let Some(func) = Func::from_name(&name) {
                    if let Some((Tok::LParen, _)) = self.toks.get(self.pos + 1) {
                        self.pos += 2;
                        let arg = self.sum()?;
                        self.expect_rparen()?;
                        return Ok(Expr::Call(func, Box::new(arg)));
                    }
                }
                if self.allow_vars {
                    self.pos += 1;
                    Ok(Expr::Var(name))
                } else {
                    self.error(format!("unknown name `{name}`"))
                }
            }
            Some(tok) => self.error(format!("unexpected {tok:?}")),
            None => self.error("unexpected end of input"),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ToolError> {
        if let Some(Tok::RParen) = self.peek() {
            self.pos += 1;
            Ok(())
        } else {
            self.error("expected `)`")
        }
    }
}

fn parse_with(src: &str, allow_vars: bool) -> Result<Expr, ToolError> {
    let toks = Lexer::tokenize(src)?;
    if toks.is_empty() {
        return Err(ToolError::Parse {
            position: 0,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.chars().count(),
        allow_vars,
    };
    let e = p.sum()?;
    if p.pos != p.toks.len() {
        return p.error("trailing input");
    }
    Ok(e)
}

/// Parses a variable-free arithmetic expression.
pub fn parse(src: &str) -> Result<Expr, ToolError> {
    parse_with(src, false)
}

/// Parses one side of a linear equation; identifiers become variables.
pub fn parse_with_vars(src: &str) -> Result<Expr, ToolError> {
    parse_with(src, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn val(s: &str) -> f64 {
        parse(s).unwrap().eval().unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(val("2+3*4"), 14.0);
        assert_eq!(val("2^3^2"), 512.0);
        assert_eq!(val("-2^2"), -4.0);
        assert_eq!(val("2^-1"), 0.5);
        assert_eq!(val("10-4-3"), 3.0);
        assert_eq!(val("2*-3"), -6.0);
    }

    #[test]
    fn percent_versus_modulo() {
        assert_eq!(val("20%"), 0.2);
        assert_eq!(val("7%3"), 1.0);
        assert_eq!(val("50%*4"), 2.0);
        assert_eq!(val("7 % (2+1)"), 1.0);
        assert_eq!(val("(120-100)/100"), 0.2);
        assert!((val("5%-1%") - 0.04).abs() < 1e-15);
    }

    #[test]
    fn functions_and_domain_errors() {
        assert_eq!(val("sqrt(16)+abs(-2)"), 6.0);
        assert!((val("ln(exp(2))") - 2.0).abs() < 1e-15);
        assert_eq!(val("log10(1000)"), 3.0);
        assert!(matches!(
            parse("sqrt(-1)").unwrap().eval(),
            Err(ToolError::Math(MathError::Domain(_)))
        ));
        assert!(matches!(
            parse("ln(0)").unwrap().eval(),
            Err(ToolError::Math(MathError::Domain(_)))
        ));
        assert!(matches!(
            parse("10^400").unwrap().eval(),
            Err(ToolError::Math(MathError::Overflow))
        ));
    }

    #[test]
    fn parse_errors_carry_positions() {
        match parse("2+*3") {
            Err(ToolError::Parse { position, .. }) => assert_eq!(position, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("(1+2"), Err(ToolError::Parse { position: 4, .. })));
        assert!(parse("").is_err());
        assert!(parse("x+1").is_err());
        assert!(parse("1 2").is_err());
    }

    #[test]
    fn unicode_operators() {
        assert_eq!(val("3×4÷2"), 6.0);
        assert_eq!(val("（1+1）×2"), 4.0);
    }

    #[test]
    fn canonical_text_reparses() {
        for src in ["-2^2", "(-2)^2", "2^3^2", "(2^3)^2", "1-(2-3)", "(1+2)%", "-(1+2)*3", "2^-(1+1)", "sqrt(2)^2", "7%3%2", "a-(b+c)"] {
            let e = parse_with_vars(src).unwrap();
            let again = parse_with_vars(&e.to_string()).unwrap();
            assert_eq!(e, again, "{src} -> {e}");
        }
    }

    #[test]
    fn folding_makes_equivalent_constants_equal() {
        let a = parse("(120-100)/100").unwrap().fold_constants();
        let b = parse("20/100").unwrap().fold_constants();
        assert!(a.approx_eq(&b, 1e-12));
        let c = parse_with_vars("x*(1+1)").unwrap().fold_constants();
        let d = parse_with_vars("x*2").unwrap();
        assert!(c.approx_eq(&d, 1e-12));
    }
}
