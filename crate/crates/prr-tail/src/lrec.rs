//! Concrete syntax, AST and well-formedness checking for LRec programs.
//!
//! A `.prr` file defines exactly one recursive procedure:
//!
//! ```text
//! def p(n; 2) = { sample v <- muniform(n) in { pre(n); invoke p(v); } }
//! ```
//!
//! Commands are either a `sample` over a distribution followed by a recursive
//! body, or a probabilistic choice `with { prob: { comm }; ... }`. As a
//! convenience, a bare body whose call argument is a `v`-free expression
//! (`pre(1); invoke p(n-1);`) desugars to sampling from a one-point
//! `discrete` distribution.

use crate::sympoly::{parse_poly, parse_poly_nv, Env, ExprError, Poly, Sym};
use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// A parsed LRec program (single procedure).
#[derive(Debug, Clone, PartialEq)]
pub struct PrrAst {
    pub name: String,
    pub c_p: u32,
    pub body: Command,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Sample {
        var: String,
        dist: Dist,
        body: RecBody,
    },
    Choice(Vec<(Prob, Command)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecBody {
    /// Preprocessing cost, a pseudo-polynomial over `n` (v-free by design).
    pub pre: Poly,
    pub call: CallForm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CallForm {
    /// `p(v)`
    SingleV,
    /// `p(size - v)`
    SingleSizeMinusV(SizeBase),
    /// `p(v); p(size - v)`
    DivideAndConquer(SizeBase),
}

/// The overall size in a call: `floor(n/b) + c` or `ceil(n/b) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeBase {
    pub ceil: bool,
    pub b: u32,
    pub c: i64,
}

impl SizeBase {
    pub const N_MINUS_1: SizeBase = SizeBase {
        ceil: false,
        b: 1,
        c: -1,
    };

    /// Exact integer value at a concrete `n`.
    pub fn eval(&self, n: i64) -> i64 {
        let b = self.b as i64;
        let q = if self.ceil {
            (n + b - 1).div_euclid(b)
        } else {
            n.div_euclid(b)
        };
        q + self.c
    }

    /// Pseudo-polynomial upper bound (R4): `floor(n/b) <= n/b`,
    /// `ceil(n/b) <= n/b + (b-1)/b`.
    pub fn upper_poly(&self) -> Poly {
        let b = self.b as f64;
        let slack = if self.ceil { (b - 1.0) / b } else { 0.0 };
        Poly::sym(Sym::N)
            .scale(1.0 / b)
            .add(&Poly::constant(self.c as f64 + slack))
    }

    /// Pseudo-polynomial lower bound: `floor(n/b) >= n/b - (b-1)/b`.
    pub fn lower_poly(&self) -> Poly {
        let b = self.b as f64;
        let slack = if self.ceil { 0.0 } else { -(b - 1.0) / b };
        Poly::sym(Sym::N)
            .scale(1.0 / b)
            .add(&Poly::constant(self.c as f64 + slack))
    }
}

impl fmt::Display for SizeBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.b == 1 && !self.ceil {
            write!(f, "n")?;
        } else if self.ceil {
            write!(f, "ceil(n/{})", self.b)?;
        } else {
            write!(f, "floor(n/{})", self.b)?;
        }
        match self.c.cmp(&0) {
            std::cmp::Ordering::Greater => write!(f, "+{}", self.c),
            std::cmp::Ordering::Less => write!(f, "{}", self.c),
            std::cmp::Ordering::Equal => Ok(()),
        }
    }
}

/// A probability constant. The surface text is kept verbatim so programs
/// round-trip; the numeric value is what the analysis consumes.
#[derive(Debug, Clone)]
pub struct Prob {
    pub value: f64,
    pub text: String,
}

impl Prob {
    pub fn one() -> Self {
        Prob {
            value: 1.0,
            text: "1".to_string(),
        }
    }
}

impl PartialEq for Prob {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value && self.text == other.text
    }
}

impl fmt::Display for Prob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dist {
    /// Uniform over `{0, .., n-1}`.
    Uniform,
    /// `max(i, n-1-i)` with `i` uniform over `{0, .., n-1}`.
    MUniform,
    /// Finite-support distribution; values are pseudo-polynomials over `n`.
    Discrete(Vec<(Prob, Poly)>),
    /// Piecewise uniform over disjoint integer intervals.
    PiecewiseUniform(Vec<Piece>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub lo: Poly,
    pub hi: Poly,
    pub weight: Prob,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: expected {expected}")]
    SyntaxError {
        line: usize,
        col: usize,
        expected: String,
    },
    #[error("unbound variable '{name}' at {line}:{col}")]
    UnboundVariable {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("multiple procedures defined; LRec allows exactly one")]
    MultipleProcedures,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Cursor { src, pos: 0 }
    }

    fn line_col(&self, pos: usize) -> (usize, usize) {
        let mut line = 1;
        let mut col = 1;
        for (i, ch) in self.src.char_indices() {
            if i >= pos {
                break;
            }
            if ch == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        }
        (line, col)
    }

    fn err<T>(&self, expected: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.line_col(self.pos);
        Err(ParseError::SyntaxError {
            line,
            col,
            expected: expected.into(),
        })
    }

    fn skip_ws(&mut self) {
        let bytes = self.src.as_bytes();
        loop {
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.src[self.pos..].starts_with("//") {
                while self.pos < bytes.len() && bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn peek_char(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn rest(&mut self) -> &'a str {
        self.skip_ws();
        &self.src[self.pos..]
    }

    fn eat_str(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(s) {
            if s.chars().all(|c| c.is_ascii_alphanumeric()) {
                let after = self.src[self.pos + s.len()..].chars().next();
                if matches!(after, Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    return false;
                }
            }
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect_str(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_str(s) {
            Ok(())
        } else {
            self.err(format!("'{s}'"))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len()
            && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        if self.pos == start || bytes[start].is_ascii_digit() {
            self.pos = start;
            return self.err("identifier");
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn uint(&mut self) -> Result<u64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return self.err("integer");
        }
        self.src[start..self.pos].parse().map_err(|_| {
            let (line, col) = self.line_col(start);
            ParseError::SyntaxError {
                line,
                col,
                expected: "integer".into(),
            }
        })
    }

    /// Text up to (not including) the matching close delimiter, honouring
    /// nesting. The cursor is left on the close delimiter.
    fn until_balanced(&mut self, open: char, close: char) -> Result<&'a str, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let mut depth = 0usize;
        for (i, ch) in self.src[start..].char_indices() {
            if ch == open {
                depth += 1;
            } else if ch == close {
                if depth == 0 {
                    self.pos = start + i;
                    return Ok(&self.src[start..start + i]);
                }
                depth -= 1;
            }
        }
        self.err(format!("'{close}'"))
    }

    /// Text up to the next top-level occurrence of `stop`.
    fn until_char(&mut self, stop: char) -> Result<&'a str, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let mut depth = 0i32;
        for (i, ch) in self.src[start..].char_indices() {
            match ch {
                '(' | '{' | '[' => depth += 1,
                ')' | '}' | ']' => depth -= 1,
                c if c == stop && depth == 0 => {
                    self.pos = start + i;
                    return Ok(&self.src[start..start + i]);
                }
                _ => {}
            }
        }
        self.err(format!("'{stop}'"))
    }
}

/// Replace whole-word occurrences of `from` by `to` (maps the bound sample
/// variable onto the expression parser's fixed `v` symbol).
fn rename_word(text: &str, from: &str, to: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            let word = &text[start..i];
            out.push_str(if word == from { to } else { word });
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

struct Parser<'a> {
    cur: Cursor<'a>,
    proc_name: String,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            cur: Cursor::new(src),
            proc_name: String::new(),
        }
    }

    fn expr_err(&self, base: usize, e: ExprError) -> ParseError {
        let (line, col) = self.cur.line_col(base + e.pos);
        if let Some(name) = e
            .msg
            .strip_prefix("unknown identifier '")
            .and_then(|s| s.strip_suffix('\''))
        {
            ParseError::UnboundVariable {
                name: name.to_string(),
                line,
                col,
            }
        } else {
            ParseError::SyntaxError {
                line,
                col,
                expected: e.msg,
            }
        }
    }

    /// Parse a pseudo-polynomial; `var` (if any) is renamed to `v`.
    fn parse_expr(&self, text: &str, base: usize, var: Option<&str>) -> Result<Poly, ParseError> {
        let renamed = match var {
            Some(v) if v != "v" => rename_word(text, v, "v"),
            _ => text.to_string(),
        };
        let poly = parse_poly_nv(&renamed).map_err(|e| self.expr_err(base, e))?;
        if var.is_none() && poly.mentions(Sym::V) {
            let (line, col) = self.cur.line_col(base);
            return Err(ParseError::UnboundVariable {
                name: "v".into(),
                line,
                col,
            });
        }
        Ok(poly)
    }

    fn parse_prob(&self, text: &str, base: usize) -> Result<Prob, ParseError> {
        let poly = parse_poly(text).map_err(|e| self.expr_err(base, e))?;
        if !poly.is_constant() {
            let (line, col) = self.cur.line_col(base);
            return Err(ParseError::SyntaxError {
                line,
                col,
                expected: "constant probability".into(),
            });
        }
        Ok(Prob {
            value: poly.constant_part(),
            text: text.trim().to_string(),
        })
    }

    fn program(&mut self) -> Result<PrrAst, ParseError> {
        self.cur.expect_str("def")?;
        let name = self.cur.ident()?;
        self.proc_name = name.clone();
        self.cur.expect_str("(")?;
        self.cur.expect_str("n")?;
        self.cur.expect_str(";")?;
        let c_p = self.cur.uint()? as u32;
        if c_p == 0 {
            return self.cur.err("positive recursion threshold");
        }
        self.cur.expect_str(")")?;
        self.cur.expect_str("=")?;
        self.cur.expect_str("{")?;
        let body = self.command()?;
        self.cur.expect_str("}")?;
        self.cur.skip_ws();
        if self.cur.pos != self.cur.src.len() {
            if self.cur.src[self.cur.pos..].starts_with("def") {
                return Err(ParseError::MultipleProcedures);
            }
            return self.cur.err("end of input");
        }
        Ok(PrrAst { name, c_p, body })
    }

    fn command(&mut self) -> Result<Command, ParseError> {
        if self.cur.eat_str("sample") {
            let var = self.cur.ident()?;
            self.cur.expect_str("<-")?;
            let dist = self.dist()?;
            self.cur.expect_str("in")?;
            self.cur.expect_str("{")?;
            let body = self.rec_body(Some(&var))?;
            self.cur.expect_str("}")?;
            Ok(Command::Sample { var, dist, body })
        } else if self.cur.rest().starts_with("with") {
            self.cur.expect_str("with")?;
            self.cur.expect_str("{")?;
            let mut arms = Vec::new();
            while self.cur.peek_char() != Some('}') {
                let base = {
                    self.cur.skip_ws();
                    self.cur.pos
                };
                let ptext = self.cur.until_char(':')?.to_string();
                let prob = self.parse_prob(&ptext, base)?;
                self.cur.expect_str(":")?;
                self.cur.expect_str("{")?;
                let inner = self.command()?;
                self.cur.expect_str("}")?;
                self.cur.expect_str(";")?;
                arms.push((prob, inner));
            }
            self.cur.expect_str("}")?;
            if arms.is_empty() {
                return self.cur.err("at least one choice arm");
            }
            Ok(Command::Choice(arms))
        } else if self.cur.rest().starts_with("pre") {
            // Bare-body sugar: the call argument is a v-free size expression.
            let (body, value) = self.bare_body()?;
            Ok(Command::Sample {
                var: "v".to_string(),
                dist: Dist::Discrete(vec![(Prob::one(), value)]),
                body,
            })
        } else {
            self.cur.err("'sample', 'with' or 'pre'")
        }
    }

    fn rec_body(&mut self, var: Option<&str>) -> Result<RecBody, ParseError> {
        self.cur.expect_str("pre")?;
        self.cur.expect_str("(")?;
        let base = self.cur.pos;
        let pre_text = self.cur.until_balanced('(', ')')?.to_string();
        let pre = self.parse_expr(&pre_text, base, var)?;
        self.cur.expect_str(")")?;
        self.cur.expect_str(";")?;
        self.cur.expect_str("invoke")?;
        let var = var.expect("rec_body with a bound variable");
        let call = self.call(var)?;
        self.cur.expect_str(";")?;
        Ok(RecBody { pre, call })
    }

    /// `pre(e); invoke p(expr);` with `expr` v-free: used by the sugar.
    fn bare_body(&mut self) -> Result<(RecBody, Poly), ParseError> {
        self.cur.expect_str("pre")?;
        self.cur.expect_str("(")?;
        let base = self.cur.pos;
        let pre_text = self.cur.until_balanced('(', ')')?.to_string();
        let pre = self.parse_expr(&pre_text, base, None)?;
        self.cur.expect_str(")")?;
        self.cur.expect_str(";")?;
        self.cur.expect_str("invoke")?;
        let name = self.cur.ident()?;
        if name != self.proc_name {
            let (line, col) = self.cur.line_col(self.cur.pos);
            return Err(ParseError::UnboundVariable { name, line, col });
        }
        self.cur.expect_str("(")?;
        let vbase = self.cur.pos;
        let arg = self.cur.until_balanced('(', ')')?.to_string();
        self.cur.expect_str(")")?;
        self.cur.expect_str(";")?;
        let value = self.parse_expr(&arg, vbase, None)?;
        Ok((
            RecBody {
                pre,
                call: CallForm::SingleV,
            },
            value,
        ))
    }

    fn call(&mut self, var: &str) -> Result<CallForm, ParseError> {
        let name = self.cur.ident()?;
        if name != self.proc_name {
            let (line, col) = self.cur.line_col(self.cur.pos);
            return Err(ParseError::UnboundVariable { name, line, col });
        }
        self.cur.expect_str("(")?;
        let base = self.cur.pos;
        let arg1 = self.cur.until_balanced('(', ')')?.to_string();
        self.cur.expect_str(")")?;
        // Lookahead for a second call `; p(...)`.
        let save = self.cur.pos;
        let second = if self.cur.eat_str(";") {
            let rest = self.cur.rest();
            let is_call = rest
                .strip_prefix(self.proc_name.as_str())
                .map(|r| r.trim_start().starts_with('('))
                .unwrap_or(false);
            if is_call {
                let _ = self.cur.ident()?;
                self.cur.expect_str("(")?;
                let b2 = self.cur.pos;
                let arg2 = self.cur.until_balanced('(', ')')?.to_string();
                self.cur.expect_str(")")?;
                Some((arg2, b2))
            } else {
                self.cur.pos = save;
                None
            }
        } else {
            None
        };
        match second {
            None => {
                if arg1.trim() == var {
                    Ok(CallForm::SingleV)
                } else {
                    Ok(CallForm::SingleSizeMinusV(
                        self.size_minus_var(&arg1, base, var)?,
                    ))
                }
            }
            Some((arg2, b2)) => {
                if arg1.trim() != var {
                    let (line, col) = self.cur.line_col(base);
                    return Err(ParseError::SyntaxError {
                        line,
                        col,
                        expected: format!(
                            "first divide-and-conquer call must be {}({var})",
                            self.proc_name
                        ),
                    });
                }
                Ok(CallForm::DivideAndConquer(
                    self.size_minus_var(&arg2, b2, var)?,
                ))
            }
        }
    }

    fn size_minus_var(&self, text: &str, base: usize, var: &str) -> Result<SizeBase, ParseError> {
        let t = text.trim();
        let stripped = t
            .strip_suffix(var)
            .map(str::trim_end)
            .and_then(|s| s.strip_suffix('-'))
            .map(str::trim_end);
        let Some(size_text) = stripped else {
            let (line, col) = self.cur.line_col(base);
            return Err(ParseError::SyntaxError {
                line,
                col,
                expected: format!("'{var}' or 'size - {var}' as call argument"),
            });
        };
        parse_size_base(size_text).ok_or_else(|| {
            let (line, col) = self.cur.line_col(base);
            ParseError::SyntaxError {
                line,
                col,
                expected: "size of the form n+c, floor(n/b)+c or ceil(n/b)+c".into(),
            }
        })
    }

    fn dist(&mut self) -> Result<Dist, ParseError> {
        if self.cur.eat_str("uniform") {
            self.cur.expect_str("(")?;
            self.cur.expect_str("n")?;
            self.cur.expect_str(")")?;
            Ok(Dist::Uniform)
        } else if self.cur.eat_str("muniform") {
            self.cur.expect_str("(")?;
            self.cur.expect_str("n")?;
            self.cur.expect_str(")")?;
            Ok(Dist::MUniform)
        } else if self.cur.eat_str("discrete") {
            self.cur.expect_str("{")?;
            let mut arms = Vec::new();
            while self.cur.peek_char() != Some('}') {
                let base = {
                    self.cur.skip_ws();
                    self.cur.pos
                };
                let ptext = self.cur.until_char(':')?.to_string();
                let prob = self.parse_prob(&ptext, base)?;
                self.cur.expect_str(":")?;
                let vbase = self.cur.pos;
                let vtext = self.cur.until_char(',')?.to_string();
                let value = self.parse_expr(&vtext, vbase, None)?;
                self.cur.expect_str(",")?;
                arms.push((prob, value));
            }
            self.cur.expect_str("}")?;
            if arms.is_empty() {
                return self.cur.err("at least one discrete arm");
            }
            Ok(Dist::Discrete(arms))
        } else if self.cur.eat_str("puniform") {
            self.cur.expect_str("{")?;
            let mut pieces = Vec::new();
            while self.cur.peek_char() != Some('}') {
                self.cur.expect_str("[")?;
                let lb = self.cur.pos;
                let lo_text = self.cur.until_char(',')?.to_string();
                let lo = self.parse_expr(&lo_text, lb, None)?;
                self.cur.expect_str(",")?;
                let hb = self.cur.pos;
                let hi_text = self.cur.until_balanced('[', ']')?.to_string();
                let hi = self.parse_expr(&hi_text, hb, None)?;
                self.cur.expect_str("]")?;
                self.cur.expect_str(":")?;
                let pb = self.cur.pos;
                let ptext = self.cur.until_char(',')?.to_string();
                let weight = self.parse_prob(&ptext, pb)?;
                self.cur.expect_str(",")?;
                pieces.push(Piece { lo, hi, weight });
            }
            self.cur.expect_str("}")?;
            if pieces.is_empty() {
                return self.cur.err("at least one piece");
            }
            Ok(Dist::PiecewiseUniform(pieces))
        } else {
            self.cur
                .err("'uniform', 'muniform', 'discrete' or 'puniform'")
        }
    }
}

/// Parse a size expression `n`, `floor(n/b)` or `ceil(n/b)` with an optional
/// trailing `+c`/`-c`.
fn parse_size_base(text: &str) -> Option<SizeBase> {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if let Some(r) = t.strip_prefix('n') {
        let c = if r.is_empty() {
            0
        } else {
            r.parse::<i64>().ok()?
        };
        return Some(SizeBase {
            ceil: false,
            b: 1,
            c,
        });
    }
    let (ceil, rest) = if let Some(r) = t.strip_prefix("floor(n/") {
        (false, r)
    } else {
        let r = t.strip_prefix("ceil(n/")?;
        (true, r)
    };
    let close = rest.find(')')?;
    let b: u32 = rest[..close].parse().ok()?;
    if b == 0 {
        return None;
    }
    let tail = &rest[close + 1..];
    let c = if tail.is_empty() {
        0
    } else {
        tail.parse::<i64>().ok()?
    };
    Some(SizeBase { ceil, b, c })
}

/// Parse LRec source text into an AST.
pub fn parse(source: &str) -> Result<PrrAst, ParseError> {
    Parser::new(source).program()
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A well-formedness violation. Violations are data, not errors: callers
/// decide whether to proceed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    /// Choice or discrete probabilities do not sum to 1.
    ProbSumViolation { sum: f64 },
    /// A probability lies outside [0, 1].
    ProbOutOfRange { value: f64 },
    /// A passed size can exceed `n`.
    SizeRangeViolation { detail: String },
    /// `pre(expr)` mentions the sampled variable.
    VInPreCost,
    /// Piecewise-uniform piece weights do not sum to 1.
    PieceWeightSum { sum: f64 },
    /// Piecewise-uniform pieces overlap or leave the valid range.
    PieceLayout { detail: String },
}

/// Check well-formedness. Symbolically decidable size-range checks happen
/// here; the rest is deferred to the simulator's runtime assertions.
pub fn validate(ast: &PrrAst) -> Vec<Violation> {
    let mut out = Vec::new();
    validate_command(&ast.body, ast.c_p, &mut out);
    out
}

fn check_prob_list(probs: &[f64], out: &mut Vec<Violation>) {
    let mut sum = 0.0;
    for &p in probs {
        if !(0.0..=1.0 + 1e-9).contains(&p) {
            out.push(Violation::ProbOutOfRange { value: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        out.push(Violation::ProbSumViolation { sum });
    }
}

/// Does `value(n) <= n` hold for all n >= c_p? `None` means undecided here
/// (deferred to runtime).
fn size_upper_ok(value: &Poly, c_p: u32) -> Option<bool> {
    let diff = value.sub(&Poly::sym(Sym::N));
    if diff.is_zero() {
        return Some(true);
    }
    let lead = diff.leading_monomial(Sym::N).ok()?;
    if lead.exp(Sym::N) > (0, 0) && lead.coeff > 0.0 {
        return Some(false);
    }
    for n in c_p..c_p + 64 {
        if diff.eval(&Env::n(n as f64)).ok()? > 1e-9 {
            return Some(false);
        }
    }
    Some(true)
}

fn validate_command(c: &Command, c_p: u32, out: &mut Vec<Violation>) {
    match c {
        Command::Choice(arms) => {
            check_prob_list(&arms.iter().map(|(p, _)| p.value).collect::<Vec<_>>(), out);
            for (_, inner) in arms {
                validate_command(inner, c_p, out);
            }
        }
        Command::Sample { dist, body, .. } => {
            if body.pre.mentions(Sym::V) {
                out.push(Violation::VInPreCost);
            }
            match dist {
                Dist::Uniform | Dist::MUniform => {}
                Dist::Discrete(arms) => {
                    check_prob_list(&arms.iter().map(|(p, _)| p.value).collect::<Vec<_>>(), out);
                    for (_, value) in arms {
                        if size_upper_ok(value, c_p) == Some(false) {
                            out.push(Violation::SizeRangeViolation {
                                detail: format!("discrete value {value} can exceed n"),
                            });
                        }
                    }
                }
                Dist::PiecewiseUniform(pieces) => {
                    let sum: f64 = pieces.iter().map(|p| p.weight.value).sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        out.push(Violation::PieceWeightSum { sum });
                    }
                    for piece in pieces {
                        if size_upper_ok(&piece.hi.add(&Poly::one()), c_p) == Some(false) {
                            out.push(Violation::PieceLayout {
                                detail: format!("piece upper end {} can exceed n-1", piece.hi),
                            });
                        }
                    }
                    for n in [c_p.max(4), 32, 1000] {
                        let env = Env::n(n as f64);
                        let mut ivs: Vec<(f64, f64)> = Vec::new();
                        for piece in pieces {
                            if let (Ok(lo), Ok(hi)) = (piece.lo.eval(&env), piece.hi.eval(&env)) {
                                ivs.push((lo, hi));
                            }
                        }
                        ivs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                        for w in ivs.windows(2) {
                            if w[1].0 <= w[0].1 + 1e-9 {
                                out.push(Violation::PieceLayout {
                                    detail: format!("pieces overlap at n={n}"),
                                });
                            }
                        }
                    }
                }
            }
            if let CallForm::SingleSizeMinusV(sb) | CallForm::DivideAndConquer(sb) = body.call {
                if size_upper_ok(&sb.upper_poly(), c_p) == Some(false) {
                    out.push(Violation::SizeRangeViolation {
                        detail: format!("size base {sb} can exceed n"),
                    });
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Pretty-printing
// ---------------------------------------------------------------------------

fn fmt_command(c: &Command, name: &str, f: &mut fmt::Formatter<'_>, indent: usize) -> fmt::Result {
    let pad = "  ".repeat(indent);
    match c {
        Command::Sample { var, dist, body } => {
            write!(f, "{pad}sample {var} <- ")?;
            match dist {
                Dist::Uniform => write!(f, "uniform(n)")?,
                Dist::MUniform => write!(f, "muniform(n)")?,
                Dist::Discrete(arms) => {
                    write!(f, "discrete{{")?;
                    for (p, value) in arms {
                        write!(f, " {p}: {value},")?;
                    }
                    write!(f, " }}")?;
                }
                Dist::PiecewiseUniform(pieces) => {
                    write!(f, "puniform{{")?;
                    for piece in pieces {
                        write!(f, " [{}, {}]: {},", piece.lo, piece.hi, piece.weight)?;
                    }
                    write!(f, " }}")?;
                }
            }
            write!(f, " in {{ pre({}); invoke ", body.pre)?;
            match &body.call {
                CallForm::SingleV => write!(f, "{name}({var});")?,
                CallForm::SingleSizeMinusV(sb) => write!(f, "{name}({sb}-{var});")?,
                CallForm::DivideAndConquer(sb) => write!(f, "{name}({var}); {name}({sb}-{var});")?,
            }
            write!(f, " }}")
        }
        Command::Choice(arms) => {
            writeln!(f, "{pad}with {{")?;
            for (p, inner) in arms {
                writeln!(f, "{pad}  {p}: {{")?;
                fmt_command(inner, name, f, indent + 2)?;
                writeln!(f)?;
                writeln!(f, "{pad}  }};")?;
            }
            write!(f, "{pad}}}")
        }
    }
}

impl fmt::Display for PrrAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "def {}(n; {}) = {{", self.name, self.c_p)?;
        fmt_command(&self.body, &self.name, f, 1)?;
        writeln!(f)?;
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_quickselect() {
        let src = "def p(n; 2) = { sample v <- muniform(n) in { pre(n); invoke p(v); } }";
        let ast = parse(src).unwrap();
        assert_eq!(ast.c_p, 2);
        match &ast.body {
            Command::Sample { dist, body, .. } => {
                assert_eq!(*dist, Dist::MUniform);
                assert_eq!(body.call, CallForm::SingleV);
                assert_eq!(body.pre, Poly::sym(Sym::N));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(validate(&ast).is_empty());
    }

    #[test]
    fn parses_quicksort_divide_and_conquer() {
        let src = "def p(n; 2) = { sample v <- uniform(n) in { pre(n); invoke p(v); p(n-1-v); } }";
        let ast = parse(src).unwrap();
        match &ast.body {
            Command::Sample { body, .. } => {
                assert_eq!(body.call, CallForm::DivideAndConquer(SizeBase::N_MINUS_1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_channel_choice_with_sugar() {
        let src = "def p(n; 2) = { with { 1/e: { pre(1); invoke p(n-1); }; 1-1/e: { pre(1); invoke p(n); }; } }";
        let ast = parse(src).unwrap();
        match &ast.body {
            Command::Choice(arms) => {
                assert_eq!(arms.len(), 2);
                assert!((arms[0].0.value - 1.0 / std::f64::consts::E).abs() < 1e-12);
                match &arms[0].1 {
                    Command::Sample {
                        dist: Dist::Discrete(d),
                        body,
                        ..
                    } => {
                        assert_eq!(d.len(), 1);
                        assert_eq!(d[0].1, Poly::sym(Sym::N).sub(&Poly::one()));
                        assert_eq!(body.call, CallForm::SingleV);
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(validate(&ast).is_empty());
    }

    #[test]
    fn rejects_multiple_procedures() {
        let src = "def p(n; 2) = { sample v <- uniform(n) in { pre(n); invoke p(v); } }\ndef q(n; 2) = { sample v <- uniform(n) in { pre(n); invoke q(v); } }";
        assert_eq!(parse(src).unwrap_err(), ParseError::MultipleProcedures);
    }

    #[test]
    fn rejects_unbound_variable() {
        let src = "def p(n; 2) = { sample v <- uniform(n) in { pre(m); invoke p(v); } }";
        assert!(matches!(
            parse(src).unwrap_err(),
            ParseError::UnboundVariable { .. }
        ));
    }

    #[test]
    fn flags_bad_probability_sum() {
        let src = "def p(n; 2) = { with { 0.5: { pre(1); invoke p(n-1); }; 0.6: { pre(1); invoke p(n-1); }; } }";
        let ast = parse(src).unwrap();
        let violations = validate(&ast);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::ProbSumViolation { sum } if (sum - 1.1).abs() < 1e-9)));
    }

    #[test]
    fn flags_size_exceeding_n() {
        let src = "def p(n; 2) = { sample v <- discrete{ 1: n+1, } in { pre(1); invoke p(v); } }";
        let ast = parse(src).unwrap();
        assert!(validate(&ast)
            .iter()
            .any(|v| matches!(v, Violation::SizeRangeViolation { .. })));
    }

    #[test]
    fn renamed_sample_variable_works() {
        let src =
            "def p(n; 2) = { sample i <- uniform(n) in { pre(n); invoke p(ceil(n/2)-1-i); } }";
        let ast = parse(src).unwrap();
        match &ast.body {
            Command::Sample { var, body, .. } => {
                assert_eq!(var, "i");
                assert_eq!(
                    body.call,
                    CallForm::SingleSizeMinusV(SizeBase {
                        ceil: true,
                        b: 2,
                        c: -1
                    })
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pretty_print_round_trips() {
        for src in [
            "def p(n; 2) = { sample v <- muniform(n) in { pre(n); invoke p(v); } }",
            "def p(n; 2) = { sample v <- uniform(n) in { pre(n); invoke p(v); p(n-1-v); } }",
            "def p(n; 2) = { with { 1/e: { pre(1); invoke p(n-1); }; 1-1/e: { pre(1); invoke p(n); }; } }",
            "def p(n; 2) = { sample i <- uniform(n) in { pre(n); invoke p(ceil(n/2)-1-i); } }",
            "def p(n; 2) = { sample v <- puniform{ [0, n/2]: 2/3, [n/2+1, n-1]: 1/3, } in { pre(n); invoke p(v); } }",
            "def p(n; 1) = { with { 0.5: { pre(2); invoke p(n-1); }; 0.5: { pre(1); invoke p(n-1); }; } }",
        ] {
            let ast = parse(src).unwrap();
            let printed = ast.to_string();
            let reparsed = parse(&printed).unwrap_or_else(|e| panic!("reparse of {printed:?}: {e}"));
            assert_eq!(ast, reparsed, "round trip failed for {src}");
        }
    }

    #[test]
    fn parse_is_total_on_noise() {
        let mut state = 0x243F6A8885A308D3u64;
        for _ in 0..10_000 {
            let mut bytes = Vec::new();
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let len = (state >> 33) % 64;
            for _ in 0..len {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let c = match (state >> 27) % 8 {
                    0 => b"defsamplewithpreinvoke"[(state >> 40) as usize % 22],
                    1 => b"(){};:,<->=^*/+-"[(state >> 40) as usize % 16],
                    _ => b" nvpe0123456789"[(state >> 40) as usize % 15],
                };
                bytes.push(c);
            }
            let text = String::from_utf8_lossy(&bytes).into_owned();
            let _ = parse(&text);
        }
    }
}
