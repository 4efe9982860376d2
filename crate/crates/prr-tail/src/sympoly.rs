//! Computer algebra for pseudo-polynomials: finite sums of monomials
//! `c * x^a * ln(x)^b` over the symbols `n`, `alpha` and `v`.
//!
//! Everything downstream (costs, templates, bound exponents, canonical
//! constraints) is expressed in this one currency, so the module also carries
//! the analysis primitives the decision procedure needs: derivatives in `n`,
//! limits at infinity, leading-monomial extraction, the `NegativeLB`
//! threshold search and the monotonicity classification of pseudo-monomials.

use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// Coefficients below this magnitude are treated as zero when normalizing.
pub const EPS_ZERO: f64 = 1e-12;

/// Largest admissible |exponent| on any symbol or log factor.
pub const MAX_EXP: i32 = 64;

/// Iteration cap for the `NegativeLB` integer scan.
pub const SCAN_CAP: u64 = 1_000_000_000;

/// Symbols a pseudo-polynomial may mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Sym {
    N,
    Alpha,
    V,
}

impl Sym {
    pub const ALL: [Sym; 3] = [Sym::Alpha, Sym::N, Sym::V];

    fn idx(self) -> usize {
        match self {
            Sym::Alpha => 0,
            Sym::N => 1,
            Sym::V => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sym::Alpha => "alpha",
            Sym::N => "n",
            Sym::V => "v",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymError {
    #[error("exponent overflow (|exponent| > {MAX_EXP})")]
    ExponentOverflow,
    #[error(
        "substituting into {0} powers requires a positive log-free monomial; rewrite with R2 first"
    )]
    NonMonomialLogSubstitution(&'static str),
    #[error("unbound symbol {}", .0.name())]
    UnboundSymbol(Sym),
    #[error("symbol {} must be bound to a positive value, got {1}", .0.name())]
    NonPositiveValue(Sym, f64),
    #[error("evaluation produced a non-finite value")]
    NonFiniteValue,
    #[error("zero polynomial")]
    ZeroPolynomial,
    #[error("polynomial mentions symbols other than {}", .0.name())]
    MixedSymbols(Sym),
    #[error("NegativeLB scan exceeded {SCAN_CAP} iterations")]
    ScanCapExceeded,
    #[error("division requires a nonzero monomial divisor")]
    NonMonomialDivisor,
}

/// Exponent pair: power of the symbol and power of its logarithm.
pub type ExpPair = (i32, i32);

/// A single pseudo-monomial `coeff * prod_s s^pow * ln(s)^ln_pow`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mono {
    pub coeff: f64,
    /// Indexed by `Sym::idx()`: alpha, n, v.
    pub exps: [ExpPair; 3],
}

impl Mono {
    pub fn constant(c: f64) -> Self {
        Mono {
            coeff: c,
            exps: [(0, 0); 3],
        }
    }

    pub fn sym(s: Sym, pow: i32, ln_pow: i32) -> Self {
        let mut exps = [(0, 0); 3];
        exps[s.idx()] = (pow, ln_pow);
        Mono { coeff: 1.0, exps }
    }

    pub fn exp(&self, s: Sym) -> ExpPair {
        self.exps[s.idx()]
    }

    pub fn is_constant(&self) -> bool {
        self.exps.iter().all(|&e| e == (0, 0))
    }

    /// True when the monomial mentions no symbol outside `s`.
    pub fn only(&self, s: Sym) -> bool {
        Sym::ALL
            .iter()
            .all(|&t| t == s || self.exps[t.idx()] == (0, 0))
    }

    fn sig(&self) -> [ExpPair; 3] {
        self.exps
    }

    pub fn try_mul(&self, other: &Mono) -> Result<Mono, SymError> {
        let mut exps = [(0, 0); 3];
        for (slot, (a, b)) in exps.iter_mut().zip(self.exps.iter().zip(&other.exps)) {
            let p = a.0 + b.0;
            let l = a.1 + b.1;
            if p.abs() > MAX_EXP || l.abs() > MAX_EXP {
                return Err(SymError::ExponentOverflow);
            }
            *slot = (p, l);
        }
        Ok(Mono {
            coeff: self.coeff * other.coeff,
            exps,
        })
    }

    /// Multiplicative inverse (for monomial division).
    pub fn inv(&self) -> Result<Mono, SymError> {
        if self.coeff.abs() < EPS_ZERO {
            return Err(SymError::NonMonomialDivisor);
        }
        let exps = self.exps.map(|(p, l)| (-p, -l));
        Ok(Mono {
            coeff: 1.0 / self.coeff,
            exps,
        })
    }

    pub fn eval(&self, env: &Env) -> Result<f64, SymError> {
        let mut acc = self.coeff;
        for &s in &Sym::ALL {
            let (p, l) = self.exps[s.idx()];
            if p == 0 && l == 0 {
                continue;
            }
            let x = env.0[s.idx()].ok_or(SymError::UnboundSymbol(s))?;
            if x <= 0.0 {
                return Err(SymError::NonPositiveValue(s, x));
            }
            if p != 0 {
                acc *= x.powi(p);
            }
            if l != 0 {
                acc *= x.ln().powi(l);
            }
        }
        if acc.is_finite() {
            Ok(acc)
        } else {
            Err(SymError::NonFiniteValue)
        }
    }
}

/// Evaluation environment: values for alpha, n, v (in `Sym::idx` order).
#[derive(Debug, Clone, Copy, Default)]
pub struct Env(pub [Option<f64>; 3]);

impl Env {
    pub fn new() -> Self {
        Env([None; 3])
    }
    pub fn with(mut self, s: Sym, x: f64) -> Self {
        self.0[s.idx()] = Some(x);
        self
    }
    pub fn n(x: f64) -> Self {
        Env::new().with(Sym::N, x)
    }
    pub fn alpha_n(a: f64, n: f64) -> Self {
        Env::new().with(Sym::Alpha, a).with(Sym::N, n)
    }
}

/// Canonical sparse pseudo-polynomial: terms sorted by descending exponent
/// signature, like terms merged, near-zero coefficients dropped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    terms: Vec<Mono>,
}

fn sig_cmp(a: &[ExpPair; 3], b: &[ExpPair; 3]) -> std::cmp::Ordering {
    a.cmp(b)
}

impl Poly {
    pub fn zero() -> Self {
        Poly { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Poly::from_terms(vec![Mono::constant(c)])
    }

    pub fn one() -> Self {
        Poly::constant(1.0)
    }

    pub fn sym(s: Sym) -> Self {
        Poly::from_terms(vec![Mono::sym(s, 1, 0)])
    }

    pub fn ln_sym(s: Sym) -> Self {
        Poly::from_terms(vec![Mono::sym(s, 0, 1)])
    }

    pub fn mono(m: Mono) -> Self {
        Poly::from_terms(vec![m])
    }

    pub fn from_terms(terms: Vec<Mono>) -> Self {
        let mut p = Poly { terms };
        p.normalize();
        p
    }

    fn normalize(&mut self) {
        self.terms.sort_by(|a, b| sig_cmp(&b.sig(), &a.sig()));
        let mut out: Vec<Mono> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            if let Some(last) = out.last_mut() {
                if last.sig() == t.sig() {
                    last.coeff += t.coeff;
                    continue;
                }
            }
            out.push(t);
        }
        out.retain(|t| t.coeff.abs() >= EPS_ZERO);
        self.terms = out;
    }

    pub fn terms(&self) -> &[Mono] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.is_constant())
    }

    /// Sum of the exponent-free terms (0 for none).
    pub fn constant_part(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.is_constant())
            .map(|t| t.coeff)
            .sum()
    }

    /// The polynomial without its constant terms.
    pub fn nonconstant_part(&self) -> Poly {
        Poly::from_terms(
            self.terms
                .iter()
                .filter(|t| !t.is_constant())
                .copied()
                .collect(),
        )
    }

    /// True when no term mentions a symbol outside `s`.
    pub fn only(&self, s: Sym) -> bool {
        self.terms.iter().all(|t| t.only(s))
    }

    pub fn mentions(&self, s: Sym) -> bool {
        self.terms.iter().any(|t| t.exp(s) != (0, 0))
    }

    pub fn as_single_mono(&self) -> Option<Mono> {
        if self.terms.len() == 1 {
            Some(self.terms[0])
        } else {
            None
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Poly::from_terms(terms)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Poly {
        Poly::from_terms(
            self.terms
                .iter()
                .map(|t| Mono {
                    coeff: -t.coeff,
                    ..*t
                })
                .collect(),
        )
    }

    pub fn scale(&self, c: f64) -> Poly {
        Poly::from_terms(
            self.terms
                .iter()
                .map(|t| Mono {
                    coeff: c * t.coeff,
                    ..*t
                })
                .collect(),
        )
    }

    pub fn mul(&self, other: &Poly) -> Result<Poly, SymError> {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(a.try_mul(b)?);
            }
        }
        Ok(Poly::from_terms(terms))
    }

    pub fn mul_mono(&self, m: &Mono) -> Result<Poly, SymError> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for a in &self.terms {
            terms.push(a.try_mul(m)?);
        }
        Ok(Poly::from_terms(terms))
    }

    pub fn pow(&self, k: u32) -> Result<Poly, SymError> {
        let mut acc = Poly::one();
        for _ in 0..k {
            acc = acc.mul(self)?;
        }
        Ok(acc)
    }

    /// `ln` of a positive, log-free monomial: `ln(c*x^a) = ln c + a ln x`.
    pub fn ln_of_monomial(m: &Mono) -> Result<Poly, SymError> {
        if m.coeff <= 0.0 || m.exps.iter().any(|&(_, l)| l != 0) {
            return Err(SymError::NonMonomialLogSubstitution("ln"));
        }
        let mut terms = Vec::new();
        if m.coeff != 1.0 {
            terms.push(Mono::constant(m.coeff.ln()));
        }
        for &s in &Sym::ALL {
            let (p, _) = m.exp(s);
            if p != 0 {
                terms.push(Mono {
                    coeff: p as f64,
                    exps: Mono::sym(s, 0, 1).exps,
                });
            }
        }
        Ok(Poly::from_terms(terms))
    }

    /// Substitute `value` for every occurrence of `sym` (both `sym^a` and
    /// `ln(sym)^b` factors). Powers of a general sum are expanded; negative
    /// powers and logarithms demand a monomial value.
    pub fn substitute(&self, sym: Sym, value: &Poly) -> Result<Poly, SymError> {
        let mut acc = Poly::zero();
        for t in &self.terms {
            let (p, l) = t.exp(sym);
            let mut rest = *t;
            rest.exps[sym.idx()] = (0, 0);
            let mut factor = Poly::mono(rest);
            if p != 0 {
                let vp = if p > 0 {
                    value.pow(p as u32)?
                } else {
                    let m = value
                        .as_single_mono()
                        .ok_or(SymError::NonMonomialLogSubstitution("negative-power"))?;
                    Poly::mono(m.inv()?).pow((-p) as u32)?
                };
                factor = factor.mul(&vp)?;
            }
            if l != 0 {
                let m = value
                    .as_single_mono()
                    .ok_or(SymError::NonMonomialLogSubstitution("ln"))?;
                let lnv = Poly::ln_of_monomial(&m)?;
                let lp = if l > 0 {
                    lnv.pow(l as u32)?
                } else {
                    let lm = lnv
                        .as_single_mono()
                        .ok_or(SymError::NonMonomialLogSubstitution("ln"))?;
                    Poly::mono(lm.inv()?).pow((-l) as u32)?
                };
                factor = factor.mul(&lp)?;
            }
            acc = acc.add(&factor);
        }
        Ok(acc)
    }

    pub fn eval(&self, env: &Env) -> Result<f64, SymError> {
        let mut acc = 0.0;
        for t in &self.terms {
            acc += t.eval(env)?;
        }
        if acc.is_finite() {
            Ok(acc)
        } else {
            Err(SymError::NonFiniteValue)
        }
    }

    /// d/dn, for polynomials over `n` (and constants).
    /// `d/dn [c n^a ln^b n] = c a n^(a-1) ln^b n + c b n^(a-1) ln^(b-1) n`.
    pub fn derivative_n(&self) -> Result<Poly, SymError> {
        let mut terms = Vec::new();
        for t in &self.terms {
            if !t.only(Sym::N) {
                return Err(SymError::MixedSymbols(Sym::N));
            }
            let (a, b) = t.exp(Sym::N);
            if a != 0 {
                terms.push(Mono {
                    coeff: t.coeff * a as f64,
                    exps: Mono::sym(Sym::N, a - 1, b).exps,
                });
            }
            if b != 0 {
                terms.push(Mono {
                    coeff: t.coeff * b as f64,
                    exps: Mono::sym(Sym::N, a - 1, b - 1).exps,
                });
            }
        }
        Ok(Poly::from_terms(terms))
    }

    /// Term with lexicographically largest `(power, ln_power)` on `sym`.
    /// The polynomial must mention no other symbol.
    pub fn leading_monomial(&self, sym: Sym) -> Result<Mono, SymError> {
        if self.is_zero() {
            return Err(SymError::ZeroPolynomial);
        }
        if !self.only(sym) {
            return Err(SymError::MixedSymbols(sym));
        }
        Ok(*self
            .terms
            .iter()
            .max_by(|a, b| a.exp(sym).cmp(&b.exp(sym)))
            .expect("nonempty"))
    }

    /// Limit as `sym -> +infinity` for a polynomial over `sym` only.
    pub fn limit_at_infinity(&self, sym: Sym) -> Result<LimitValue, SymError> {
        if self.is_zero() {
            return Ok(LimitValue::Finite(0.0));
        }
        let lead = self.leading_monomial(sym)?;
        if lead.exp(sym) > (0, 0) {
            if lead.coeff > 0.0 {
                Ok(LimitValue::PlusInfinity)
            } else {
                Ok(LimitValue::MinusInfinity)
            }
        } else {
            Ok(LimitValue::Finite(self.constant_part()))
        }
    }
}

/// A two-sided limit value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LimitValue {
    PlusInfinity,
    MinusInfinity,
    Finite(f64),
}

impl LimitValue {
    /// `exp` of the limit, with `exp(-inf) = 0`.
    pub fn exp_value(&self) -> f64 {
        match self {
            LimitValue::PlusInfinity => f64::INFINITY,
            LimitValue::MinusInfinity => 0.0,
            LimitValue::Finite(c) => c.exp(),
        }
    }
}

/// Result of `negative_lb`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NegBound {
    /// `p(n) <= 0` for every real `n >= T`.
    Threshold(u64),
    /// No such threshold is certified (leading coefficient >= 0).
    Infinity,
}

/// Smallest certified `T` with `p(n) <= 0` for all real `n >= T`, or
/// `Infinity` when the leading monomial has non-negative coefficient.
///
/// Steps: divide by the leading monomial, keep only non-negative-coefficient
/// residual terms, start the integer scan past every turning point, and stop
/// at the first strictly negative value of the majorant.
pub fn negative_lb(p: &Poly) -> Result<NegBound, SymError> {
    if !p.only(Sym::N) {
        return Err(SymError::MixedSymbols(Sym::N));
    }
    if p.is_zero() {
        return Ok(NegBound::Threshold(2));
    }
    if p.is_constant() {
        return if p.constant_part() <= 0.0 {
            Ok(NegBound::Threshold(2))
        } else {
            Ok(NegBound::Infinity)
        };
    }
    let lead = p.leading_monomial(Sym::N)?;
    if lead.coeff >= 0.0 {
        return Ok(NegBound::Infinity);
    }
    // P1 = p / (n^a* ln^b* n); its constant term is lead.coeff < 0.
    let divisor = Mono::sym(Sym::N, lead.exp(Sym::N).0, lead.exp(Sym::N).1);
    let p1 = p.mul_mono(&divisor.inv()?)?;
    // P2 keeps the constant and the positive-coefficient residual terms.
    let mut kept = Vec::new();
    for t in p1.terms() {
        if t.is_constant() || t.coeff > 0.0 {
            kept.push(*t);
        }
    }
    let p2 = Poly::from_terms(kept);
    // Turning points of the kept decreasing-tail terms.
    let mut n_e: u64 = 2;
    for t in p2.terms() {
        let (a, b) = t.exp(Sym::N);
        if a < 0 && b > 0 {
            let turn = (-(b as f64) / a as f64).exp().ceil();
            if turn.is_finite() && turn > n_e as f64 {
                n_e = turn as u64;
            }
        }
    }
    // P2 is non-increasing past n_e, so scan linearly for a while and then
    // switch to doubling plus bisection for the first negative value.
    let neg_at = |n: u64| -> Result<bool, SymError> { Ok(p2.eval(&Env::n(n as f64))? < 0.0) };
    let linear_cap = n_e + 100_000;
    let mut n = n_e;
    while n <= linear_cap {
        if neg_at(n)? {
            return Ok(NegBound::Threshold(n));
        }
        n += 1;
    }
    let mut hi = linear_cap;
    loop {
        hi = hi.saturating_mul(2);
        if hi > SCAN_CAP.saturating_mul(SCAN_CAP) {
            return Err(SymError::ScanCapExceeded);
        }
        if neg_at(hi)? {
            break;
        }
    }
    let mut lo = linear_cap; // p2(lo) >= 0 here
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if neg_at(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(NegBound::Threshold(hi))
}

/// Monotonicity of a positive-coefficient pseudo-monomial `n^a ln^b n`
/// on `[max(c_p, 1), infinity)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MonoClass {
    Constant,
    NonDecreasing,
    NonIncreasing,
    /// Increasing up to `turn = exp(-b/a)`, then decreasing.
    UpThenDown(f64),
    /// Decreasing down to `turn = exp(-b/a)`, then increasing.
    DownThenUp(f64),
}

pub fn monotonicity_class(m: &Mono) -> MonoClass {
    let (a, b) = m.exp(Sym::N);
    match (a.signum(), b.signum()) {
        (0, 0) => MonoClass::Constant,
        (0, -1) => MonoClass::NonIncreasing,
        (0, 1) => MonoClass::NonDecreasing,
        (1, 0) | (1, 1) => MonoClass::NonDecreasing,
        (-1, 0) | (-1, -1) => MonoClass::NonIncreasing,
        (-1, 1) => MonoClass::UpThenDown((-(b as f64) / a as f64).exp()),
        (1, -1) => MonoClass::DownThenUp((-(b as f64) / a as f64).exp()),
        _ => unreachable!(),
    }
}

/// Supremum of a pseudo-monomial `n^a ln^b n` over real `n >= lo` (`lo >= 2`),
/// for signatures with a finite supremum (lex-nonpositive signature).
/// Returns `None` when the monomial is unbounded above.
pub fn sup_over_n(m: &Mono, lo: f64) -> Option<f64> {
    let (a, b) = m.exp(Sym::N);
    if (a, b) > (0, 0) {
        return None;
    }
    if (a, b) == (0, 0) {
        return Some(1.0);
    }
    let at = |x: f64| x.powi(a) * x.ln().powi(b);
    match monotonicity_class(&Mono {
        coeff: 1.0,
        exps: Mono::sym(Sym::N, a, b).exps,
    }) {
        MonoClass::NonIncreasing => Some(at(lo)),
        MonoClass::UpThenDown(turn) => Some(at(turn.max(lo))),
        // a > 0 or (a == 0, b > 0) were excluded above.
        _ => Some(at(lo)),
    }
}

// ---------------------------------------------------------------------------
// Expression text parser (shared syntax with the .prr expression grammar)
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq)]
#[error("expression error at byte {pos}: {msg}")]
pub struct ExprError {
    pub pos: usize,
    pub msg: String,
}

struct ExprParser<'a> {
    src: &'a [u8],
    pos: usize,
    /// When false, references to `v` are rejected.
    allow_v: bool,
}

impl<'a> ExprParser<'a> {
    fn new(src: &'a str, allow_v: bool) -> Self {
        ExprParser {
            src: src.as_bytes(),
            pos: 0,
            allow_v,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected '{}'", c as char))
        }
    }

    fn ident(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        if self.pos > start {
            Some(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
        } else {
            None
        }
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // Scientific notation for reference data like 1.92e-1 is not needed;
        // plain integers and decimals only.
        if self.pos == start {
            return self.err("expected a number");
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map_err(|e| ExprError {
            pos: start,
            msg: e.to_string(),
        })
    }

    fn int(&mut self) -> Result<i32, ExprError> {
        self.skip_ws();
        let neg = self.eat(b'-');
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return self.err("expected an integer");
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let k: i32 = text.parse().map_err(|_| ExprError {
            pos: start,
            msg: "bad integer".into(),
        })?;
        Ok(if neg { -k } else { k })
    }

    fn expr(&mut self) -> Result<Poly, ExprError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.bump();
                    acc = acc.add(&self.term()?);
                }
                Some(b'-') => {
                    self.bump();
                    acc = acc.sub(&self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Poly, ExprError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.bump();
                    let rhs = self.factor()?;
                    acc = acc.mul(&rhs).map_err(|e| ExprError {
                        pos: self.pos,
                        msg: e.to_string(),
                    })?;
                }
                Some(b'/') => {
                    self.bump();
                    let rhs = self.factor()?;
                    let m = rhs.as_single_mono().ok_or(ExprError {
                        pos: self.pos,
                        msg: "division by a non-monomial".into(),
                    })?;
                    let inv = m.inv().map_err(|e| ExprError {
                        pos: self.pos,
                        msg: e.to_string(),
                    })?;
                    acc = acc.mul_mono(&inv).map_err(|e| ExprError {
                        pos: self.pos,
                        msg: e.to_string(),
                    })?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Poly, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.bump();
            let k = self.int()?;
            if k.abs() > MAX_EXP {
                return self.err("exponent overflow");
            }
            if k >= 0 {
                return base.pow(k as u32).map_err(|e| ExprError {
                    pos: self.pos,
                    msg: e.to_string(),
                });
            }
            let m = base.as_single_mono().ok_or(ExprError {
                pos: self.pos,
                msg: "negative power of a non-monomial".into(),
            })?;
            let inv = m.inv().map_err(|e| ExprError {
                pos: self.pos,
                msg: e.to_string(),
            })?;
            return Poly::mono(inv).pow((-k) as u32).map_err(|e| ExprError {
                pos: self.pos,
                msg: e.to_string(),
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Poly, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.bump();
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(b'-') => {
                self.bump();
                Ok(self.factor()?.neg())
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Poly::constant(self.number()?)),
            _ => {
                let pos = self.pos;
                let id = match self.ident() {
                    Some(id) => id,
                    None => return self.err("expected an atom"),
                };
                match id.as_str() {
                    "n" => Ok(Poly::sym(Sym::N)),
                    "alpha" => Ok(Poly::sym(Sym::Alpha)),
                    "v" if self.allow_v => Ok(Poly::sym(Sym::V)),
                    "e" => Ok(Poly::constant(std::f64::consts::E)),
                    "ln" => {
                        self.expect(b'(')?;
                        let inner = self.expr()?;
                        self.expect(b')')?;
                        let m = inner.as_single_mono().ok_or(ExprError {
                            pos,
                            msg: "ln of a non-monomial".into(),
                        })?;
                        Poly::ln_of_monomial(&m).map_err(|e| ExprError {
                            pos,
                            msg: e.to_string(),
                        })
                    }
                    other => Err(ExprError {
                        pos,
                        msg: format!("unknown identifier '{other}'"),
                    }),
                }
            }
        }
    }
}

/// Parse a pseudo-polynomial over `alpha` and `n`.
pub fn parse_poly(src: &str) -> Result<Poly, ExprError> {
    let mut p = ExprParser::new(src, false);
    let poly = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(ExprError {
            pos: p.pos,
            msg: "trailing input".into(),
        });
    }
    Ok(poly)
}

/// Parse a pseudo-polynomial that may also mention `v`.
pub fn parse_poly_nv(src: &str) -> Result<Poly, ExprError> {
    let mut p = ExprParser::new(src, true);
    let poly = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(ExprError {
            pos: p.pos,
            msg: "trailing input".into(),
        });
    }
    Ok(poly)
}

/// Parse `exp(<poly>)`; a bare polynomial is also accepted as the exponent of
/// an already-stripped bound expression.
pub fn parse_exp_bound(src: &str) -> Result<Poly, ExprError> {
    let s = src.trim();
    if let Some(rest) = s.strip_prefix("exp(") {
        let inner = rest.strip_suffix(')').ok_or(ExprError {
            pos: s.len(),
            msg: "missing ')'".into(),
        })?;
        parse_poly(inner)
    } else {
        parse_poly(s)
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

fn fmt_coeff(c: f64) -> String {
    if (c - c.round()).abs() < 1e-9 && c.abs() < 1e15 {
        format!("{}", c.round() as i64)
    } else {
        format!("{c}")
    }
}

fn fmt_mono_factors(m: &Mono) -> String {
    let mut parts = Vec::new();
    for &s in &Sym::ALL {
        let (p, l) = m.exp(s);
        if p == 1 {
            parts.push(s.name().to_string());
        } else if p != 0 {
            parts.push(format!("{}^{}", s.name(), p));
        }
        if l == 1 {
            parts.push(format!("ln({})", s.name()));
        } else if l != 0 {
            parts.push(format!("ln({})^{}", s.name(), l));
        }
    }
    parts.join("*")
}

impl fmt::Display for Poly {
    /// Canonical rendering: positive terms first, then negative, each group
    /// ordered by descending exponent signature; e.g. `2*alpha - alpha*ln(alpha)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut terms: Vec<&Mono> = self.terms.iter().collect();
        terms.sort_by(|a, b| {
            let sa = a.coeff < 0.0;
            let sb = b.coeff < 0.0;
            sa.cmp(&sb).then_with(|| sig_cmp(&b.sig(), &a.sig()))
        });
        for (i, t) in terms.iter().enumerate() {
            let mag = t.coeff.abs();
            let neg = t.coeff < 0.0;
            if i == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let factors = fmt_mono_factors(t);
            if factors.is_empty() {
                write!(f, "{}", fmt_coeff(mag))?;
            } else if (mag - 1.0).abs() < 1e-12 {
                write!(f, "{factors}")?;
            } else {
                write!(f, "{}*{}", fmt_coeff(mag), factors)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Poly {
        parse_poly_nv(s).unwrap()
    }

    #[test]
    fn add_inverse_is_zero() {
        assert!(p("n").sub(&p("n")).is_zero());
    }

    #[test]
    fn mul_cancels_exponents() {
        // ln(alpha) * n^-1 * n = ln(alpha)
        let prod = p("ln(alpha)*n^-1").mul(&p("n")).unwrap();
        assert_eq!(prod, p("ln(alpha)"));
    }

    #[test]
    fn mul_quickselect_exponent() {
        // (2 alpha / ln alpha * n) * (ln alpha * n^-1) = 2 alpha
        let f = p("2*alpha*ln(alpha)^-1*n");
        let t = p("ln(alpha)*n^-1");
        assert_eq!(f.mul(&t).unwrap(), p("2*alpha"));
    }

    #[test]
    fn substitute_expands_binomial() {
        let v2 = p("v^2");
        let got = v2.substitute(Sym::V, &p("n-1")).unwrap();
        assert_eq!(got, p("n^2-2*n+1"));
    }

    #[test]
    fn substitute_ln_monomial() {
        let lnv = p("ln(v)");
        assert_eq!(lnv.substitute(Sym::V, &p("n")).unwrap(), p("ln(n)"));
        let err = lnv.substitute(Sym::V, &p("n-1")).unwrap_err();
        assert!(matches!(err, SymError::NonMonomialLogSubstitution(_)));
    }

    #[test]
    fn eval_matches_published_concrete_value() {
        // 2 alpha - alpha ln alpha at alpha = 10: exp of it is 0.0485...
        let e = p("2*alpha-alpha*ln(alpha)");
        let x = e.eval(&Env::new().with(Sym::Alpha, 10.0)).unwrap();
        assert!((x.exp() - 0.0485).abs() < 5e-4, "{}", x.exp());
        assert!((x + 3.02585).abs() < 1e-4);
    }

    #[test]
    fn eval_ln_one_is_zero() {
        assert_eq!(p("n*ln(n)").eval(&Env::n(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn eval_quicksort_concrete_exponent() {
        // (4 - alpha) ln n at alpha=12, n=17
        let e = p("(4-alpha)*ln(n)");
        let x = e.eval(&Env::alpha_n(12.0, 17.0)).unwrap();
        assert!((x + 22.66).abs() < 0.01, "{x}");
        assert!((x.exp() - 1.43e-10).abs() < 0.02e-10);
    }

    #[test]
    fn eval_unbound_symbol_errors() {
        assert!(matches!(
            p("alpha").eval(&Env::n(3.0)),
            Err(SymError::UnboundSymbol(Sym::Alpha))
        ));
    }

    #[test]
    fn derivative_product_rule() {
        assert_eq!(p("n*ln(n)").derivative_n().unwrap(), p("ln(n)+1"));
        assert!(p("7").derivative_n().unwrap().is_zero());
        assert_eq!(p("n^2*ln(n)").derivative_n().unwrap(), p("2*n*ln(n)+n"));
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let poly = p("n^2*ln(n)");
        let d = poly.derivative_n().unwrap();
        let n0 = 50.0;
        let h = 1e-4 * n0;
        let fd =
            (poly.eval(&Env::n(n0 + h)).unwrap() - poly.eval(&Env::n(n0 - h)).unwrap()) / (2.0 * h);
        let exact = d.eval(&Env::n(n0)).unwrap();
        assert!((fd - exact).abs() / exact.abs() < 1e-6);
    }

    #[test]
    fn leading_monomial_lexicographic() {
        let lead = p("-n+10").leading_monomial(Sym::N).unwrap();
        assert_eq!((lead.coeff, lead.exp(Sym::N)), (-1.0, (1, 0)));
        let lead = p("ln(alpha)-2*alpha").leading_monomial(Sym::Alpha).unwrap();
        assert_eq!((lead.coeff, lead.exp(Sym::Alpha)), (-2.0, (1, 0)));
        // lexicographic: (1,1) > (0,2)
        let lead = p("3*ln(n)^2+n*ln(n)").leading_monomial(Sym::N).unwrap();
        assert_eq!(lead.exp(Sym::N), (1, 1));
    }

    #[test]
    fn limits() {
        assert_eq!(
            p("ln(alpha)-2*alpha")
                .limit_at_infinity(Sym::Alpha)
                .unwrap(),
            LimitValue::MinusInfinity
        );
        assert_eq!(
            p("2-alpha^-1").limit_at_infinity(Sym::Alpha).unwrap(),
            LimitValue::Finite(2.0)
        );
        assert_eq!(
            Poly::zero().limit_at_infinity(Sym::Alpha).unwrap(),
            LimitValue::Finite(0.0)
        );
    }

    #[test]
    fn negative_lb_basics() {
        assert_eq!(negative_lb(&p("-1")).unwrap(), NegBound::Threshold(2));
        assert_eq!(negative_lb(&p("1")).unwrap(), NegBound::Infinity);
        assert_eq!(negative_lb(&p("-n+10")).unwrap(), NegBound::Threshold(11));
    }

    #[test]
    fn negative_lb_brute_force_spot_check() {
        let poly = p("-n+10");
        if let NegBound::Threshold(t) = negative_lb(&poly).unwrap() {
            for n in t..t + 1000 {
                assert!(poly.eval(&Env::n(n as f64)).unwrap() <= 0.0);
            }
        } else {
            panic!("expected threshold");
        }
    }

    #[test]
    fn monotonicity_table() {
        let m = |s: &str| p(s).as_single_mono().unwrap();
        assert_eq!(monotonicity_class(&m("n^2")), MonoClass::NonDecreasing);
        assert_eq!(monotonicity_class(&m("5")), MonoClass::Constant);
        match monotonicity_class(&m("n^-1*ln(n)")) {
            MonoClass::UpThenDown(t) => assert!((t - std::f64::consts::E).abs() < 1e-12),
            c => panic!("unexpected class {c:?}"),
        }
    }

    #[test]
    fn printing_is_canonical() {
        assert_eq!(
            p("2*alpha*ln(alpha)^-1*n").to_string(),
            "2*alpha*ln(alpha)^-1*n"
        );
        assert_eq!(
            p("2*alpha - alpha*ln(alpha)").to_string(),
            "2*alpha - alpha*ln(alpha)"
        );
        assert_eq!(Poly::zero().to_string(), "0");
        assert_eq!(p("(4-alpha)*ln(n)").to_string(), "4*ln(n) - alpha*ln(n)");
    }

    #[test]
    fn parse_rejects_garbage_with_position() {
        let err = parse_poly("2*alpha + @").unwrap_err();
        assert!(err.pos > 0);
    }
}
