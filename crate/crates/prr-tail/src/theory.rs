//! Numeric expected-runtime oracle and the closed-form concentration bound.
//!
//! `solve_expected_runtime` solves E[p(n)] exactly (up to floating point) by
//! dynamic programming over the Markov-chain semantics, treating self-loop
//! branches as one-step linear equations. On top of it sit the
//! difference-boundedness estimator for condition (A1) and the closed-form
//! tail bound exp(-2(a-1)^2/(a (M2-M1)^2) * E[p(n*)]/E[S(n*)]).

use crate::canonicalizer::CanonicalPrr;
use crate::lrec::{CallForm, Dist};
use crate::sympoly::{Env, Mono, Poly, SymError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("self-loop probability reaches 1 at n={0}; recurrence diverges")]
    DivergentRecurrence(i64),
    #[error("distribution has empty support at n={0}")]
    EmptySupport(i64),
    #[error("discrete value {value} at n={n} is not an integer")]
    NonIntegerValue { n: i64, value: f64 },
    #[error("passed size {size} exceeds n={n}")]
    SizeAboveN { n: i64, size: i64 },
    #[error(transparent)]
    Sym(#[from] SymError),
    #[error("expected-runtime table does not cover n={0}")]
    OutOfRange(i64),
    #[error("M_hi must exceed M_lo")]
    DegenerateInterval,
}

/// Enumerate the support of a distribution at concrete size `n` as
/// `(mass, v)` pairs. Masses sum to 1.
pub fn dist_support(dist: &Dist, n: i64) -> Result<Vec<(f64, i64)>, TheoryError> {
    match dist {
        Dist::Uniform => {
            if n < 1 {
                return Err(TheoryError::EmptySupport(n));
            }
            let m = 1.0 / n as f64;
            Ok((0..n).map(|v| (m, v)).collect())
        }
        Dist::MUniform => {
            if n < 1 {
                return Err(TheoryError::EmptySupport(n));
            }
            let m = 1.0 / n as f64;
            let mut acc: std::collections::BTreeMap<i64, f64> = Default::default();
            for i in 0..n {
                let v = i.max(n - 1 - i);
                *acc.entry(v).or_insert(0.0) += m;
            }
            Ok(acc.into_iter().map(|(v, m)| (m, v)).collect())
        }
        Dist::Discrete(arms) => {
            let env = Env::n(n as f64);
            let mut out = Vec::with_capacity(arms.len());
            for (p, value) in arms {
                let x = value.eval(&env)?;
                if (x - x.round()).abs() > 1e-9 {
                    return Err(TheoryError::NonIntegerValue { n, value: x });
                }
                out.push((p.value, x.round() as i64));
            }
            Ok(out)
        }
        Dist::PiecewiseUniform(pieces) => {
            let env = Env::n(n as f64);
            let mut out = Vec::new();
            for piece in pieces {
                let lo = piece.lo.eval(&env)?;
                let hi = piece.hi.eval(&env)?;
                let lo = lo.ceil() as i64;
                let hi = hi.floor() as i64;
                if hi < lo {
                    continue;
                }
                let m = piece.weight.value / (hi - lo + 1) as f64;
                for v in lo..=hi {
                    out.push((m, v));
                }
            }
            if out.is_empty() {
                return Err(TheoryError::EmptySupport(n));
            }
            Ok(out)
        }
    }
}

/// Sizes passed to the recursive calls for a drawn `v`.
pub fn call_sizes(call: &CallForm, n: i64, v: i64) -> Vec<i64> {
    match call {
        CallForm::SingleV => vec![v],
        CallForm::SingleSizeMinusV(sb) => vec![sb.eval(n) - v],
        CallForm::DivideAndConquer(sb) => vec![v, sb.eval(n) - v],
    }
}

/// Exact expected-runtime table E[p(n)] for n in [0, n_max].
#[derive(Debug, Clone)]
pub struct ExpectedRuntime {
    pub c_p: u32,
    pub values: Vec<f64>,
}

impl ExpectedRuntime {
    pub fn at(&self, n: i64) -> Result<f64, TheoryError> {
        if n < self.c_p as i64 {
            return Ok(0.0);
        }
        self.values
            .get(n as usize)
            .copied()
            .ok_or(TheoryError::OutOfRange(n))
    }
}

/// Solve E[p(n)] = sum_b prob_b (S_b(n) + sum_calls E_v[E[p(size)]]) bottom-up,
/// resolving `size == n` self-loops as a linear equation in E[p(n)].
pub fn solve_expected_runtime(
    prr: &CanonicalPrr,
    n_max: u32,
) -> Result<ExpectedRuntime, TheoryError> {
    let c_p = prr.c_p as i64;
    let mut values = vec![0.0f64; n_max as usize + 1];
    for n in c_p..=n_max as i64 {
        let mut konst = 0.0;
        let mut self_coef = 0.0;
        for b in &prr.branches {
            konst += b.prob * b.pre.eval(&Env::n(n as f64))?;
            for (mass, v) in dist_support(&b.dist, n)? {
                for size in call_sizes(&b.call, n, v) {
                    if size > n {
                        return Err(TheoryError::SizeAboveN { n, size });
                    }
                    if size == n {
                        self_coef += b.prob * mass;
                    } else if size >= c_p {
                        konst += b.prob * mass * values[size as usize];
                    }
                }
            }
        }
        if self_coef > 1.0 - 1e-9 {
            return Err(TheoryError::DivergentRecurrence(n));
        }
        values[n as usize] = konst / (1.0 - self_coef);
    }
    Ok(ExpectedRuntime {
        c_p: prr.c_p,
        values,
    })
}

/// Expected preprocessing time of the branch mixture at `n`.
pub fn expected_pre(prr: &CanonicalPrr, n: i64) -> Result<f64, TheoryError> {
    let mut acc = 0.0;
    for b in &prr.branches {
        acc += b.prob * b.pre.eval(&Env::n(n as f64))?;
    }
    Ok(acc)
}

/// Condition (A2): E[S(n)] non-decreasing on [c_p, hi].
pub fn expected_pre_nondecreasing(prr: &CanonicalPrr, hi: u32) -> Result<bool, TheoryError> {
    let mut prev = f64::NEG_INFINITY;
    for n in prr.c_p as i64..=hi as i64 {
        let cur = expected_pre(prr, n)?;
        if cur < prev - 1e-9 {
            return Ok(false);
        }
        prev = cur;
    }
    Ok(true)
}

/// Estimate the (A1) difference-boundedness constants over `n` in
/// `[lo, hi]`: min and max of
/// `(V + sum_i E[p(s_i)] - E[p(n)]) / E[S(n)]`
/// over every branch and every `v` in its support.
pub fn estimate_a1_constants(
    prr: &CanonicalPrr,
    ep: &ExpectedRuntime,
    lo: u32,
    hi: u32,
) -> Result<(f64, f64), TheoryError> {
    let mut m_lo = f64::INFINITY;
    let mut m_hi = f64::NEG_INFINITY;
    let mut seen = false;
    for n in lo.max(prr.c_p) as i64..=hi as i64 {
        let es = expected_pre(prr, n)?;
        if es <= 0.0 {
            continue;
        }
        for b in &prr.branches {
            let v_cost = b.pre.eval(&Env::n(n as f64))?;
            for (mass, v) in dist_support(&b.dist, n)? {
                if mass <= 0.0 {
                    continue;
                }
                let mut diff = v_cost - ep.at(n)?;
                for size in call_sizes(&b.call, n, v) {
                    diff += ep.at(size.min(n))?;
                }
                let x = diff / es;
                m_lo = m_lo.min(x);
                m_hi = m_hi.max(x);
                seen = true;
            }
        }
    }
    if !seen {
        return Err(TheoryError::EmptySupport(lo as i64));
    }
    Ok((m_lo, m_hi))
}

/// Closed-form concentration bound
/// `Pr[C >= alpha E[p(n*)]] <= exp(-coef * (alpha-1)^2/alpha * shape(n*))`
/// where `coef * shape(n)` is the simplified `2/(M_hi-M_lo)^2 * E[p]/E[S]`.
#[derive(Debug, Clone)]
pub struct CompBound {
    pub coef: f64,
    /// Monomial shape over n with coefficient 1 (ratio E[p]/E[S] modulo coef).
    pub shape: Mono,
    pub m_lo: f64,
    pub m_hi: f64,
}

impl CompBound {
    pub fn exponent_at(&self, alpha: f64, n: f64) -> Result<f64, TheoryError> {
        let shape = Poly::mono(self.shape).eval(&Env::n(n))?;
        Ok(-self.coef * (alpha - 1.0).powi(2) / alpha * shape)
    }

    pub fn eval(&self, alpha: f64, n: f64) -> Result<f64, TheoryError> {
        Ok(self.exponent_at(alpha, n)?.exp())
    }

    /// `w(alpha) = 2 alpha / (1 + alpha)` (the headline choice in the theorem).
    pub fn w_at(&self, alpha: f64) -> f64 {
        2.0 * alpha / (1.0 + alpha)
    }

    /// `lambda(alpha) = 8 (w - 1) / (w^2 (M_hi - M_lo)^2)`.
    pub fn lambda_at(&self, alpha: f64) -> f64 {
        let w = self.w_at(alpha);
        8.0 * (w - 1.0) / (w * w * (self.m_hi - self.m_lo).powi(2))
    }
}

impl std::fmt::Display for CompBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let shape = Poly::mono(self.shape);
        if self.shape.is_constant() {
            write!(
                f,
                "exp(-{}*(alpha-1)^2/alpha)",
                crate::sympoly_fmt(self.coef)
            )
        } else {
            write!(
                f,
                "exp(-{}*(alpha-1)^2/alpha*{})",
                crate::sympoly_fmt(self.coef),
                shape
            )
        }
    }
}

/// Build the Theorem-3 bound from symbolic E[p], E[S] and the (A1) constants.
/// The ratio E[p]/E[S] must simplify to a single pseudo-monomial.
pub fn comp_tail_bound(
    ep_sym: &Poly,
    es_sym: &Poly,
    m_lo: f64,
    m_hi: f64,
) -> Result<CompBound, TheoryError> {
    if m_hi <= m_lo {
        return Err(TheoryError::DegenerateInterval);
    }
    let es = es_sym
        .as_single_mono()
        .ok_or(SymError::NonMonomialDivisor)?;
    let ratio = ep_sym.mul_mono(&es.inv()?)?;
    let ratio = ratio.as_single_mono().ok_or(SymError::NonMonomialDivisor)?;
    let coef = 2.0 / (m_hi - m_lo).powi(2) * ratio.coeff;
    let mut shape = ratio;
    shape.coeff = 1.0;
    Ok(CompBound {
        coef,
        shape,
        m_lo,
        m_hi,
    })
}
