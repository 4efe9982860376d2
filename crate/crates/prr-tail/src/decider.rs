//! Decision procedure for canonical constraints:
//! does `sum_i gamma_i exp(f_i(alpha) + g_i(n)) <= 1` hold for every
//! `n >= c_p` and all sufficiently large `alpha`?
//!
//! Step 1 bounds the n-range: any `g_i` diverging to +infinity refutes the
//! constraint; otherwise every `g_i` is eventually non-increasing past the
//! `NegativeLB` threshold of its derivative, so only `n` in `[c_p, T_n]`
//! needs scanning. Step 2 takes per-term limits in `alpha` at each scanned
//! `n`, with a boundary rule for limits summing to exactly 1 and a numeric
//! guard grid that pins down "sufficiently large" at `alpha >= 64`.

use crate::strengthener::CanonicalConstraint;
use crate::sympoly::{negative_lb, Env, LimitValue, NegBound, Poly, Sym, SymError};
use serde::Serialize;
use thiserror::Error;

/// Strict-inequality slack for floating-point comparisons against 1.
pub const EPS_DECIDE: f64 = 1e-9;

/// Numeric guard grid: alpha = 2^6, 2^7, ..., 2^30. Accepted constraints are
/// additionally required to hold on this grid, so that "sufficiently large
/// alpha" concretely means alpha >= 64.
fn guard_grid() -> impl Iterator<Item = f64> {
    (6..=30).map(|k| (1u64 << k) as f64)
}

#[derive(Debug, Error)]
pub enum DecideError {
    #[error(transparent)]
    Sym(#[from] SymError),
}

#[derive(Debug, Clone, Serialize)]
pub struct DecideReport {
    pub verdict: bool,
    /// Largest n that had to be scanned.
    pub t_n: u64,
    /// Per-n limit of the left-hand side as alpha tends to infinity
    /// (infinite limits reported as f64::INFINITY).
    pub per_n_limits: Vec<(u64, f64)>,
    /// On rejection: the scanned n and offending term index, when one exists.
    pub failure_witness: Option<(u64, usize)>,
}

impl DecideReport {
    fn reject(t_n: u64, per_n_limits: Vec<(u64, f64)>, witness: Option<(u64, usize)>) -> Self {
        DecideReport {
            verdict: false,
            t_n,
            per_n_limits,
            failure_witness: witness,
        }
    }
}

/// Can `exp(h)` exceed `exp(lim h)` for large alpha? A term is
/// "below-or-at its limit" when its nonconstant part has only non-positive
/// coefficients (then `h(alpha) <= const` for all `alpha >= 1`).
fn approaches_from_below(h: &Poly) -> bool {
    h.nonconstant_part().terms().iter().all(|m| m.coeff <= 0.0)
}

/// Decide a canonical constraint.
pub fn decide(q: &CanonicalConstraint) -> Result<DecideReport, DecideError> {
    let c_p = q.c_p.max(1) as u64;
    // Step 1: bound the n-range.
    let mut t_n = c_p;
    for (i, term) in q.terms.iter().enumerate() {
        if term.g_n.is_constant() {
            continue;
        }
        match term.g_n.limit_at_infinity(Sym::N)? {
            LimitValue::PlusInfinity => {
                return Ok(DecideReport::reject(t_n, Vec::new(), Some((0, i))));
            }
            _ => {
                let dg = term.g_n.derivative_n()?;
                match negative_lb(&dg)? {
                    NegBound::Threshold(t) => t_n = t_n.max(t),
                    NegBound::Infinity => {
                        // g grows somewhere arbitrarily far out; cannot bound
                        // the scan, reject for soundness.
                        return Ok(DecideReport::reject(t_n, Vec::new(), Some((0, i))));
                    }
                }
            }
        }
    }
    // Step 2: per-n limits in alpha. Exact boundary rows are checked with
    // the same machinery as the symbolic terms; the scan always reaches
    // `exact_until` so the symbolic region gets at least one level.
    let scan_hi = t_n.max(q.exact_until as u64);
    let mut per_n = Vec::new();
    for n_bar in c_p..=scan_hi {
        let pairs: Vec<(f64, Poly)> = if n_bar < q.exact_until as u64 {
            q.exact_rows[(n_bar - c_p) as usize].clone()
        } else {
            let env_n = Env::n(n_bar as f64);
            let mut out = Vec::with_capacity(q.terms.len());
            for term in &q.terms {
                let g_val = term.g_n.eval(&env_n)?;
                out.push((term.gamma, term.f_alpha.add(&Poly::constant(g_val))));
            }
            out
        };
        let mut r = 0.0f64;
        let mut all_below = true;
        for (i, (gamma, h)) in pairs.iter().enumerate() {
            let lim = h.limit_at_infinity(Sym::Alpha)?;
            match lim {
                LimitValue::PlusInfinity => {
                    per_n.push((n_bar, f64::INFINITY));
                    return Ok(DecideReport::reject(t_n, per_n, Some((n_bar, i))));
                }
                LimitValue::MinusInfinity => {
                    // Contributes 0 in the limit but stays positive at every
                    // finite alpha: blocks boundary acceptance.
                    all_below = false;
                }
                LimitValue::Finite(_) => {
                    if !approaches_from_below(h) {
                        all_below = false;
                    }
                }
            }
            r += gamma * lim.exp_value();
        }
        per_n.push((n_bar, r));
        let boundary_ok = r <= 1.0 + EPS_DECIDE && all_below;
        if !(r < 1.0 - EPS_DECIDE || boundary_ok) {
            return Ok(DecideReport::reject(t_n, per_n, None));
        }
        // Numeric guard: the constraint must already hold from alpha = 64 on.
        for alpha in guard_grid() {
            let mut val = 0.0;
            for (gamma, h) in &pairs {
                val += gamma * h.eval(&Env::new().with(Sym::Alpha, alpha))?.exp();
            }
            if val > 1.0 + EPS_DECIDE {
                return Ok(DecideReport::reject(t_n, per_n, None));
            }
        }
    }
    Ok(DecideReport {
        verdict: true,
        t_n,
        per_n_limits: per_n,
        failure_witness: None,
    })
}
