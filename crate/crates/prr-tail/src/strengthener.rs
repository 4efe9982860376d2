//! Rewrites the martingale constraint for concrete template instances
//! `(f_bar, t_bar)` into a canonical constraint
//! `sum_i gamma_i * exp(f_i(alpha) + g_i(n)) <= 1`
//! with positive weights, separable exponents and non-negative `n` powers.
//!
//! Discrete branches go through the substitute-then-bound strategy (S2-D)
//! with the fallback that cancels the recursive term outright (S1-D).
//! Uniform branches bound the expectation by an integral of
//! `exp(t_bar * f_bar(alpha, v))` with three exactly-solvable base cases.
//! Divide-and-conquer branches split the summation into Q equal slabs and
//! bound each slab by an endpoint value of the (unimodal) integrand.

use crate::canonicalizer::{Branch, CanonicalPrr};
use crate::lrec::{CallForm, Dist, SizeBase};
use crate::sympoly::{sup_over_n, Env, Mono, Poly, Sym, SymError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StrengthenError {
    #[error("strengthening failed: {0}")]
    Failure(String),
    #[error("integral base case requires a positive leading coefficient in W")]
    NonPositiveW,
    #[error(transparent)]
    Sym(#[from] SymError),
}

/// One canonical-constraint term `gamma * exp(f_alpha(alpha) + g_n(n))`.
#[derive(Debug, Clone)]
pub struct Term {
    pub gamma: f64,
    pub f_alpha: Poly,
    pub g_n: Poly,
}

/// `sum_i gamma_i exp(f_i(alpha) + g_i(n)) <= 1` for all n >= c_p and all
/// sufficiently large alpha.
///
/// Near the recursion threshold a discrete arm value like `n - 3` falls
/// below `c_p`, where the call vanishes and contributes no `f` term; the
/// symbolic substitution would under-state the constraint there. Those
/// finitely many sizes are carried as exact per-n rows (weighted
/// alpha-exponents straight from the joint distribution at that size); the
/// symbolic terms are valid from `exact_until` on.
#[derive(Debug, Clone)]
pub struct CanonicalConstraint {
    pub c_p: u32,
    /// Symbolic terms hold for `n >= exact_until`; `exact_rows` covers
    /// `[c_p, exact_until)`.
    pub exact_until: u32,
    /// `exact_rows[i]`: weighted alpha-exponents at `n = c_p + i`.
    pub exact_rows: Vec<Vec<(f64, Poly)>>,
    pub terms: Vec<Term>,
}

impl CanonicalConstraint {
    /// A purely symbolic constraint (no boundary rows).
    pub fn symbolic(c_p: u32, terms: Vec<Term>) -> Self {
        CanonicalConstraint {
            c_p,
            exact_until: c_p,
            exact_rows: Vec::new(),
            terms,
        }
    }

    /// Numeric value of the left-hand side. Integer sizes below
    /// `exact_until` evaluate through their exact row.
    pub fn eval(&self, alpha: f64, n: f64) -> Result<f64, SymError> {
        let idx = n.round();
        if idx >= self.c_p as f64 && idx < self.exact_until as f64 && (n - idx).abs() < 1e-9 {
            let row = &self.exact_rows[(idx as u32 - self.c_p) as usize];
            let env = Env::new().with(Sym::Alpha, alpha);
            let mut acc = 0.0;
            for (gamma, h) in row {
                acc += gamma * h.eval(&env)?.exp();
            }
            return Ok(acc);
        }
        let mut acc = 0.0;
        for t in &self.terms {
            let fa = t.f_alpha.eval(&Env::new().with(Sym::Alpha, alpha))?;
            let gn = t.g_n.eval(&Env::n(n))?;
            acc += t.gamma * (fa + gn).exp();
        }
        Ok(acc)
    }

    /// Structural (C1)/(C2)/separability check; true for every constraint the
    /// strengthener emits.
    pub fn well_formed(&self) -> bool {
        self.terms.iter().all(|t| {
            t.gamma > 0.0
                && t.f_alpha.only(Sym::Alpha)
                && t.g_n.only(Sym::N)
                && t.g_n
                    .terms()
                    .iter()
                    .all(|m| m.exp(Sym::N).0 >= 0 && m.exp(Sym::N).1 >= 0)
        }) && self.exact_rows.len() == (self.exact_until - self.c_p) as usize
            && self
                .exact_rows
                .iter()
                .flatten()
                .all(|(g, h)| *g > 0.0 && h.only(Sym::Alpha))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "c_p": self.c_p,
            "exact_until": self.exact_until,
            "exact_rows": self.exact_rows.iter().enumerate().map(|(i, row)| serde_json::json!({
                "n": self.c_p + i as u32,
                "terms": row.iter().map(|(g, h)| serde_json::json!({
                    "gamma": g, "h_alpha": h.to_string(),
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "terms": self.terms.iter().map(|t| serde_json::json!({
                "gamma": t.gamma,
                "f_alpha": t.f_alpha.to_string(),
                "g_n": t.g_n.to_string(),
            })).collect::<Vec<_>>(),
        })
    }
}

/// One rewriting step, for the diagnostic trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    pub rule: String,
    pub before: String,
    pub after: String,
}

pub type Trace = Vec<TraceStep>;

fn record(trace: &mut Option<&mut Trace>, rule: &str, before: impl ToString, after: impl ToString) {
    if let Some(t) = trace.as_deref_mut() {
        t.push(TraceStep {
            rule: rule.to_string(),
            before: before.to_string(),
            after: after.to_string(),
        });
    }
}

/// Move the n-part of each monomial onto the `v` slot (builds `f(alpha, v)`
/// from `f(alpha, n)`).
fn n_to_v(p: &Poly) -> Poly {
    Poly::from_terms(
        p.terms()
            .iter()
            .map(|m| {
                let mut e = m.exps;
                let (np, nl) = e[idx(Sym::N)];
                e[idx(Sym::V)] = (e[idx(Sym::V)].0 + np, e[idx(Sym::V)].1 + nl);
                e[idx(Sym::N)] = (0, 0);
                Mono {
                    coeff: m.coeff,
                    exps: e,
                }
            })
            .collect(),
    )
}

fn idx(s: Sym) -> usize {
    match s {
        Sym::Alpha => 0,
        Sym::N => 1,
        Sym::V => 2,
    }
}

/// Is `p(alpha) <= 0` for all sufficiently large alpha?
fn eventually_nonpositive(p: &Poly) -> Result<bool, SymError> {
    if p.is_zero() {
        return Ok(true);
    }
    let lead = p.leading_monomial(Sym::Alpha)?;
    Ok(lead.coeff < 0.0)
}

/// Split an exponent over (alpha, n) into canonical parts, applying the
/// sign-directed removal of negative/subconstant n-powers (R3):
/// for each distinct n-signature, the whole alpha-coefficient group is
/// dropped when it is eventually non-positive, or bounded against the
/// supremum of the n-monomial when it is eventually positive.
fn split_canonical(expo: &Poly, c_p: u32) -> Result<(f64, Poly, Poly), StrengthenError> {
    if expo.mentions(Sym::V) {
        return Err(StrengthenError::Failure("exponent still mentions v".into()));
    }
    // Group by n-signature.
    let mut groups: Vec<([i32; 2], Poly)> = Vec::new();
    for m in expo.terms() {
        let (a, b) = m.exp(Sym::N);
        let mut alpha_only = *m;
        alpha_only.exps[idx(Sym::N)] = (0, 0);
        match groups.iter_mut().find(|(sig, _)| *sig == [a, b]) {
            Some((_, p)) => *p = p.add(&Poly::mono(alpha_only)),
            None => groups.push(([a, b], Poly::mono(alpha_only))),
        }
    }
    let mut f_alpha = Poly::zero();
    let mut g_n = Poly::zero();
    for (sig, p) in groups {
        let [a, b] = sig;
        if p.is_zero() {
            continue;
        }
        if (a, b) == (0, 0) {
            f_alpha = f_alpha.add(&p);
        } else if a >= 0 && b >= 0 {
            // C2-legal n-part: the alpha group must be a pure constant.
            if !p.is_constant() {
                return Err(StrengthenError::Failure(format!(
                    "cross term {}*n^{a}*ln(n)^{b} is not separable",
                    p
                )));
            }
            g_n = g_n.add(&Poly::mono(Mono {
                coeff: p.constant_part(),
                exps: Mono::sym(Sym::N, a, b).exps,
            }));
        } else if eventually_nonpositive(&p)? {
            // The n-monomial is positive for n >= 2, so the whole group is
            // eventually <= 0 and may be dropped (upper bound by 0).
        } else {
            // Eventually positive group on a bounded n-monomial: bound the
            // n-part by its supremum over n >= c_p.
            if b != 0 && c_p < 2 {
                return Err(StrengthenError::Failure(
                    "ln-power bounds require a recursion threshold >= 2".into(),
                ));
            }
            let unit = Mono {
                coeff: 1.0,
                exps: Mono::sym(Sym::N, a, b).exps,
            };
            let sup = sup_over_n(&unit, c_p.max(1) as f64).ok_or_else(|| {
                StrengthenError::Failure(format!("unbounded cross term n^{a}*ln(n)^{b}"))
            })?;
            f_alpha = f_alpha.add(&p.scale(sup));
        }
    }
    let konst = f_alpha.constant_part();
    let f_alpha = f_alpha.nonconstant_part();
    Ok((konst, f_alpha, g_n))
}

/// Eliminate `ln` factors from a prefactor monomial (outside the
/// exponential): `ln(alpha) <= alpha`, `ln(alpha)^-1 <= 1`,
/// `ln(n) <= n`, `ln(n)^-d <= ln(c_p)^-d`. Returns the positive coefficient
/// and the remaining pure powers of alpha and n.
fn eliminate_prefactor(m: &Mono, c_p: u32) -> Result<(f64, i32, i32), StrengthenError> {
    if m.coeff <= 0.0 {
        return Err(StrengthenError::Failure(format!(
            "prefactor {} is not positive",
            Poly::mono(*m)
        )));
    }
    if m.exp(Sym::V) != (0, 0) {
        return Err(StrengthenError::Failure("prefactor mentions v".into()));
    }
    let mut coeff = m.coeff;
    let (mut ap, al) = m.exp(Sym::Alpha);
    let (mut np, nl) = m.exp(Sym::N);
    if al > 0 {
        ap += al; // ln(alpha)^k <= alpha^k
    }
    // ln(alpha)^-k <= 1 for alpha >= e (sufficiently large alpha).
    if nl > 0 {
        np += nl; // ln(n)^k <= n^k
    } else if nl < 0 {
        if c_p < 2 {
            return Err(StrengthenError::Failure(
                "ln(n)^-k prefactor requires a recursion threshold >= 2".into(),
            ));
        }
        coeff *= (c_p as f64).ln().powi(nl);
    }
    Ok((coeff, ap, np))
}

/// Fold a prefactor monomial into the exponent:
/// `gamma * alpha^a * n^c * exp(E) = exp(E + ln gamma + a ln alpha + c ln n)`.
fn move_prefactor_into(expo: &Poly, m: &Mono, c_p: u32) -> Result<Poly, StrengthenError> {
    let (coeff, ap, np) = eliminate_prefactor(m, c_p)?;
    let mut extra = vec![Mono::constant(coeff.ln())];
    if ap != 0 {
        extra.push(Mono {
            coeff: ap as f64,
            exps: Mono::sym(Sym::Alpha, 0, 1).exps,
        });
    }
    if np != 0 {
        extra.push(Mono {
            coeff: np as f64,
            exps: Mono::sym(Sym::N, 0, 1).exps,
        });
    }
    Ok(expo.add(&Poly::from_terms(extra)))
}

/// Over-approximate `int_0^n exp(expo(v)) dv` where `expo` is a
/// pseudo-polynomial over alpha, n, v.
///
/// Returns `(prefactor, exponent)` with the integral bounded by
/// `prefactor * exp(exponent)`. Base cases:
/// `(d_v, l_v) = (1, 0)`: `exp(n W)/W`;
/// `(0, 1)`: `n exp(W ln n)/W`;
/// `(0, 0)`: `n exp(W)`.
/// Other shapes reduce by `ln v -> ln n` and `v -> n` on the dominant
/// v-monomial; side v-terms are bounded to v-free form (positive
/// coefficients) or dropped (negative coefficients).
pub fn exp_integral(expo: &Poly, _c_p: u32) -> Result<(Mono, Poly), StrengthenError> {
    let mut v_free = Poly::zero();
    let mut v_terms: Vec<Mono> = Vec::new();
    for m in expo.terms() {
        if m.exp(Sym::V) == (0, 0) {
            v_free = v_free.add(&Poly::mono(*m));
        } else {
            v_terms.push(*m);
        }
    }
    if v_terms.is_empty() {
        // Constant integrand: n * exp(W).
        return Ok((Mono::sym(Sym::N, 1, 0), v_free));
    }
    // Keep the lexicographically largest v-signature; bound the rest.
    v_terms.sort_by(|x, y| y.exp(Sym::V).cmp(&x.exp(Sym::V)));
    let mut kept = v_terms[0];
    for side in &v_terms[1..] {
        if side.coeff > 0.0 {
            // v <= n and ln v <= ln n bound positive powers only; a positive
            // coefficient on v^-c blows up near 0 and has no sound v-free cap.
            let (d, l) = side.exp(Sym::V);
            if d < 0 || l < 0 {
                return Err(StrengthenError::Failure(format!(
                    "positive side term with negative v-powers ({d}, {l})"
                )));
            }
            let mut m = *side;
            m.exps[idx(Sym::V)] = (0, 0);
            let (np, nl) = m.exp(Sym::N);
            m.exps[idx(Sym::N)] = (np + d, nl + l);
            v_free = v_free.add(&Poly::mono(m));
        }
        // Negative side terms are bounded above by zero and dropped.
    }
    if kept.coeff <= 0.0 {
        return Err(StrengthenError::NonPositiveW);
    }
    // Reduce the kept term to a base case.
    loop {
        let (d, l) = kept.exp(Sym::V);
        if (d, l) == (1, 0) || (d, l) == (0, 1) {
            break;
        }
        if l >= 1 && d >= 1 {
            // ln v -> ln n
            kept.exps[idx(Sym::V)].1 -= 1;
            kept.exps[idx(Sym::N)].1 += 1;
        } else if d == 0 && l >= 2 {
            kept.exps[idx(Sym::V)].1 -= 1;
            kept.exps[idx(Sym::N)].1 += 1;
        } else if d >= 2 {
            // v -> n
            kept.exps[idx(Sym::V)].0 -= 1;
            kept.exps[idx(Sym::N)].0 += 1;
        } else {
            return Err(StrengthenError::Failure(format!(
                "integral exponent with v-signature ({d}, {l}) is unsupported"
            )));
        }
    }
    let (d, _l) = kept.exp(Sym::V);
    let mut w = kept;
    w.exps[idx(Sym::V)] = (0, 0);
    let w_inv = w.inv().map_err(StrengthenError::Sym)?;
    if d == 1 {
        // exp(n W)/W, dropping the -1 in the numerator.
        let mut out = w;
        out.exps[idx(Sym::N)].0 += 1;
        Ok((w_inv, v_free.add(&Poly::mono(out))))
    } else {
        // n exp(W ln n)/W
        let mut pref = w_inv;
        pref.exps[idx(Sym::N)].0 += 1;
        let mut out = w;
        out.exps[idx(Sym::N)].1 += 1;
        Ok((pref, v_free.add(&Poly::mono(out))))
    }
}

/// Like [`f_of_affine`], but first coarsens the power-part argument to a pure
/// monomial: `(a n + b)^u <= (a' n)^u` with `a' = a` for `b <= 0` and
/// `a' = a + b/c_p` otherwise. Used on the divide-and-conquer slab grid,
/// where the exact affine expansion would leave `1/n` residues that the
/// grouped sign-directed removal can only bound at `n = c_p`.
fn f_of_affine_mono(fb: &Poly, a: f64, b: f64, c_p: u32) -> Result<Poly, StrengthenError> {
    if a <= 0.0 {
        return f_of_affine(fb, a, b, c_p);
    }
    let m = fb
        .as_single_mono()
        .ok_or_else(|| StrengthenError::Failure("template f is not a monomial".into()))?;
    let (u, w) = m.exp(Sym::N);
    if u < 0 || w < 0 {
        return Err(StrengthenError::Failure(
            "template f has negative n-powers".into(),
        ));
    }
    if w == 0 {
        // Log-free f: the exact affine expansion has no log-product residue
        // and keeps cancellations (e.g. against t*S) intact.
        return f_of_affine(fb, a, b, c_p);
    }
    let mut alpha_part = m;
    alpha_part.exps[idx(Sym::N)] = (0, 0);
    let a_mono = if b <= 0.0 { a } else { a + b / c_p as f64 };
    let x_pow = Poly::sym(Sym::N).scale(a_mono).pow(u as u32)?;
    let ln_ub = if w == 0 {
        Poly::one()
    } else {
        let c = if b <= 0.0 {
            if a > 1.0 {
                return Err(StrengthenError::Failure("R2 requires slope <= 1".into()));
            }
            a
        } else {
            if a >= 1.0 {
                return Err(StrengthenError::Failure(
                    "R2 requires slope < 1 when the offset is positive".into(),
                ));
            }
            (a + b / c_p as f64).min(1.0)
        };
        if c <= 0.0 {
            return Err(StrengthenError::Failure(
                "R2 constant must be positive".into(),
            ));
        }
        Poly::ln_sym(Sym::N)
            .add(&Poly::constant(c.ln()))
            .pow(w as u32)?
    };
    Ok(Poly::mono(alpha_part).mul(&x_pow)?.mul(&ln_ub)?)
}

/// Upper bound of `f_bar` at an affine argument `x = a n + b` (R2/R4 path).
/// `f_bar` must be a single monomial with non-negative n-part exponents.
fn f_of_affine(fb: &Poly, a: f64, b: f64, c_p: u32) -> Result<Poly, StrengthenError> {
    let m = fb
        .as_single_mono()
        .ok_or_else(|| StrengthenError::Failure("template f is not a monomial".into()))?;
    let (u, w) = m.exp(Sym::N);
    if u < 0 || w < 0 {
        return Err(StrengthenError::Failure(
            "template f has negative n-powers".into(),
        ));
    }
    let mut alpha_part = m;
    alpha_part.exps[idx(Sym::N)] = (0, 0);
    if a == 0.0 {
        // Constant argument.
        // x^u ln^w x <= 0 on (0, 1], and an empty argument contributes 0.
        let val = if b <= 0.0 || (b <= 1.0 && w > 0) {
            0.0
        } else {
            b.powi(u) * b.ln().powi(w)
        };
        return Ok(Poly::mono(alpha_part).scale(val));
    }
    if a < 0.0 {
        return Err(StrengthenError::Failure(
            "negative slope in size argument".into(),
        ));
    }
    let x = Poly::sym(Sym::N).scale(a).add(&Poly::constant(b));
    let x_pow = x.pow(u as u32)?;
    let ln_ub = if w == 0 {
        Poly::one()
    } else {
        // (R2) ln(a n - b') <= ln n + ln a;  ln(a n + b') <= ln n + ln(min{1, a + b'/c_p}).
        let c = if b <= 0.0 {
            if a > 1.0 {
                return Err(StrengthenError::Failure("R2 requires slope <= 1".into()));
            }
            a
        } else {
            if a >= 1.0 {
                return Err(StrengthenError::Failure(
                    "R2 requires slope < 1 when the offset is positive".into(),
                ));
            }
            (a + b / c_p as f64).min(1.0)
        };
        if c <= 0.0 {
            return Err(StrengthenError::Failure(
                "R2 constant must be positive".into(),
            ));
        }
        let base = Poly::ln_sym(Sym::N).add(&Poly::constant(c.ln()));
        base.pow(w as u32)?
    };
    Ok(Poly::mono(alpha_part).mul(&x_pow)?.mul(&ln_ub)?)
}

/// Extract affine coefficients `(a, b)` from a polynomial `a n + b`.
fn as_affine(p: &Poly) -> Option<(f64, f64)> {
    let mut a = 0.0;
    let mut b = 0.0;
    for m in p.terms() {
        if !m.only(Sym::N) {
            return None;
        }
        match m.exp(Sym::N) {
            (0, 0) => b += m.coeff,
            (1, 0) => a += m.coeff,
            _ => return None,
        }
    }
    Some((a, b))
}

struct Ctx<'a> {
    c_p: u32,
    fb: &'a Poly,
    tb: &'a Poly,
    q_parts: u32,
}

impl<'a> Ctx<'a> {
    /// `t_bar * S - t_bar * f_bar(n)`: the v-free part of every exponent.
    fn base_exponent(&self, pre: &Poly) -> Result<Poly, StrengthenError> {
        let ts = self.tb.mul(pre)?;
        let tf = self.tb.mul(self.fb)?;
        Ok(ts.sub(&tf))
    }

    fn term_from_exponent(&self, gamma_scale: f64, expo: &Poly) -> Result<Term, StrengthenError> {
        let (konst, f_alpha, g_n) = split_canonical(expo, self.c_p)?;
        let gamma = gamma_scale * konst.exp();
        if gamma <= 0.0 || !gamma.is_finite() {
            return Err(StrengthenError::Failure(format!(
                "non-positive weight {gamma}"
            )));
        }
        Ok(Term {
            gamma,
            f_alpha,
            g_n,
        })
    }

    /// Case I (FSDPD): one term per arm via S2-D, falling back to S1-D.
    fn discrete(
        &self,
        branch: &Branch,
        arms: &[(crate::lrec::Prob, Poly)],
        trace: &mut Option<&mut Trace>,
    ) -> Result<Vec<Term>, StrengthenError> {
        let mut out = Vec::new();
        for (prob, value) in arms {
            let s2 = self.discrete_arm_s2(branch, value);
            match s2 {
                Ok(term) => {
                    record(
                        trace,
                        "S2-D",
                        value,
                        format!("{} + {}", term.f_alpha, term.g_n),
                    );
                    out.push(Term {
                        gamma: prob.value * term.gamma,
                        ..term
                    });
                }
                Err(_) => {
                    // (S1-D) f(alpha, H) <= f(alpha, n): exponent collapses to t*S.
                    let expo = self.tb.mul(&branch.pre)?;
                    let term = self.term_from_exponent(1.0, &expo).map_err(|e| {
                        StrengthenError::Failure(format!("both S2-D and S1-D failed: {e}"))
                    })?;
                    record(
                        trace,
                        "S1-D",
                        value,
                        format!("{} + {}", term.f_alpha, term.g_n),
                    );
                    out.push(Term {
                        gamma: prob.value * term.gamma,
                        ..term
                    });
                }
            }
        }
        Ok(out)
    }

    fn discrete_arm_s2(&self, branch: &Branch, value: &Poly) -> Result<Term, StrengthenError> {
        let f_at = |arg: &Poly| -> Result<Poly, StrengthenError> {
            let m = self
                .fb
                .as_single_mono()
                .ok_or_else(|| StrengthenError::Failure("template f is not a monomial".into()))?;
            let (_, w) = m.exp(Sym::N);
            if w == 0 {
                // Polynomial substitution is exact.
                Ok(self.fb.substitute(Sym::N, arg)?)
            } else {
                let (a, b) = as_affine(arg).ok_or_else(|| {
                    StrengthenError::Failure("log factors need an affine argument".into())
                })?;
                f_of_affine(self.fb, a, b, self.c_p)
            }
        };
        // Sizes actually passed: H(v, n) with v = value.
        let mut f_sum = match &branch.call {
            CallForm::SingleV => f_at(value)?,
            CallForm::SingleSizeMinusV(sb) => f_at(&sb.upper_poly().sub(value))?,
            CallForm::DivideAndConquer(sb) => f_at(value)?.add(&f_at(&sb.upper_poly().sub(value))?),
        };
        f_sum = self.tb.mul(&f_sum)?;
        let expo = self.base_exponent(&branch.pre)?.add(&f_sum);
        self.term_from_exponent(1.0, &expo)
    }

    /// Case II: uniform-family single recursion via the integral bound.
    fn uniform_single(
        &self,
        branch: &Branch,
        trace: &mut Option<&mut Trace>,
    ) -> Result<Vec<Term>, StrengthenError> {
        let densities: Vec<Mono> = match &branch.dist {
            Dist::Uniform => vec![Mono {
                coeff: 1.0,
                exps: Mono::sym(Sym::N, -1, 0).exps,
            }],
            Dist::MUniform => vec![Mono {
                coeff: 2.0,
                exps: Mono::sym(Sym::N, -1, 0).exps,
            }],
            Dist::PiecewiseUniform(pieces) => {
                let mut out = Vec::new();
                for piece in pieces {
                    out.push(piece_density(piece, self.c_p)?);
                }
                out
            }
            Dist::Discrete(_) => unreachable!("dispatched earlier"),
        };
        let f_v = n_to_v(self.fb);
        let integrand = self.tb.mul(&f_v)?;
        let (pref, int_expo) = exp_integral(&integrand, self.c_p)?;
        record(
            trace,
            "integral",
            &integrand,
            format!("{} * exp({})", Poly::mono(pref), int_expo),
        );
        let base = self.base_exponent(&branch.pre)?;
        let mut out = Vec::new();
        for density in densities {
            let full_pref = density.try_mul(&pref)?;
            let expo = move_prefactor_into(&base.add(&int_expo), &full_pref, self.c_p)?;
            record(trace, "move-prefactor", Poly::mono(full_pref), &expo);
            out.push(self.term_from_exponent(1.0, &expo)?);
        }
        Ok(out)
    }

    /// Divide-and-conquer over uniform or muniform: Q-slab endpoint bound.
    ///
    /// The summand `f(v) + f(H2 - v)` is monotone on each half of `[0, H2]`
    /// (decreasing-then-increasing for convex f, the reverse for concave f),
    /// so the per-slab maximum sits at the left endpoints for `u_f >= 1` and
    /// at the right endpoints for `u_f = 0`; symmetry carries the mirrored
    /// half onto the same grid.
    fn dnc_uniform(
        &self,
        branch: &Branch,
        sb: SizeBase,
        trace: &mut Option<&mut Trace>,
    ) -> Result<Vec<Term>, StrengthenError> {
        let density = match &branch.dist {
            Dist::Uniform => Mono {
                coeff: 1.0,
                exps: Mono::sym(Sym::N, -1, 0).exps,
            },
            Dist::MUniform => Mono {
                coeff: 2.0,
                exps: Mono::sym(Sym::N, -1, 0).exps,
            },
            _ => {
                return Err(StrengthenError::Failure(
                    "divide-and-conquer needs a uniform-family distribution".into(),
                ))
            }
        };
        let fm = self
            .fb
            .as_single_mono()
            .ok_or_else(|| StrengthenError::Failure("template f is not a monomial".into()))?;
        let u_f = fm.exp(Sym::N).0;
        let q = self.q_parts;
        let hi_ub = sb.upper_poly();
        let (a_ub, b_ub) = as_affine(&hi_ub).expect("size bases are affine");
        let (a_lb, b_lb) = as_affine(&sb.lower_poly()).expect("size bases are affine");
        // Slab mass: density * (H2 + 1)/Q; positive monomials only
        // (negative residue only shrinks the bound).
        let count = hi_ub.add(&Poly::one()).scale(1.0 / q as f64);
        let mut prefactors = Vec::new();
        for m in count.terms() {
            if m.coeff > 0.0 {
                prefactors.push(density.try_mul(m)?);
            }
        }
        let base = self.base_exponent(&branch.pre)?;
        let js: Vec<u32> = if u_f >= 1 {
            (0..q).collect()
        } else {
            (1..=q).collect()
        };
        let mut out = Vec::new();
        for j in js {
            let frac = j as f64 / q as f64;
            // Upper bounds for both arguments: v_j <= frac * H2_ub and
            // H2 - v_j <= H2_ub - frac * H2_lb.
            let f1 = if j == 0 {
                Poly::zero()
            } else {
                f_of_affine_mono(self.fb, frac * a_ub, frac * b_ub, self.c_p)?
            };
            let f2 = {
                let a2 = a_ub - frac * a_lb;
                let b2 = b_ub - frac * b_lb;
                f_of_affine_mono(self.fb, a2, b2, self.c_p)?
            };
            let fsum = self.tb.mul(&f1.add(&f2))?;
            let expo_j = base.add(&fsum);
            for pref in &prefactors {
                let expo = move_prefactor_into(&expo_j, pref, self.c_p)?;
                record(trace, &format!("dnc-slab j={j}"), Poly::mono(*pref), &expo);
                out.push(self.term_from_exponent(1.0, &expo)?);
            }
        }
        Ok(out)
    }
}

/// Density upper bound `weight / |piece|` as a monomial, using a lower bound
/// on the piece length.
fn piece_density(piece: &crate::lrec::Piece, c_p: u32) -> Result<Mono, StrengthenError> {
    let len = piece.hi.sub(&piece.lo).add(&Poly::one());
    let lead = len
        .leading_monomial(Sym::N)
        .map_err(|_| StrengthenError::Failure("piece length must be a polynomial over n".into()))?;
    if lead.coeff <= 0.0 {
        return Err(StrengthenError::Failure(
            "piece length has no positive leading term".into(),
        ));
    }
    let residue = len.sub(&Poly::mono(lead));
    let mut shrink = 1.0;
    if residue.terms().iter().any(|m| m.coeff < 0.0) {
        // len >= (1 - kappa) * lead with kappa the sup of -residue/lead.
        let ratio = residue.neg().mul_mono(&lead.inv()?)?;
        let mut kappa = 0.0;
        for m in ratio.terms() {
            if m.coeff > 0.0 {
                let unit = Mono {
                    coeff: 1.0,
                    exps: m.exps,
                };
                let sup = sup_over_n(&unit, c_p.max(2) as f64).ok_or_else(|| {
                    StrengthenError::Failure("piece length residue is unbounded".into())
                })?;
                kappa += m.coeff * sup;
            }
        }
        if kappa >= 1.0 {
            return Err(StrengthenError::Failure(
                "piece length lower bound collapsed".into(),
            ));
        }
        shrink = 1.0 - kappa;
    }
    let mut density = lead.inv()?;
    density.coeff *= piece.weight.value / shrink;
    Ok(density)
}

/// Strengthen a single branch into canonical terms (unweighted by the
/// branch probability).
pub fn strengthen_branch(
    branch: &Branch,
    c_p: u32,
    fb: &Poly,
    tb: &Poly,
    q_parts: u32,
    trace: &mut Option<&mut Trace>,
) -> Result<Vec<Term>, StrengthenError> {
    let ctx = Ctx {
        c_p,
        fb,
        tb,
        q_parts,
    };
    match (&branch.dist, &branch.call) {
        (Dist::Discrete(arms), _) => ctx.discrete(branch, arms, trace),
        (_, CallForm::DivideAndConquer(sb)) => ctx.dnc_uniform(branch, *sb, trace),
        (Dist::Uniform | Dist::MUniform | Dist::PiecewiseUniform(_), _) => {
            ctx.uniform_single(branch, trace)
        }
    }
}

/// Boundary cap: discrete arms that only clear the threshold beyond this
/// many sizes past `c_p` are not supported by the exact-row patch.
const EXACT_ROW_CAP: u32 = 64;

/// First `n` from which every discrete arm value is either at least `c_p`
/// or constantly below it (so the symbolic substitution is faithful).
pub fn exact_until(prr: &CanonicalPrr) -> Result<u32, StrengthenError> {
    let c_p = prr.c_p;
    let mut n0 = c_p;
    for branch in &prr.branches {
        if let Dist::Discrete(arms) = &branch.dist {
            for (_, value) in arms {
                // Lower bounds on every size actually passed for this arm.
                let sizes: Vec<Poly> = match &branch.call {
                    CallForm::SingleV => vec![value.clone()],
                    CallForm::SingleSizeMinusV(sb) => vec![sb.lower_poly().sub(value)],
                    CallForm::DivideAndConquer(sb) => {
                        vec![value.clone(), sb.lower_poly().sub(value)]
                    }
                };
                for value in &sizes {
                    let from = match as_affine(value) {
                        Some((a, b)) if a > 0.0 => {
                            let t = ((c_p as f64 - b) / a).ceil() as i64;
                            t.max(c_p as i64) as u32
                        }
                        Some((_, b)) => {
                            // Constant arm: either always active or always below.
                            let _ = b;
                            c_p
                        }
                        None => {
                            // Non-affine: require non-negative coefficients (the
                            // value is then non-decreasing) and an in-range start.
                            let ok = value.terms().iter().all(|m| m.coeff >= 0.0)
                                && value
                                    .eval(&Env::n(c_p as f64))
                                    .is_ok_and(|x| x >= c_p as f64);
                            if ok {
                                c_p
                            } else {
                                return Err(StrengthenError::Failure(format!(
                                    "cannot bound where arm value {value} clears the threshold"
                                )));
                            }
                        }
                    };
                    if from > c_p + EXACT_ROW_CAP {
                        return Err(StrengthenError::Failure(format!(
                            "arm value {value} stays below the threshold past n = {}",
                            c_p + EXACT_ROW_CAP
                        )));
                    }
                    n0 = n0.max(from);
                }
            }
        }
    }
    Ok(n0)
}

/// Exact weighted alpha-exponents of the constraint at a concrete size:
/// one entry per `(branch, v)` with
/// `h = t(alpha, n) (S(n) + sum_{size >= c_p} f(alpha, size) - f(alpha, n))`.
fn exact_row(
    prr: &CanonicalPrr,
    fb: &Poly,
    tb: &Poly,
    n_bar: u32,
) -> Result<Vec<(f64, Poly)>, StrengthenError> {
    let at = |p: &Poly, x: f64| p.substitute(Sym::N, &Poly::constant(x));
    let t_here = at(tb, n_bar as f64)?;
    let f_here = at(fb, n_bar as f64)?;
    let mut row = Vec::new();
    for branch in &prr.branches {
        let s = branch.pre.eval(&Env::n(n_bar as f64))?;
        let support = crate::theory::dist_support(&branch.dist, n_bar as i64)
            .map_err(|e| StrengthenError::Failure(e.to_string()))?;
        for (mass, v) in support {
            let mut expo = Poly::constant(s).sub(&f_here);
            for size in crate::theory::call_sizes(&branch.call, n_bar as i64, v) {
                if size >= prr.c_p as i64 {
                    expo = expo.add(&at(fb, size.min(n_bar as i64) as f64)?);
                }
            }
            let h = t_here.mul(&expo)?;
            if !h.only(Sym::Alpha) {
                return Err(StrengthenError::Failure("exact row mixes symbols".into()));
            }
            row.push((branch.prob * mass, h));
        }
    }
    Ok(row)
}

/// Strengthen every branch and combine: each branch's terms are scaled by
/// the branch probability and concatenated. Boundary sizes where a discrete
/// arm dips below the threshold are handled exactly.
pub fn strengthen_prr(
    prr: &CanonicalPrr,
    fb: &Poly,
    tb: &Poly,
    q_parts: u32,
    mut trace: Option<&mut Trace>,
) -> Result<CanonicalConstraint, StrengthenError> {
    let mut terms = Vec::new();
    for branch in &prr.branches {
        let branch_terms = strengthen_branch(branch, prr.c_p, fb, tb, q_parts, &mut trace)?;
        for t in branch_terms {
            terms.push(Term {
                gamma: branch.prob * t.gamma,
                ..t
            });
        }
    }
    let until = exact_until(prr)?;
    let mut exact_rows = Vec::new();
    for n_bar in prr.c_p..until {
        let row = exact_row(prr, fb, tb, n_bar)?;
        record(
            &mut trace,
            &format!("exact-row n={n_bar}"),
            "joint distribution",
            format!("{} entries", row.len()),
        );
        exact_rows.push(row);
    }
    let constraint = CanonicalConstraint {
        c_p: prr.c_p,
        exact_until: until,
        exact_rows,
        terms,
    };
    debug_assert!(constraint.well_formed());
    Ok(constraint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonicalizer::to_canonical;
    use crate::lrec::parse;
    use crate::sympoly::parse_poly;

    fn poly(s: &str) -> Poly {
        parse_poly(s).unwrap()
    }

    #[test]
    fn example8_s1d_and_s2d() {
        // dist {0.5: n-1, 0.5: n-2}, S = ln n, t = ln(alpha)/ln(n),
        // f = 4 (alpha/ln alpha) n ln n.
        let src = "def p(n; 2) = { sample v <- discrete{ 0.5: n-1, 0.5: n-2, } in { pre(ln(n)); invoke p(v); } }";
        let (prr, _) = to_canonical(&parse(src).unwrap());
        let fb = poly("4*alpha*ln(alpha)^-1*n*ln(n)");
        let tb = poly("ln(alpha)*ln(n)^-1");
        // S1-D collapses the exponent to t*S = ln(alpha).
        let ctx = Ctx {
            c_p: 2,
            fb: &fb,
            tb: &tb,
            q_parts: 8,
        };
        let expo = ctx.tb.mul(&prr.branches[0].pre).unwrap();
        let (konst, f_alpha, g_n) = split_canonical(&expo, 2).unwrap();
        assert_eq!(konst, 0.0);
        assert_eq!(f_alpha, poly("ln(alpha)"));
        assert!(g_n.is_zero());
        // S2-D on the arm n-1 gives ln(alpha) - 4 alpha.
        let term = ctx.discrete_arm_s2(&prr.branches[0], &poly("n-1")).unwrap();
        assert_eq!(term.f_alpha, poly("ln(alpha)-4*alpha"));
        assert!(term.g_n.is_zero());
        assert!((term.gamma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_loop_arm_cancels_exactly() {
        // Rdwalk-style branch: S = 1, arm value n, f = c_f n, t = c_t.
        let src = "def p(n; 1) = { pre(1); invoke p(n); }";
        let (prr, _) = to_canonical(&parse(src).unwrap());
        let fb = poly("n");
        let tb = poly("0.25");
        let mut trace = None;
        let terms = strengthen_branch(&prr.branches[0], 1, &fb, &tb, 8, &mut trace).unwrap();
        assert_eq!(terms.len(), 1);
        // exponent c_t (1 + f(n) - f(n)) = c_t
        assert!(terms[0].f_alpha.is_zero());
        assert!(terms[0].g_n.is_zero());
        assert!((terms[0].gamma - 0.25f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn quickselect_strengthens_to_one() {
        // f = 2 alpha/ln(alpha) n, t = ln(alpha)/n over muniform: Q_L == 1.
        let src = "def p(n; 2) = { sample v <- muniform(n) in { pre(n); invoke p(v); } }";
        let (prr, _) = to_canonical(&parse(src).unwrap());
        let fb = poly("2*alpha*ln(alpha)^-1*n");
        let tb = poly("ln(alpha)*n^-1");
        let q = strengthen_prr(&prr, &fb, &tb, 8, None).unwrap();
        assert_eq!(q.terms.len(), 1);
        let t = &q.terms[0];
        assert!((t.gamma - 1.0).abs() < 1e-9, "gamma = {}", t.gamma);
        assert!(t.f_alpha.is_zero(), "f_alpha = {}", t.f_alpha);
        assert!(t.g_n.is_zero(), "g_n = {}", t.g_n);
    }

    #[test]
    fn quickselect_larger_cf_strictly_below_one() {
        let src = "def p(n; 2) = { sample v <- muniform(n) in { pre(n); invoke p(v); } }";
        let (prr, _) = to_canonical(&parse(src).unwrap());
        let fb = poly("4*alpha*ln(alpha)^-1*n");
        let tb = poly("ln(alpha)*n^-1");
        let q = strengthen_prr(&prr, &fb, &tb, 8, None).unwrap();
        // gamma = 1/2, exponent 0: limit strictly below 1.
        let total: f64 = q.terms.iter().map(|t| t.gamma).sum();
        assert!((total - 0.5).abs() < 1e-9);
        assert!(q
            .terms
            .iter()
            .all(|t| t.f_alpha.is_zero() && t.g_n.is_zero()));
    }

    #[test]
    fn integral_base_cases() {
        // exponent (2 alpha / n) v over [0, n]: prefactor n/(2 alpha).
        let expo = crate::sympoly::parse_poly_nv("2*alpha*n^-1*v").unwrap();
        let (pref, out) = exp_integral(&expo, 2).unwrap();
        assert_eq!(Poly::mono(pref), poly("0.5*alpha^-1*n"));
        assert_eq!(out, poly("2*alpha"));
        // constant exponent 3: n * exp(3)
        let (pref, out) = exp_integral(&Poly::constant(3.0), 2).unwrap();
        assert_eq!(Poly::mono(pref), poly("n"));
        assert_eq!(out, Poly::constant(3.0));
        // exponent 2 alpha ln v: n exp(2 alpha ln n) / (2 alpha)
        let expo = crate::sympoly::parse_poly_nv("2*alpha*ln(v)").unwrap();
        let (pref, out) = exp_integral(&expo, 2).unwrap();
        assert_eq!(Poly::mono(pref), poly("0.5*alpha^-1*n"));
        assert_eq!(out, poly("2*alpha*ln(n)"));
    }

    #[test]
    fn integral_dominates_riemann_sum() {
        // Over-approximation >= brute-force Riemann sum for exp(2 alpha ln v).
        let expo = crate::sympoly::parse_poly_nv("2*alpha*ln(v)").unwrap();
        let (pref, out) = exp_integral(&expo, 2).unwrap();
        let alpha = 3.0;
        let n = 20.0;
        let env = Env::alpha_n(alpha, n);
        let bound = Poly::mono(pref).eval(&env).unwrap() * out.eval(&env).unwrap().exp();
        let slices = 100_000;
        let mut riemann = 0.0;
        for i in 0..slices {
            let v = (i as f64 + 0.5) / slices as f64 * n;
            riemann += (2.0 * alpha * v.ln()).exp() * (n / slices as f64);
        }
        let ratio = bound / riemann;
        assert!((1.0..1.2).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn positive_inverse_v_side_terms_are_rejected() {
        // A positive coefficient on v^-1 has no sound v-free upper bound.
        let expo = crate::sympoly::parse_poly_nv("2*alpha*v + v^-1").unwrap();
        assert!(matches!(
            exp_integral(&expo, 2),
            Err(StrengthenError::Failure(_))
        ));
    }

    #[test]
    fn nonpositive_w_is_rejected() {
        let expo = crate::sympoly::parse_poly_nv("-2*alpha*v").unwrap();
        assert!(matches!(
            exp_integral(&expo, 2),
            Err(StrengthenError::NonPositiveW)
        ));
    }

    #[test]
    fn piecewise_densities_match_remark() {
        // pieces [0, n/2-1] w=1/3 and [n/2, n-1] w=2/3: densities 2/(3n), 4/(3n).
        let src = "def p(n; 4) = { sample v <- puniform{ [0, n/2-1]: 1/3, [n/2, n-1]: 2/3, } in { pre(n); invoke p(v); } }";
        let ast = parse(src).unwrap();
        let (prr, _) = to_canonical(&ast);
        if let Dist::PiecewiseUniform(pieces) = &prr.branches[0].dist {
            let d0 = piece_density(&pieces[0], 4).unwrap();
            let d1 = piece_density(&pieces[1], 4).unwrap();
            assert_eq!(Poly::mono(d0), poly("2/3*n^-1").scale(1.0));
            assert_eq!(Poly::mono(d1), poly("4/3*n^-1").scale(1.0));
        } else {
            panic!("expected piecewise uniform");
        }
    }

    #[test]
    fn combine_scales_by_branch_probability() {
        let src = "def p(n; 2) = { with { 1/e: { pre(1); invoke p(n-1); }; 1-1/e: { pre(1); invoke p(n); }; } }";
        let (prr, _) = to_canonical(&parse(src).unwrap());
        let fb = poly("4*n");
        let tb = poly("0.25");
        let q = strengthen_prr(&prr, &fb, &tb, 8, None).unwrap();
        assert_eq!(q.terms.len(), 2);
        let e = std::f64::consts::E;
        // branch 1: exp(c_t (1 - c_f)) = exp(-0.75), weight 1/e
        assert!((q.terms[0].gamma - (1.0 / e) * (-0.75f64).exp()).abs() < 1e-12);
        // branch 2 (self-loop): exp(c_t), weight 1 - 1/e
        assert!((q.terms[1].gamma - (1.0 - 1.0 / e) * 0.25f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn rewrite_rules_never_decrease_the_exponent() {
        // Local soundness of the bounding helpers on random positive inputs:
        // the claimed upper bounds dominate the exact values pointwise.
        let mut state = 0x5EEDu64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..500 {
            let u = 1 + (next() * 2.0) as i32;
            let w = (next() * 2.0) as i32;
            let c_f = 0.5 + next() * 4.0;
            let mut fexps = [(0, 0); 3];
            fexps[0] = (1, -1);
            fexps[1] = (u, w);
            let fb = Poly::mono(Mono {
                coeff: c_f,
                exps: fexps,
            });
            let a = 0.1 + next() * 0.9;
            let b = -next() * 2.0; // non-positive offset keeps R2 exact-slope
            let ub = f_of_affine(&fb, a, b, 2).unwrap();
            let ub_mono = f_of_affine_mono(&fb, a, b, 2).unwrap();
            for _ in 0..10 {
                let alpha = 2.0 + next() * 100.0;
                let n = 4.0 + next() * 200.0;
                let x: f64 = a * n + b;
                if x < 1.0 {
                    continue;
                }
                let exact = fb.eval(&Env::alpha_n(alpha, x)).unwrap();
                let env = Env::alpha_n(alpha, n);
                let claimed = ub.eval(&env).unwrap();
                let mono_claimed = ub_mono.eval(&env).unwrap();
                assert!(
                    claimed >= exact - 1e-9 * exact.abs(),
                    "affine: {claimed} < {exact}"
                );
                assert!(
                    mono_claimed >= exact - 1e-9 * exact.abs(),
                    "mono: {mono_claimed} < {exact}"
                );
            }
        }
        // R4: size-base bounds bracket the exact integer value.
        for sb in [
            SizeBase {
                ceil: false,
                b: 2,
                c: -1,
            },
            SizeBase {
                ceil: true,
                b: 3,
                c: 1,
            },
            SizeBase::N_MINUS_1,
        ] {
            for n in 2..200i64 {
                let exact = sb.eval(n) as f64;
                let hi = sb.upper_poly().eval(&Env::n(n as f64)).unwrap();
                let lo = sb.lower_poly().eval(&Env::n(n as f64)).unwrap();
                assert!(lo - 1e-9 <= exact && exact <= hi + 1e-9, "{sb:?} at {n}");
            }
        }
        // R3 suprema dominate the monomial on its whole range.
        for (a, b) in [(-1, 0), (-1, 1), (0, -1), (-2, 2)] {
            let m = Mono {
                coeff: 1.0,
                exps: Mono::sym(Sym::N, a, b).exps,
            };
            let sup = sup_over_n(&m, 2.0).unwrap();
            for k in 0..200 {
                let n = 2.0 + k as f64 * 7.0;
                let val = Poly::mono(m).eval(&Env::n(n)).unwrap();
                assert!(val <= sup + 1e-12, "n^{a} ln^{b} at {n}: {val} > {sup}");
            }
        }
    }

    #[test]
    fn coarser_slab_split_dominates_pointwise() {
        // Q = 1 is still a sound over-approximation: its left-hand side sits
        // above the Q = 8 one everywhere on a numeric grid.
        let src = "def p(n; 2) = { sample v <- uniform(n) in { pre(n); invoke p(v); p(n-1-v); } }";
        let (prr, _) = to_canonical(&parse(src).unwrap());
        let fb = poly("4*n*ln(n)");
        let tb = poly("n^-1");
        let q1 = strengthen_prr(&prr, &fb, &tb, 1, None).unwrap();
        let q8 = strengthen_prr(&prr, &fb, &tb, 8, None).unwrap();
        for alpha in [4.0, 16.0, 64.0] {
            for n in [2.0, 10.0, 100.0, 1000.0] {
                let coarse = q1.eval(alpha, n).unwrap();
                let fine = q8.eval(alpha, n).unwrap();
                assert!(
                    coarse >= fine - 1e-9,
                    "alpha={alpha} n={n}: {coarse} < {fine}"
                );
            }
        }
    }

    #[test]
    fn constraint_is_structurally_canonical() {
        let src = "def p(n; 2) = { sample v <- uniform(n) in { pre(n); invoke p(v); p(n-1-v); } }";
        let (prr, _) = to_canonical(&parse(src).unwrap());
        let fb = poly("4*n*ln(n)");
        let tb = poly("n^-1");
        let q = strengthen_prr(&prr, &fb, &tb, 8, None).unwrap();
        assert!(q.well_formed());
        assert_eq!(q.terms.len(), 8);
    }
}
