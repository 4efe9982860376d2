//! Template enumeration, the doubling/halving coefficient search, and
//! assembly of the final tail bound
//! `u(alpha, n*) = exp(t(alpha, n*) * (f(alpha, n*) - alpha * kappa(n*)))`.
//!
//! Templates are pseudo-monomials
//! `f = c_f alpha^{p_f} ln^{q_f}(alpha) n^{u_f} ln^{v_f}(n)` (and likewise
//! `t`) with exponents in `[-B, B]`, pruned by the magnitude constraints
//! and ordered by the asymptotic decay of `t * alpha * kappa`: higher
//! n-degree first, then higher alpha-degree, ties broken towards smaller
//! alpha-parts of `f` (which give the tighter assembled bound among the
//! candidates the check procedure accepts).

use crate::canonicalizer::CanonicalPrr;
use crate::decider::{decide, DecideReport};
use crate::strengthener::{strengthen_prr, CanonicalConstraint, StrengthenError};
use crate::sympoly::{Mono, Poly, Sym};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no template in the pruned space admits valid coefficients")]
    NoBoundFound,
    #[error("kappa and the expected-runtime bound must be single pseudo-monomials over n")]
    NonMonomialInput,
    #[error(transparent)]
    Sym(#[from] crate::sympoly::SymError),
}

/// The eight template exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BoundTemplate {
    pub p_f: i32,
    pub q_f: i32,
    pub u_f: i32,
    pub v_f: i32,
    pub p_t: i32,
    pub q_t: i32,
    pub u_t: i32,
    pub v_t: i32,
}

impl BoundTemplate {
    pub fn f_poly(&self, c_f: f64) -> Poly {
        let mut exps = [(0, 0); 3];
        exps[0] = (self.p_f, self.q_f);
        exps[1] = (self.u_f, self.v_f);
        Poly::mono(Mono { coeff: c_f, exps })
    }

    pub fn t_poly(&self, c_t: f64) -> Poly {
        let mut exps = [(0, 0); 3];
        exps[0] = (self.p_t, self.q_t);
        exps[1] = (self.u_t, self.v_t);
        Poly::mono(Mono { coeff: c_t, exps })
    }
}

/// Pruned template space plus the raw (sign-restricted) candidate count.
#[derive(Debug, Clone)]
pub struct TemplateSpace {
    pub raw_count: usize,
    pub templates: Vec<BoundTemplate>,
}

fn lex_le(a: (i32, i32), b: (i32, i32)) -> bool {
    a <= b
}

/// Enumerate and order the admissible templates for a given expected-runtime
/// magnitude and time-limit scale (both single monomials over n).
pub fn enumerate_templates(b: u32, ep: &Mono, kappa: &Mono) -> TemplateSpace {
    let b = b as i32;
    let ep_sig = ep.exp(Sym::N);
    let kappa_sig = kappa.exp(Sym::N);
    let raw_count = ((b + 1) * (b + 1)) as usize
        * ((b + 1) * (b + 1)) as usize
        * ((2 * b + 1) * (2 * b + 1)) as usize
        * ((2 * b + 1) * (2 * b + 1)) as usize;
    let mut templates = Vec::new();
    for u_f in 0..=b {
        for v_f in 0..=b {
            // f's n-magnitude between E[p(n)] and kappa(n), inclusive.
            if !(lex_le(ep_sig, (u_f, v_f)) && lex_le((u_f, v_f), kappa_sig)) {
                continue;
            }
            for u_t in -b..=0 {
                for v_t in -b..=0 {
                    // t^-1 at most kappa in n-magnitude.
                    if !lex_le((-u_t, -v_t), kappa_sig) {
                        continue;
                    }
                    for p_f in -b..=b {
                        for q_f in -b..=b {
                            if !lex_le((p_f, q_f), (1, 0)) {
                                continue;
                            }
                            for p_t in -b..=b {
                                for q_t in -b..=b {
                                    if !lex_le((-1, 0), (p_t, q_t)) {
                                        continue;
                                    }
                                    templates.push(BoundTemplate {
                                        p_f,
                                        q_f,
                                        u_f,
                                        v_f,
                                        p_t,
                                        q_t,
                                        u_t,
                                        v_t,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    // Tightness order on the decay of t * alpha * kappa.
    templates.sort_by(|x, y| {
        let decay_n = |t: &BoundTemplate| (t.u_t + kappa_sig.0, t.v_t + kappa_sig.1);
        let decay_a = |t: &BoundTemplate| (t.p_t + 1, t.q_t);
        decay_n(y)
            .cmp(&decay_n(x))
            .then(decay_a(y).cmp(&decay_a(x)))
            .then((x.p_f, x.q_f).cmp(&(y.p_f, y.q_f)))
            .then((x.u_f, x.v_f).cmp(&(y.u_f, y.v_f)))
    });
    TemplateSpace {
        raw_count,
        templates,
    }
}

/// A solved bound: template, coefficients, concrete functions and the
/// exponent of `u(alpha, n*)`.
#[derive(Debug, Clone)]
pub struct CandidateBound {
    pub template: BoundTemplate,
    pub c_f: f64,
    pub c_t: f64,
    pub f_bar: Poly,
    pub t_bar: Poly,
    pub bound_exponent: Poly,
}

impl CandidateBound {
    pub fn bound_string(&self) -> String {
        format!("exp({})", self.bound_exponent)
    }

    /// Evaluate `u(alpha, n*)`.
    pub fn eval(&self, alpha: f64, n: f64) -> Result<f64, crate::sympoly::SymError> {
        Ok(self
            .bound_exponent
            .eval(&crate::sympoly::Env::alpha_n(alpha, n))?
            .exp())
    }
}

/// Assemble `u = exp(t_bar * (f_bar - alpha * kappa))`.
pub fn assemble_bound(
    tpl: &BoundTemplate,
    c_f: f64,
    c_t: f64,
    kappa: &Mono,
) -> Result<CandidateBound, SynthError> {
    let f_bar = tpl.f_poly(c_f);
    let t_bar = tpl.t_poly(c_t);
    let alpha_kappa = Poly::sym(Sym::Alpha).mul_mono(kappa)?;
    let bound_exponent = t_bar.mul(&f_bar.sub(&alpha_kappa))?;
    Ok(CandidateBound {
        template: *tpl,
        c_f,
        c_t,
        f_bar,
        t_bar,
        bound_exponent,
    })
}

/// Does the assembled bound decrease to zero for large alpha? The leading
/// alpha-group of the exponent must carry a negative leading n-coefficient.
fn exponent_decays(e: &Poly) -> bool {
    if e.is_zero() {
        return false;
    }
    let lead_alpha = e.terms().iter().map(|m| m.exp(Sym::Alpha)).max().unwrap();
    let group: Vec<Mono> = e
        .terms()
        .iter()
        .filter(|m| m.exp(Sym::Alpha) == lead_alpha)
        .map(|m| {
            let mut c = *m;
            c.exps[0] = (0, 0);
            c
        })
        .collect();
    let group = Poly::from_terms(group);
    match group.leading_monomial(Sym::N) {
        Ok(lead) => lead.coeff < 0.0,
        Err(_) => false,
    }
}

/// Outcome of one coefficient check.
#[derive(Debug)]
pub enum CheckOutcome {
    /// Constraint strengthened, decided valid, and the assembled bound decays.
    Accepted(CanonicalConstraint, DecideReport),
    /// Decision procedure refuted the strengthened constraint.
    RejectedDecide(DecideReport),
    /// No strategy reached a canonical constraint.
    RejectedStrengthen(StrengthenError),
    /// Valid constraint but a non-decreasing bound.
    Vacuous,
}

impl CheckOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, CheckOutcome::Accepted(..))
    }
}

/// CheckCond: strengthen + decide + non-vacuity of the assembled bound.
pub fn check_cond(
    prr: &CanonicalPrr,
    tpl: &BoundTemplate,
    c_f: f64,
    c_t: f64,
    kappa: &Mono,
    q_parts: u32,
) -> CheckOutcome {
    let f_bar = tpl.f_poly(c_f);
    let t_bar = tpl.t_poly(c_t);
    let constraint = match strengthen_prr(prr, &f_bar, &t_bar, q_parts, None) {
        Ok(c) => c,
        Err(e) => return CheckOutcome::RejectedStrengthen(e),
    };
    let report = match decide(&constraint) {
        Ok(r) => r,
        Err(e) => {
            return CheckOutcome::RejectedStrengthen(StrengthenError::Sym(match e {
                crate::decider::DecideError::Sym(s) => s,
            }))
        }
    };
    if !report.verdict {
        return CheckOutcome::RejectedDecide(report);
    }
    match assemble_bound(tpl, c_f, c_t, kappa) {
        Ok(cand) if exponent_decays(&cand.bound_exponent) => {
            CheckOutcome::Accepted(constraint, report)
        }
        _ => CheckOutcome::Vacuous,
    }
}

/// The guess loop: `c_t` halves from 1 down to `2^-M` (outer), `c_f` doubles
/// from 1/2 up to `2^(M-1)` (inner); first acceptance wins.
pub fn guess_coefficients(
    prr: &CanonicalPrr,
    tpl: &BoundTemplate,
    m: u32,
    kappa: &Mono,
    q_parts: u32,
) -> Option<(f64, f64)> {
    // Strengthening failures are structural (which rewriting branches fire
    // does not depend on the positive coefficients), so one probe skips the
    // whole coefficient loop.
    if strengthen_prr(prr, &tpl.f_poly(1.0), &tpl.t_poly(1.0), q_parts, None).is_err() {
        return None;
    }
    for i in 0..=m {
        let c_t = 0.5f64.powi(i as i32);
        for j in 0..=m {
            let c_f = 0.5 * 2f64.powi(j as i32);
            if check_cond(prr, tpl, c_f, c_t, kappa, q_parts).accepted() {
                return Some((c_f, c_t));
            }
        }
    }
    None
}

/// Full synthesis result with search diagnostics.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub candidate: CandidateBound,
    pub raw_count: usize,
    pub pruned_count: usize,
    pub templates_tried: usize,
}

/// Synthesize the tightest accepted bound under the template ordering.
pub fn synthesize(
    prr: &CanonicalPrr,
    kappa: &Poly,
    ep_sym: &Poly,
    b: u32,
    m: u32,
    q_parts: u32,
) -> Result<Synthesis, SynthError> {
    let kappa_m = kappa.as_single_mono().ok_or(SynthError::NonMonomialInput)?;
    let ep_m = ep_sym
        .as_single_mono()
        .ok_or(SynthError::NonMonomialInput)?;
    let space = enumerate_templates(b, &ep_m, &kappa_m);
    for (i, tpl) in space.templates.iter().enumerate() {
        if let Some((c_f, c_t)) = guess_coefficients(prr, tpl, m, &kappa_m, q_parts) {
            let candidate = assemble_bound(tpl, c_f, c_t, &kappa_m)?;
            return Ok(Synthesis {
                candidate,
                raw_count: space.raw_count,
                pruned_count: space.templates.len(),
                templates_tried: i + 1,
            });
        }
    }
    Err(SynthError::NoBoundFound)
}

/// Run the guess loop over every pruned template (`--all-templates`).
pub fn synthesize_all(
    prr: &CanonicalPrr,
    kappa: &Poly,
    ep_sym: &Poly,
    b: u32,
    m: u32,
    q_parts: u32,
) -> Result<Vec<CandidateBound>, SynthError> {
    let kappa_m = kappa.as_single_mono().ok_or(SynthError::NonMonomialInput)?;
    let ep_m = ep_sym
        .as_single_mono()
        .ok_or(SynthError::NonMonomialInput)?;
    let space = enumerate_templates(b, &ep_m, &kappa_m);
    let mut out = Vec::new();
    for tpl in &space.templates {
        if let Some((c_f, c_t)) = guess_coefficients(prr, tpl, m, &kappa_m, q_parts) {
            out.push(assemble_bound(tpl, c_f, c_t, &kappa_m)?);
        }
    }
    Ok(out)
}
