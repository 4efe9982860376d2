//! Symbolic exponentially-decreasing tail bounds for probabilistic
//! recurrence relations, with a simulator-backed validation harness.
//!
//! Pipeline: parse an LRec program ([`lrec`]), flatten it to probabilistic
//! branches ([`canonicalizer`]), then search pseudo-monomial templates for
//! the scaling factor `t` and potential `f` ([`synthesizer`]); each candidate
//! is strengthened into a canonical constraint ([`strengthener`]) and decided
//! by limit analysis ([`decider`]). The result is a bound
//! `Pr[C >= alpha * kappa(n*)] <= exp(t(alpha,n*) (f(alpha,n*) - alpha kappa(n*)))`.
//! The closed-form concentration bound and the expected-runtime oracle live
//! in [`theory`]; the Markov-chain simulator in [`simulator`]; the benchmark
//! corpus and report generation in [`bench`].

pub mod bench;
pub mod canonicalizer;
pub mod decider;
pub mod lrec;
pub mod simulator;
pub mod strengthener;
pub mod sympoly;
pub mod synthesizer;
pub mod theory;

pub use canonicalizer::{to_canonical, CanonicalPrr};
pub use lrec::{parse, validate, PrrAst};
pub use sympoly::{parse_exp_bound, parse_poly, Poly};
pub use synthesizer::{synthesize, CandidateBound};

/// Render a coefficient the way the polynomial printer does.
pub fn sympoly_fmt(c: f64) -> String {
    if (c - c.round()).abs() < 1e-9 && c.abs() < 1e15 {
        format!("{}", c.round() as i64)
    } else {
        format!("{c}")
    }
}
