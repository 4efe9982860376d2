//! Stack-machine execution of the PRR Markov-chain semantics: Monte Carlo
//! sampling of the total cost, exact small-instance cost distributions for
//! single-recursion programs, tail estimation with Clopper-Pearson upper
//! confidence bounds, and one-sided validation of symbolic tail bounds and
//! the moment-generating-function inequality.
//!
//! Randomness comes from SplitMix64 with one derived substream per run, so
//! sample arrays are reproducible for a given `(prr, n*, samples, seed)`
//! regardless of batching.

use crate::canonicalizer::{Branch, CanonicalPrr};
use crate::lrec::{CallForm, Command, Dist, PrrAst};
use crate::sympoly::{Env, Poly, SymError};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Transition cap: an almost-sure-termination violation signal.
pub const STEP_CAP: u64 = 10_000_000;

/// RNG algorithm identity recorded in output metadata.
pub const RNG_ALGORITHM: &str = "splitmix64";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step cap {STEP_CAP} exceeded at n*={0}; the PRR may not terminate")]
    StepCapExceeded(i64),
    #[error("passed size {size} exceeds current n={n}")]
    SizeRangeViolation { n: i64, size: i64 },
    #[error("discrete value {value} at n={n} is not an integer")]
    NonIntegerValue { n: i64, value: f64 },
    #[error("distribution has empty support at n={0}")]
    EmptySupport(i64),
    #[error("exact distribution supports single recursion only")]
    UnsupportedShape,
    #[error("exact distribution support exceeded {0} points")]
    StateExplosion(usize),
    #[error(transparent)]
    Sym(#[from] SymError),
}

// ---------------------------------------------------------------------------
// SplitMix64
// ---------------------------------------------------------------------------

/// Counter-based 64-bit generator with cheap substream derivation.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent substream for run `idx` under a master seed.
    pub fn substream(seed: u64, idx: u64) -> Self {
        SplitMix64 {
            state: mix(seed ^ mix(idx.wrapping_add(0x9E3779B97F4A7C15))),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in {0, .., n-1} (Lemire reduction).
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

fn sample_v(dist: &Dist, n: i64, rng: &mut SplitMix64) -> Result<i64, SimError> {
    match dist {
        Dist::Uniform => Ok(rng.below(n as u64) as i64),
        Dist::MUniform => {
            let i = rng.below(n as u64) as i64;
            Ok(i.max(n - 1 - i))
        }
        Dist::Discrete(arms) => {
            let mut u = rng.next_f64();
            let env = Env::n(n as f64);
            for (i, (p, value)) in arms.iter().enumerate() {
                if u < p.value || i == arms.len() - 1 {
                    let x = value.eval(&env)?;
                    if (x - x.round()).abs() > 1e-9 {
                        return Err(SimError::NonIntegerValue { n, value: x });
                    }
                    return Ok(x.round() as i64);
                }
                u -= p.value;
            }
            Err(SimError::EmptySupport(n))
        }
        Dist::PiecewiseUniform(pieces) => {
            let env = Env::n(n as f64);
            let mut u = rng.next_f64();
            for (i, piece) in pieces.iter().enumerate() {
                if u < piece.weight.value || i == pieces.len() - 1 {
                    let lo = piece.lo.eval(&env)?.ceil() as i64;
                    let hi = piece.hi.eval(&env)?.floor() as i64;
                    if hi < lo {
                        return Err(SimError::EmptySupport(n));
                    }
                    return Ok(lo + rng.below((hi - lo + 1) as u64) as i64);
                }
                u -= piece.weight.value;
            }
            Err(SimError::EmptySupport(n))
        }
    }
}

fn pick_branch<'a>(branches: &'a [Branch], rng: &mut SplitMix64) -> &'a Branch {
    let mut u = rng.next_f64();
    for b in branches {
        if u < b.prob {
            return b;
        }
        u -= b.prob;
    }
    branches
        .last()
        .expect("canonical form has at least one branch")
}

/// One run of the Markov chain from `((func(p), n*), 0, emp)`; returns the
/// total accumulated preprocessing cost.
///
/// Sizes above the current `n` are a dynamic well-formedness failure; sizes
/// below the threshold (including negative ones, e.g. `n-3` near the base
/// case) simply terminate that call, matching the semantics.
pub fn run_once(prr: &CanonicalPrr, n_star: i64, rng: &mut SplitMix64) -> Result<f64, SimError> {
    let c_p = prr.c_p as i64;
    let mut cost = 0.0f64;
    let mut stack: Vec<i64> = Vec::new();
    let mut cur = n_star;
    let mut steps = 0u64;
    loop {
        if cur < c_p {
            match stack.pop() {
                Some(next) => {
                    cur = next;
                    continue;
                }
                None => return Ok(cost),
            }
        }
        steps += 1;
        if steps > STEP_CAP {
            return Err(SimError::StepCapExceeded(n_star));
        }
        let branch = pick_branch(&prr.branches, rng);
        let v = sample_v(&branch.dist, cur, rng)?;
        cost += branch.pre.eval(&Env::n(cur as f64))?;
        match &branch.call {
            CallForm::SingleV => {
                if v > cur {
                    return Err(SimError::SizeRangeViolation { n: cur, size: v });
                }
                cur = v;
            }
            CallForm::SingleSizeMinusV(sb) => {
                let size = sb.eval(cur) - v;
                if size > cur {
                    return Err(SimError::SizeRangeViolation { n: cur, size });
                }
                cur = size;
            }
            CallForm::DivideAndConquer(sb) => {
                let s2 = sb.eval(cur) - v;
                if v > cur || s2 > cur {
                    return Err(SimError::SizeRangeViolation {
                        n: cur,
                        size: v.max(s2),
                    });
                }
                if s2 >= c_p {
                    stack.push(s2);
                }
                cur = v;
            }
        }
    }
}

/// One run straight off the AST (resolving choices on the way down); used to
/// check that canonicalization preserves the cost distribution.
pub fn run_once_ast(ast: &PrrAst, n_star: i64, rng: &mut SplitMix64) -> Result<f64, SimError> {
    let c_p = ast.c_p as i64;
    let mut cost = 0.0f64;
    let mut stack: Vec<i64> = Vec::new();
    let mut cur = n_star;
    let mut steps = 0u64;
    loop {
        if cur < c_p {
            match stack.pop() {
                Some(next) => {
                    cur = next;
                    continue;
                }
                None => return Ok(cost),
            }
        }
        steps += 1;
        if steps > STEP_CAP {
            return Err(SimError::StepCapExceeded(n_star));
        }
        let mut cmd = &ast.body;
        loop {
            match cmd {
                Command::Choice(arms) => {
                    let mut u = rng.next_f64();
                    let mut chosen = &arms[arms.len() - 1].1;
                    for (p, inner) in arms {
                        if u < p.value {
                            chosen = inner;
                            break;
                        }
                        u -= p.value;
                    }
                    cmd = chosen;
                }
                Command::Sample { dist, body, .. } => {
                    let v = sample_v(dist, cur, rng)?;
                    cost += body.pre.eval(&Env::n(cur as f64))?;
                    match &body.call {
                        CallForm::SingleV => cur = v,
                        CallForm::SingleSizeMinusV(sb) => cur = sb.eval(cur) - v,
                        CallForm::DivideAndConquer(sb) => {
                            let s2 = sb.eval(cur) - v;
                            if s2 >= c_p {
                                stack.push(s2);
                            }
                            cur = v;
                        }
                    }
                    break;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Exact distribution (single recursion)
// ---------------------------------------------------------------------------

const SUPPORT_PRUNE: f64 = 1e-12;
const MAX_SUPPORT: usize = 1_000_000;

fn key_of(cost: f64) -> i64 {
    (cost * 1e9).round() as i64
}

/// Exact cost distribution for single-recursion PRRs by convolution along
/// the size chain, resolving self-loops as geometric series.
pub fn exact_distribution(prr: &CanonicalPrr, n_star: i64) -> Result<Vec<(f64, f64)>, SimError> {
    if prr.branches.iter().any(|b| b.r() == 2) {
        return Err(SimError::UnsupportedShape);
    }
    let c_p = prr.c_p as i64;
    if n_star < c_p {
        return Ok(vec![(0.0, 1.0)]);
    }
    // dists[n]: map cost-key -> (cost, prob)
    let mut dists: Vec<BTreeMap<i64, (f64, f64)>> = Vec::with_capacity((n_star + 1) as usize);
    let base: BTreeMap<i64, (f64, f64)> = [(0i64, (0.0, 1.0))].into_iter().collect();
    for _ in 0..c_p {
        dists.push(base.clone());
    }
    for n in c_p..=n_star {
        // Non-self transitions convolve into `fixed`; self-loops
        // (mass q_k, shift s_k) solve D = F + sum_k q_k shift_{s_k}(D),
        // expanded layer by layer: layer_{m+1} = sum_k q_k shift_{s_k}(layer_m).
        let mut fixed: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        let mut self_loops: Vec<(f64, f64)> = Vec::new();
        for b in &prr.branches {
            let shift = b.pre.eval(&Env::n(n as f64))?;
            for (mass, v) in
                crate::theory::dist_support(&b.dist, n).map_err(|e| theory_to_sim(e, n))?
            {
                let size = match &b.call {
                    CallForm::SingleV => v,
                    CallForm::SingleSizeMinusV(sb) => sb.eval(n) - v,
                    CallForm::DivideAndConquer(_) => unreachable!(),
                };
                if size > n {
                    return Err(SimError::SizeRangeViolation { n, size });
                }
                if size == n {
                    self_loops.push((b.prob * mass, shift));
                    continue;
                }
                let sub = if size < c_p {
                    &base
                } else {
                    &dists[size as usize]
                };
                for (c, p) in sub.values() {
                    let q = b.prob * mass * p;
                    if q < SUPPORT_PRUNE {
                        continue;
                    }
                    let cost = c + shift;
                    let e = fixed.entry(key_of(cost)).or_insert((cost, 0.0));
                    e.1 += q;
                }
            }
        }
        let mut dist_n = fixed.clone();
        let total_q: f64 = self_loops.iter().map(|(q, _)| q).sum();
        if total_q > 0.0 {
            let mut layer = fixed;
            let mut layer_mass = 1.0f64;
            while layer_mass * total_q > SUPPORT_PRUNE {
                let mut next: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
                for (q, s) in &self_loops {
                    for (c, p) in layer.values() {
                        let mass = q * p;
                        let cost = c + s;
                        let e = next.entry(key_of(cost)).or_insert((cost, 0.0));
                        e.1 += mass;
                    }
                }
                for (k, (c, p)) in &next {
                    let e = dist_n.entry(*k).or_insert((*c, 0.0));
                    e.1 += p;
                }
                if dist_n.len() > MAX_SUPPORT {
                    return Err(SimError::StateExplosion(dist_n.len()));
                }
                layer = next;
                layer_mass *= total_q;
            }
        }
        dists.push(dist_n);
    }
    Ok(dists[n_star as usize].values().copied().collect())
}

fn theory_to_sim(e: crate::theory::TheoryError, n: i64) -> SimError {
    use crate::theory::TheoryError as T;
    match e {
        T::NonIntegerValue { n, value } => SimError::NonIntegerValue { n, value },
        T::EmptySupport(n) => SimError::EmptySupport(n),
        T::Sym(s) => SimError::Sym(s),
        _ => SimError::EmptySupport(n),
    }
}

// ---------------------------------------------------------------------------
// Tail estimation
// ---------------------------------------------------------------------------

/// Monte Carlo sample of total costs with tail estimators.
#[derive(Debug, Clone)]
pub struct EmpiricalTail {
    pub n_star: i64,
    pub seed: u64,
    /// Sorted ascending.
    pub samples: Vec<f64>,
}

impl EmpiricalTail {
    pub fn count_ge(&self, x: f64) -> usize {
        let idx = self.samples.partition_point(|&c| c < x - 1e-9);
        self.samples.len() - idx
    }

    /// Point estimate of `Pr[C >= x]`.
    pub fn tail(&self, x: f64) -> f64 {
        self.count_ge(x) as f64 / self.samples.len() as f64
    }

    /// One-sided Clopper-Pearson upper confidence bound for `Pr[C >= x]`.
    pub fn tail_upper(&self, x: f64, confidence: f64) -> f64 {
        clopper_pearson_upper(self.count_ge(x), self.samples.len(), confidence)
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn std_error(&self) -> f64 {
        let m = self.mean();
        let var = self.samples.iter().map(|c| (c - m).powi(2)).sum::<f64>()
            / (self.samples.len() - 1) as f64;
        (var / self.samples.len() as f64).sqrt()
    }
}

/// log of the binomial CDF `P(X <= k)` for `X ~ Bin(n, p)`, computed by
/// direct summation in log space.
fn binomial_cdf(n: usize, k: usize, p: f64) -> f64 {
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return if k >= n { 1.0 } else { 0.0 };
    }
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let mut log_binom = 0.0f64;
    let mut cdf = (ln_q * n as f64).exp();
    for i in 1..=k {
        log_binom += ((n - i + 1) as f64).ln() - (i as f64).ln();
        cdf += (log_binom + ln_p * i as f64 + ln_q * (n - i) as f64).exp();
    }
    cdf.min(1.0)
}

/// Upper Clopper-Pearson bound: the largest `p` with
/// `P(Bin(n, p) <= k) >= 1 - confidence`, found by bisection.
pub fn clopper_pearson_upper(k: usize, n: usize, confidence: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    let target = 1.0 - confidence;
    let mut lo = k as f64 / n as f64;
    let mut hi = 1.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if binomial_cdf(n, k, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Draw `samples` runs with per-run substreams of `seed`.
pub fn estimate_tail(
    prr: &CanonicalPrr,
    n_star: i64,
    samples: usize,
    seed: u64,
) -> Result<EmpiricalTail, SimError> {
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples {
        let mut rng = SplitMix64::substream(seed, i as u64);
        out.push(run_once(prr, n_star, &mut rng)?);
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(EmpiricalTail {
        n_star,
        seed,
        samples: out,
    })
}

// ---------------------------------------------------------------------------
// Bound validation
// ---------------------------------------------------------------------------

/// One grid point of a validation run.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationRow {
    pub alpha: f64,
    pub n_star: i64,
    pub threshold: f64,
    pub bound: f64,
    pub vacuous: bool,
    pub exceed_count: usize,
    pub tail_point: f64,
    pub tail_upper99: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub rng: &'static str,
    pub seed: u64,
    pub samples: usize,
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "alpha,n_star,threshold,bound,vacuous,exceed_count,tail_point,tail_upper99,pass\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:e},{},{},{:e},{:e},{}\n",
                r.alpha,
                r.n_star,
                r.threshold,
                r.bound,
                r.vacuous,
                r.exceed_count,
                r.tail_point,
                r.tail_upper99,
                r.pass
            ));
        }
        out
    }
}

/// Validate a symbolic bound `u(alpha, n*)` against the empirical tail at
/// threshold `alpha * kappa(n*)`.
///
/// A point passes when the bound is vacuous (`u > 1`), when the 99% upper
/// confidence bound of the tail sits below `u`, or when no sample exceeded
/// the threshold at all (the data cannot refute a bound below the
/// confidence floor).
pub fn validate_bound(
    prr: &CanonicalPrr,
    bound: &dyn Fn(f64, f64) -> f64,
    kappa: &Poly,
    alphas: &[f64],
    n_stars: &[i64],
    samples: usize,
    seed: u64,
) -> Result<ValidationReport, SimError> {
    let mut rows = Vec::new();
    for (i, &n_star) in n_stars.iter().enumerate() {
        let tail = estimate_tail(prr, n_star, samples, seed.wrapping_add(i as u64))?;
        for &alpha in alphas {
            let threshold = alpha * kappa.eval(&Env::n(n_star as f64))?;
            let u = bound(alpha, n_star as f64);
            let vacuous = u > 1.0;
            let count = tail.count_ge(threshold);
            let point = count as f64 / samples as f64;
            let upper = tail.tail_upper(threshold, 0.99);
            let pass = vacuous || upper <= u + 1e-12 || count == 0;
            rows.push(ValidationRow {
                alpha,
                n_star,
                threshold,
                bound: u,
                vacuous,
                exceed_count: count,
                tail_point: point,
                tail_upper99: upper,
                pass,
            });
        }
    }
    Ok(ValidationReport {
        rng: RNG_ALGORITHM,
        seed,
        samples,
        rows,
    })
}

/// Moment-generating-function check (the supermartingale conclusion):
/// sample mean of `exp(t_bar * C)` against `exp(t_bar * f_bar(alpha, n*))`
/// plus three standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct MgfCheck {
    pub alpha: f64,
    pub n_star: i64,
    pub lhs_mean: f64,
    pub lhs_std_error: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub fn mgf_check(
    prr: &CanonicalPrr,
    t_bar: &Poly,
    f_bar: &Poly,
    alpha: f64,
    n_star: i64,
    samples: usize,
    seed: u64,
) -> Result<MgfCheck, SimError> {
    let env = Env::alpha_n(alpha, n_star as f64);
    let t = t_bar.eval(&env)?;
    let rhs = (t * f_bar.eval(&env)?).exp();
    let mut vals = Vec::with_capacity(samples);
    for i in 0..samples {
        let mut rng = SplitMix64::substream(seed, i as u64);
        let c = run_once(prr, n_star, &mut rng)?;
        vals.push((t * c).exp());
    }
    let mean = vals.iter().sum::<f64>() / samples as f64;
    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
    let se = (var / samples as f64).sqrt();
    Ok(MgfCheck {
        alpha,
        n_star,
        lhs_mean: mean,
        lhs_std_error: se,
        rhs,
        pass: mean <= rhs + 3.0 * se,
    })
}

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic), for the
/// canonicalizer-equivalence check.
pub fn ks_two_sample_pvalue(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len(), b.len());
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0f64;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na as f64 * nb as f64) / (na as f64 + nb as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    // Q_KS(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)
    let mut p = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += 2.0 * sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    p.clamp(0.0, 1.0)
}
