//! `prr-tail`: synthesize, simulate and validate exponential tail bounds for
//! probabilistic recurrence relations written in LRec.

use clap::{Parser, Subcommand};
use prr_tail::bench;
use prr_tail::canonicalizer::to_canonical;
use prr_tail::decider::decide;
use prr_tail::simulator;
use prr_tail::strengthener::{strengthen_prr, Trace};
use prr_tail::sympoly::{parse_exp_bound, parse_poly, Env, Poly};
use prr_tail::synthesizer::{synthesize, synthesize_all};
use prr_tail::theory;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "prr-tail", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a symbolic tail bound for Pr[C >= alpha * kappa(n*)].
    Synth {
        /// LRec program (.prr).
        file: PathBuf,
        /// Time-limit scale kappa(n*), e.g. "n" or "n*ln(n)".
        #[arg(long)]
        kappa: String,
        /// Expected-runtime magnitude for pruning, e.g. "4*n".
        #[arg(long)]
        ep: String,
        /// Template exponent range [-B, B].
        #[arg(long = "B", default_value_t = 2)]
        b: u32,
        /// Doubling/halving steps in the coefficient search.
        #[arg(long = "M", default_value_t = 4)]
        m: u32,
        /// Slab count for the divide-and-conquer split.
        #[arg(long = "Q", default_value_t = 8)]
        q: u32,
        /// Report every accepted template, not just the first.
        #[arg(long)]
        all_templates: bool,
        /// Machine-readable output with the strengthening trace.
        #[arg(long)]
        json: bool,
    },
    /// Sample total costs from the Markov-chain semantics.
    Simulate {
        file: PathBuf,
        /// Input size n*.
        #[arg(long)]
        n: i64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the sample array as CSV (one `cost` column).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Validate a symbolic bound against empirical tails on a grid.
    Verify {
        file: PathBuf,
        /// Bound expression, e.g. "exp(2*alpha - alpha*ln(alpha))".
        #[arg(long)]
        bound: String,
        #[arg(long)]
        kappa: String,
        /// Comma-separated alpha values, e.g. "4,8,16".
        #[arg(long)]
        alpha: String,
        /// Comma-separated n* values, e.g. "64,256".
        #[arg(long)]
        n: String,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit the validation report as JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Closed-form concentration bound: expected-runtime oracle, (A1)
    /// constants, then exp(-2(a-1)^2/(a(M2-M1)^2) E[p]/E[S]).
    CompBound {
        file: PathBuf,
        /// Symbolic E[p(n)] (single monomial), e.g. "4*n".
        #[arg(long)]
        ep: String,
        #[arg(long, default_value_t = 1000)]
        n_max: u32,
    },
    /// Synthesize the benchmark corpus and diff against the published rows.
    Bench {
        /// Run the full corpus.
        #[arg(long, conflicts_with = "name")]
        all: bool,
        /// Run one benchmark by name.
        #[arg(long)]
        name: Option<String>,
        /// Write bench.csv / bench.json / benchmarks.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Concrete-bound comparison against the stored Karp references.
    Compare {
        #[arg(long)]
        name: String,
        /// Points "alpha,n;alpha,n;...", default: the published rows.
        #[arg(long)]
        points: Option<String>,
        /// Also write gnuplot data files (alpha in [10,15], n* = 17) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_prr(path: &PathBuf) -> Result<prr_tail::CanonicalPrr, String> {
    let src = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let ast = prr_tail::parse(&src).map_err(|e| e.to_string())?;
    let violations = prr_tail::validate(&ast);
    if !violations.is_empty() {
        return Err(format!("program is not well-formed: {violations:?}"));
    }
    let (canon, warnings) = to_canonical(&ast);
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(canon)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<T>()
                .map_err(|e| format!("bad list entry '{x}': {e}"))
        })
        .collect()
}

fn run() -> Result<(), String> {
    match Cli::parse().command {
        Cmd::Synth {
            file,
            kappa,
            ep,
            b,
            m,
            q,
            all_templates,
            json,
        } => {
            let prr = load_prr(&file)?;
            let kappa = parse_poly(&kappa).map_err(|e| e.to_string())?;
            let ep = parse_poly(&ep).map_err(|e| e.to_string())?;
            if all_templates {
                let all = synthesize_all(&prr, &kappa, &ep, b, m, q).map_err(|e| e.to_string())?;
                if all.is_empty() {
                    return Err("no template admits valid coefficients".into());
                }
                for cand in &all {
                    println!(
                        "f = {:<34} t = {:<26} bound = {}",
                        cand.f_bar.to_string(),
                        cand.t_bar.to_string(),
                        cand.bound_string()
                    );
                }
                return Ok(());
            }
            let synth = synthesize(&prr, &kappa, &ep, b, m, q).map_err(|e| e.to_string())?;
            let cand = &synth.candidate;
            if json {
                let mut trace: Trace = Vec::new();
                let constraint =
                    strengthen_prr(&prr, &cand.f_bar, &cand.t_bar, q, Some(&mut trace))
                        .map_err(|e| e.to_string())?;
                let report = decide(&constraint).map_err(|e| e.to_string())?;
                let doc = serde_json::json!({
                    "f": cand.f_bar.to_string(),
                    "t": cand.t_bar.to_string(),
                    "bound": cand.bound_string(),
                    "c_f": cand.c_f,
                    "c_t": cand.c_t,
                    "template": cand.template,
                    "raw_templates": synth.raw_count,
                    "pruned_templates": synth.pruned_count,
                    "templates_tried": synth.templates_tried,
                    "constraint": constraint.to_json(),
                    "decide": report,
                    "trace": trace,
                });
                println!("{}", serde_json::to_string_pretty(&doc).unwrap());
            } else {
                println!("f(alpha, n) = {}", cand.f_bar);
                println!("t(alpha, n) = {}", cand.t_bar);
                println!("Pr[C >= alpha*{}] <= {}", kappa, cand.bound_string());
            }
            Ok(())
        }
        Cmd::Simulate {
            file,
            n,
            samples,
            seed,
            csv,
        } => {
            let prr = load_prr(&file)?;
            let tail =
                simulator::estimate_tail(&prr, n, samples, seed).map_err(|e| e.to_string())?;
            println!(
                "n* = {n}, samples = {samples}, seed = {seed}, rng = {}",
                simulator::RNG_ALGORITHM
            );
            println!(
                "mean cost = {:.4} (se {:.4})",
                tail.mean(),
                tail.std_error()
            );
            let max = tail.samples.last().copied().unwrap_or(0.0);
            println!("max cost  = {max:.4}");
            if let Some(path) = csv {
                let mut out = String::from("cost\n");
                for c in &tail.samples {
                    out.push_str(&format!("{c}\n"));
                }
                std::fs::write(&path, out).map_err(|e| e.to_string())?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Cmd::Verify {
            file,
            bound,
            kappa,
            alpha,
            n,
            samples,
            seed,
            json,
            csv,
        } => {
            let prr = load_prr(&file)?;
            let expo = parse_exp_bound(&bound).map_err(|e| e.to_string())?;
            let kappa = parse_poly(&kappa).map_err(|e| e.to_string())?;
            let alphas: Vec<f64> = parse_list(&alpha)?;
            let ns: Vec<i64> = parse_list(&n)?;
            let eval = |a: f64, nn: f64| {
                expo.eval(&Env::alpha_n(a, nn))
                    .map(|x| x.exp())
                    .unwrap_or(f64::INFINITY)
            };
            let report =
                simulator::validate_bound(&prr, &eval, &kappa, &alphas, &ns, samples, seed)
                    .map_err(|e| e.to_string())?;
            if let Some(path) = &csv {
                std::fs::write(path, report.to_csv()).map_err(|e| e.to_string())?;
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
                return if report.all_pass() {
                    Ok(())
                } else {
                    Err("bound refuted on the grid".into())
                };
            }
            for r in &report.rows {
                println!(
                    "alpha={:<6} n*={:<6} threshold={:<12.2} bound={:<12.4e} tail={:<9.2e} ci99={:<12.4e} {}",
                    r.alpha,
                    r.n_star,
                    r.threshold,
                    r.bound,
                    r.tail_point,
                    r.tail_upper99,
                    if r.pass { "PASS" } else { "FAIL" }
                );
            }
            if report.all_pass() {
                Ok(())
            } else {
                Err("bound refuted on the grid".into())
            }
        }
        Cmd::CompBound { file, ep, n_max } => {
            let prr = load_prr(&file)?;
            let ep_sym = parse_poly(&ep).map_err(|e| e.to_string())?;
            let runtime = theory::solve_expected_runtime(&prr, n_max).map_err(|e| e.to_string())?;
            let lo = prr.c_p.max(10).min(n_max);
            let hi = n_max.min(500).max(lo);
            let (m_lo, m_hi) =
                theory::estimate_a1_constants(&prr, &runtime, lo, hi).map_err(|e| e.to_string())?;
            let a2 = theory::expected_pre_nondecreasing(&prr, n_max.min(1000))
                .map_err(|e| e.to_string())?;
            let es_sym: Poly = prr
                .branches
                .iter()
                .fold(Poly::zero(), |acc, b| acc.add(&b.pre.scale(b.prob)));
            let bound =
                theory::comp_tail_bound(&ep_sym, &es_sym, m_lo, m_hi).map_err(|e| e.to_string())?;
            println!(
                "E[p({n_max})] = {:.4} (dynamic program)",
                runtime.at(n_max as i64).unwrap()
            );
            println!("(A1) constants over n in [{lo}, {hi}]: M' = {m_lo:.4}, M = {m_hi:.4}");
            println!("(A2) E[S(n)] non-decreasing: {a2}");
            println!("Pr[C >= alpha*E[p(n*)]] <= {bound}");
            Ok(())
        }
        Cmd::Bench { all, name, out } => {
            if !all && name.is_none() {
                return Err("pass --all or --name <benchmark>".into());
            }
            let rows =
                bench::run_benchmarks(name.as_deref(), 2, 4, 8).map_err(|e| e.to_string())?;
            if rows.is_empty() {
                return Err(format!("unknown benchmark '{}'", name.unwrap_or_default()));
            }
            println!(
                "{:<12} {:<10} {:<34} {:<26} {:<44} {:<6} {:>8}",
                "benchmark", "kappa", "f", "t", "bound", "match", "time"
            );
            for r in &rows {
                println!(
                    "{:<12} {:<10} {:<34} {:<26} {:<44} {:<6} {:>7.3}s",
                    r.name, r.kappa, r.f, r.t, r.bound, r.matches_reference, r.time_s
                );
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                std::fs::write(dir.join("bench.csv"), bench::bench_csv(&rows))
                    .map_err(|e| e.to_string())?;
                std::fs::write(
                    dir.join("bench.json"),
                    serde_json::to_string_pretty(&rows).unwrap(),
                )
                .map_err(|e| e.to_string())?;
                std::fs::write(
                    dir.join("benchmarks.json"),
                    serde_json::to_string_pretty(&bench::config_json()).unwrap(),
                )
                .map_err(|e| e.to_string())?;
                println!("wrote reports into {}", dir.display());
            }
            Ok(())
        }
        Cmd::Compare { name, points, out } => {
            let pts: Option<Vec<(f64, i64)>> = match points {
                None => None,
                Some(s) => Some(
                    s.split(';')
                        .map(|pair| {
                            let mut it = pair.split(',');
                            let a = it
                                .next()
                                .and_then(|x| x.trim().parse().ok())
                                .ok_or_else(|| format!("bad point '{pair}'"))?;
                            let n = it
                                .next()
                                .and_then(|x| x.trim().parse().ok())
                                .ok_or_else(|| format!("bad point '{pair}'"))?;
                            Ok((a, n))
                        })
                        .collect::<Result<Vec<_>, String>>()?,
                ),
            };
            let table = bench::compare_reference(&name, pts.as_deref(), 2, 4, 8)
                .map_err(|e| e.to_string())?;
            println!(
                "{:<8} {:<6} {:<12} {:<12} {:<10}",
                "alpha", "n*", "ours", "karp", "ratio"
            );
            for r in &table.rows {
                println!(
                    "{:<8} {:<6} {:<12.3e} {:<12.3e} {:<10.3}",
                    r.alpha,
                    r.n_star,
                    r.ours,
                    r.karp.unwrap_or(f64::NAN),
                    r.ratio.unwrap_or(f64::NAN)
                );
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                let (ours, karp) = bench::plot_data(&name, 2, 4, 8).map_err(|e| e.to_string())?;
                std::fs::write(dir.join(format!("{name}_ours.dat")), ours)
                    .map_err(|e| e.to_string())?;
                if let Some(k) = karp {
                    std::fs::write(dir.join(format!("{name}_karp.dat")), k)
                        .map_err(|e| e.to_string())?;
                }
                println!("wrote plot data into {}", dir.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
