//! The twelve-benchmark corpus with published reference data, and the
//! report generators behind `prr-tail bench` and `prr-tail compare`.
//!
//! Reference data (Karp-method bounds, the detailed synthesis rows, the
//! concentration-theorem rows and the concrete-bound tables) is stored
//! verbatim as comparison material; the Karp cookbook itself is not
//! implemented. Synthesis output is diffed against the stored rows by
//! canonical printing, with a match flag per benchmark.

use crate::canonicalizer::{to_canonical, CanonicalPrr};
use crate::lrec::parse;
use crate::sympoly::{parse_exp_bound, parse_poly, Env, Poly};
use crate::synthesizer::{synthesize, SynthError, Synthesis};
use serde::{Deserialize, Serialize};

/// Reference synthesis row: concrete template functions and bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Table3Ref {
    pub f: &'static str,
    pub t: &'static str,
    pub bound: &'static str,
}

/// Reference closed-form concentration bound (time-limit scale plus bound).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CompRef {
    pub kappa: &'static str,
    pub bound: &'static str,
}

/// One published concrete-bound row: `(alpha, n*, ours, karp, ratio)`.
pub type ConcreteRow = (f64, i64, f64, Option<f64>, Option<f64>);

/// A corpus entry: program source plus all published reference data.
#[derive(Debug, Clone)]
pub struct BenchmarkDef {
    pub name: &'static str,
    pub source: &'static str,
    /// Time-limit scale kappa(n*) (single monomial).
    pub kappa: &'static str,
    /// Expected-runtime magnitude for pruning (single monomial).
    pub ep: &'static str,
    /// Karp's-method bound, stored verbatim (None where not applicable).
    pub karp: Option<&'static str>,
    /// Closed-form concentration-theorem reference row.
    pub comp: Option<CompRef>,
    /// Detailed synthesis reference row.
    pub table3: Table3Ref,
    /// Published concrete bounds at (alpha, n*) points.
    pub concrete: &'static [ConcreteRow],
}

impl BenchmarkDef {
    pub fn ast(&self) -> crate::lrec::PrrAst {
        parse(self.source).expect("corpus programs parse")
    }

    pub fn canonical(&self) -> CanonicalPrr {
        to_canonical(&self.ast()).0
    }

    pub fn kappa_poly(&self) -> Poly {
        parse_poly(self.kappa).expect("corpus kappa parses")
    }

    pub fn ep_poly(&self) -> Poly {
        parse_poly(self.ep).expect("corpus ep parses")
    }

    pub fn synthesize(&self, b: u32, m: u32, q: u32) -> Result<Synthesis, SynthError> {
        synthesize(
            &self.canonical(),
            &self.kappa_poly(),
            &self.ep_poly(),
            b,
            m,
            q,
        )
    }
}

/// The benchmark corpus, in the published table order.
pub fn corpus() -> Vec<BenchmarkDef> {
    vec![
        BenchmarkDef {
            name: "QuickSelect",
            source: include_str!("../benchmarks/quickselect.prr"),
            kappa: "n",
            ep: "4*n",
            karp: Some("exp(1.15-0.28*alpha)"),
            comp: Some(CompRef {
                kappa: "4*n",
                bound: "exp(-2*(alpha-1)^2/alpha)",
            }),
            table3: Table3Ref {
                f: "2*alpha*ln(alpha)^-1*n",
                t: "ln(alpha)*n^-1",
                bound: "exp(2*alpha - alpha*ln(alpha))",
            },
            concrete: &[
                (10.0, 13, 4.85e-2, Some(1.92e-1), Some(3.96)),
                (11.0, 15, 1.26e-2, Some(1.45e-1), Some(11.6)),
                (12.0, 17, 2.97e-3, Some(1.10e-1), Some(36.9)),
            ],
        },
        BenchmarkDef {
            name: "QuickSort",
            source: include_str!("../benchmarks/quicksort.prr"),
            kappa: "n*ln(n)",
            ep: "2*n*ln(n)",
            karp: Some("exp(0.5-0.5*alpha)"),
            comp: Some(CompRef {
                kappa: "2*n*ln(n)",
                bound: "exp(-0.7*(alpha-1)^2/alpha*ln(n))",
            }),
            table3: Table3Ref {
                f: "4*n*ln(n)",
                t: "n^-1",
                bound: "exp(4*ln(n) - alpha*ln(n))",
            },
            concrete: &[
                (10.0, 13, 2.07e-7, Some(1.11e-2), Some(5.36e4)),
                (11.0, 15, 5.85e-9, Some(6.74e-3), Some(1.15e6)),
                (12.0, 17, 1.43e-10, Some(4.09e-3), Some(2.85e7)),
            ],
        },
        BenchmarkDef {
            name: "L1Diameter",
            source: include_str!("../benchmarks/l1diameter.prr"),
            kappa: "n",
            ep: "2*n",
            karp: Some("exp(1.39-0.69*alpha)"),
            comp: Some(CompRef {
                kappa: "2*n",
                bound: "exp(-(alpha-1)^2/alpha)",
            }),
            table3: Table3Ref {
                f: "alpha*ln(alpha)^-1*n",
                t: "ln(alpha)*n^-1",
                bound: "exp(alpha - alpha*ln(alpha))",
            },
            concrete: &[
                (10.0, 13, 2.20e-6, Some(4.05e-3), Some(1.84e3)),
                (11.0, 15, 2.10e-7, Some(2.03e-3), Some(9.67e3)),
                (12.0, 17, 1.83e-8, Some(1.02e-3), Some(5.58e4)),
            ],
        },
        BenchmarkDef {
            name: "L2Diameter",
            source: include_str!("../benchmarks/l2diameter.prr"),
            kappa: "n*ln(n)",
            ep: "2*n*ln(n)",
            karp: Some("exp(1.39-0.69*alpha)"),
            comp: Some(CompRef {
                kappa: "2*n*ln(n)",
                bound: "exp(-(alpha-1)^2/alpha)",
            }),
            table3: Table3Ref {
                f: "alpha*ln(alpha)^-1*n*ln(n)",
                t: "ln(alpha)*n^-1*ln(n)^-1",
                bound: "exp(alpha - alpha*ln(alpha))",
            },
            concrete: &[
                (10.0, 13, 2.20e-6, Some(4.05e-3), Some(1.84e3)),
                (11.0, 15, 2.10e-7, Some(2.03e-3), Some(9.67e3)),
                (12.0, 17, 1.83e-8, Some(1.02e-3), Some(5.58e4)),
            ],
        },
        BenchmarkDef {
            name: "RandSearch",
            source: include_str!("../benchmarks/randsearch.prr"),
            kappa: "ln(n)",
            ep: "3.4761*ln(n)",
            karp: Some("exp(-0.29*alpha*ln(n))"),
            comp: Some(CompRef {
                kappa: "ln(n)/ln(4/3)",
                bound: "exp(-1.19*(alpha-1)^2/alpha*ln(n))",
            }),
            table3: Table3Ref {
                f: "2*alpha*ln(alpha)^-1*ln(n)",
                t: "ln(alpha)",
                bound: "exp(2*alpha*ln(n) - alpha*ln(alpha)*ln(n))",
            },
            concrete: &[
                (10.0, 13, 4.26e-4, Some(5.88e-4), Some(1.38)),
                (11.0, 15, 7.12e-6, Some(1.77e-4), Some(24.9)),
                (12.0, 17, 6.92e-8, Some(5.22e-5), Some(755.0)),
            ],
        },
        BenchmarkDef {
            name: "Channel",
            source: include_str!("../benchmarks/channel.prr"),
            kappa: "n",
            ep: "e*n",
            karp: Some("exp(1-0.37*alpha)"),
            comp: Some(CompRef {
                kappa: "e*n",
                bound: "exp(-0.74*(alpha-1)^2/alpha*n)",
            }),
            table3: Table3Ref {
                f: "8*n",
                t: "1",
                bound: "exp(8*n - alpha*n)",
            },
            concrete: &[
                (10.0, 13, 2.61e-23, Some(6.72e-2), Some(2.57e21)),
                (11.0, 15, 4.84e-30, Some(4.64e-2), Some(9.59e27)),
                (12.0, 17, 1.22e-37, Some(3.21e-2), Some(2.64e35)),
            ],
        },
        BenchmarkDef {
            name: "Rdwalk",
            source: include_str!("../benchmarks/rdwalk.prr"),
            kappa: "n",
            ep: "0.6667*n",
            karp: Some("exp(0.60-0.41*alpha)"),
            comp: Some(CompRef {
                kappa: "0.5*n",
                bound: "exp(-1/3*(alpha-1)^2/alpha*n)",
            }),
            table3: Table3Ref {
                f: "0.5*n",
                t: "1",
                bound: "exp(0.5*n - alpha*n)",
            },
            concrete: &[
                (10.0, 13, 1.98e-13, Some(3.02e-2), Some(1.52e11)),
                (11.0, 15, 5.18e-17, Some(2.00e-2), Some(3.87e14)),
                (12.0, 17, 4.97e-21, Some(1.33e-2), Some(2.67e18)),
            ],
        },
        BenchmarkDef {
            name: "Rdadder",
            source: include_str!("../benchmarks/rdadder.prr"),
            kappa: "n",
            ep: "1.5*n",
            karp: None,
            comp: Some(CompRef {
                kappa: "3*n",
                bound: "exp(-(alpha-1)^2/alpha*n)",
            }),
            table3: Table3Ref {
                f: "8*n",
                t: "0.5",
                bound: "exp(4*n - 0.5*alpha*n)",
            },
            concrete: &[
                (10.0, 13, 1.98e-13, None, None),
                (11.0, 15, 5.18e-17, None, None),
                (12.0, 17, 4.97e-21, None, None),
            ],
        },
        BenchmarkDef {
            name: "MC1",
            source: include_str!("../benchmarks/mc1.prr"),
            kappa: "ln(n)",
            ep: "1.4427*ln(n)",
            karp: Some("exp(-0.69*alpha*ln(n))"),
            comp: None,
            table3: Table3Ref {
                f: "alpha*ln(alpha)^-1*ln(n)",
                t: "ln(alpha)",
                bound: "exp(alpha*ln(n) - alpha*ln(alpha)*ln(n))",
            },
            concrete: &[
                (10.0, 13, 3.09e-15, Some(2.06e-8), Some(6.67e6)),
                (11.0, 15, 8.23e-19, Some(1.18e-9), Some(1.44e9)),
                (12.0, 17, 1.19e-22, Some(6.48e-11), Some(5.46e11)),
            ],
        },
        BenchmarkDef {
            name: "MC2",
            source: include_str!("../benchmarks/mc2.prr"),
            kappa: "ln(n)^2",
            ep: "0.5*ln(n)^2",
            karp: Some("exp(-0.69*alpha*ln(n))"),
            comp: None,
            table3: Table3Ref {
                f: "alpha*ln(alpha)^-1*ln(n)^2",
                t: "ln(alpha)*ln(n)^-1",
                bound: "exp(alpha*ln(n) - alpha*ln(alpha)*ln(n))",
            },
            concrete: &[
                (10.0, 13, 3.09e-15, Some(2.06e-8), Some(6.67e6)),
                (11.0, 15, 8.23e-19, Some(1.18e-9), Some(1.44e9)),
                (12.0, 17, 1.19e-22, Some(6.48e-11), Some(5.46e11)),
            ],
        },
        BenchmarkDef {
            name: "MC3",
            source: include_str!("../benchmarks/mc3.prr"),
            kappa: "n*ln(n)^2",
            ep: "4*n*ln(n)",
            karp: Some("exp(1.15-0.28*alpha)"),
            comp: Some(CompRef {
                kappa: "2*n*ln(n)^2",
                bound: "exp(-(alpha-1)^2/alpha)",
            }),
            table3: Table3Ref {
                f: "2*alpha*ln(alpha)^-1*n*ln(n)^2",
                t: "ln(alpha)*n^-1*ln(n)^-2",
                bound: "exp(2*alpha - alpha*ln(alpha))",
            },
            concrete: &[
                (10.0, 13, 4.85e-2, Some(1.92e-1), Some(3.96)),
                (11.0, 15, 1.26e-2, Some(1.45e-1), Some(11.6)),
                (12.0, 17, 2.97e-3, Some(1.10e-1), Some(36.9)),
            ],
        },
        BenchmarkDef {
            name: "MC4",
            source: include_str!("../benchmarks/mc4.prr"),
            kappa: "n",
            ep: "4*n",
            karp: None,
            comp: Some(CompRef {
                kappa: "2.5*n",
                bound: "exp(-(alpha-1)^2/alpha)",
            }),
            table3: Table3Ref {
                f: "2*alpha*ln(alpha)^-1*n",
                t: "ln(alpha)*n^-1",
                bound: "exp(2*alpha - alpha*ln(alpha))",
            },
            concrete: &[
                (10.0, 13, 2.20e-6, None, None),
                (11.0, 15, 2.10e-7, None, None),
                (12.0, 17, 1.83e-8, None, None),
            ],
        },
    ]
}

pub fn find(name: &str) -> Option<BenchmarkDef> {
    corpus()
        .into_iter()
        .find(|b| b.name.eq_ignore_ascii_case(name))
}

/// One row of the `bench` report.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub name: String,
    pub kappa: String,
    pub f: String,
    pub t: String,
    pub bound: String,
    pub time_s: f64,
    /// Canonical-print equality with the stored synthesis reference.
    pub matches_reference: bool,
    pub reference_bound: String,
    pub karp: Option<String>,
    pub raw_templates: usize,
    pub pruned_templates: usize,
}

/// Canonical printing of a reference polynomial expression.
pub fn canon_str(expr: &str) -> String {
    parse_exp_bound(expr)
        .map(|p| p.to_string())
        .unwrap_or_else(|_| expr.to_string())
}

/// Synthesize a selection of benchmarks and diff against the references.
pub fn run_benchmarks(
    selection: Option<&str>,
    b: u32,
    m: u32,
    q: u32,
) -> Result<Vec<BenchRow>, SynthError> {
    let mut rows = Vec::new();
    for def in corpus() {
        if let Some(name) = selection {
            if !def.name.eq_ignore_ascii_case(name) {
                continue;
            }
        }
        let started = std::time::Instant::now();
        let synth = def.synthesize(b, m, q)?;
        let time_s = started.elapsed().as_secs_f64();
        let cand = &synth.candidate;
        let matches_reference = cand.f_bar.to_string() == canon_str(def.table3.f)
            && cand.t_bar.to_string() == canon_str(def.table3.t)
            && cand.bound_string() == format!("exp({})", canon_str(def.table3.bound));
        rows.push(BenchRow {
            name: def.name.to_string(),
            kappa: def.kappa.to_string(),
            f: cand.f_bar.to_string(),
            t: cand.t_bar.to_string(),
            bound: cand.bound_string(),
            time_s,
            matches_reference,
            reference_bound: format!("exp({})", canon_str(def.table3.bound)),
            karp: def.karp.map(|k| k.to_string()),
            raw_templates: synth.raw_count,
            pruned_templates: synth.pruned_count,
        });
    }
    Ok(rows)
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV rendering of the bench report (the shape of the committed golden file).
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("benchmark,kappa,f,t,bound,reference_bound,match,karp\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.name,
            csv_escape(&r.kappa),
            csv_escape(&r.f),
            csv_escape(&r.t),
            csv_escape(&r.bound),
            csv_escape(&r.reference_bound),
            r.matches_reference,
            csv_escape(r.karp.as_deref().unwrap_or("-")),
        ));
    }
    out
}

/// One row of a concrete-bound comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub alpha: f64,
    pub n_star: i64,
    pub ours: f64,
    pub ours_reference: Option<f64>,
    pub karp: Option<f64>,
    pub ratio: Option<f64>,
    pub ratio_reference: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub benchmark: String,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error("unknown benchmark '{0}'")]
    UnknownBenchmark(String),
    #[error("benchmark '{0}' has no stored Karp reference")]
    MissingReference(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Sym(#[from] crate::sympoly::SymError),
}

/// Evaluate the synthesized bound and the stored Karp bound at concrete
/// points; `points = None` uses the published rows.
pub fn compare_reference(
    name: &str,
    points: Option<&[(f64, i64)]>,
    b: u32,
    m: u32,
    q: u32,
) -> Result<ComparisonTable, CompareError> {
    let def = find(name).ok_or_else(|| CompareError::UnknownBenchmark(name.to_string()))?;
    let karp_expr = def
        .karp
        .ok_or_else(|| CompareError::MissingReference(name.to_string()))?;
    let karp = parse_exp_bound(karp_expr).expect("stored Karp bounds parse");
    let synth = def.synthesize(b, m, q)?;
    let pts: Vec<(f64, i64)> = match points {
        Some(p) => p.to_vec(),
        None => def.concrete.iter().map(|&(a, n, ..)| (a, n)).collect(),
    };
    let mut rows = Vec::new();
    for (alpha, n_star) in pts {
        let ours = synth.candidate.eval(alpha, n_star as f64)?;
        let karp_val = karp.eval(&Env::alpha_n(alpha, n_star as f64))?.exp();
        let stored = def
            .concrete
            .iter()
            .find(|&&(a, n, ..)| a == alpha && n == n_star)
            .copied();
        rows.push(ComparisonRow {
            alpha,
            n_star,
            ours,
            ours_reference: stored.map(|(_, _, o, ..)| o),
            karp: Some(karp_val),
            ratio: Some(karp_val / ours),
            ratio_reference: stored.and_then(|(.., r)| r),
        });
    }
    Ok(ComparisonTable {
        benchmark: def.name.to_string(),
        rows,
    })
}

/// Two-column gnuplot data `(alpha, bound)` over the published plot range
/// `alpha in [10, 15]` at `n* = 17`, for our bound and the Karp reference.
pub fn plot_data(
    name: &str,
    b: u32,
    m: u32,
    q: u32,
) -> Result<(String, Option<String>), CompareError> {
    let def = find(name).ok_or_else(|| CompareError::UnknownBenchmark(name.to_string()))?;
    let synth = def.synthesize(b, m, q)?;
    let n_star = 17.0;
    let mut ours = String::from("# alpha  bound\n");
    let mut alpha = 10.0;
    while alpha <= 15.0 + 1e-9 {
        ours.push_str(&format!(
            "{alpha:.2} {:e}\n",
            synth.candidate.eval(alpha, n_star)?
        ));
        alpha += 0.1;
    }
    let karp = match def.karp {
        Some(expr) => {
            let poly = parse_exp_bound(expr).expect("stored Karp bounds parse");
            let mut out = String::from("# alpha  bound\n");
            let mut a = 10.0;
            while a <= 15.0 + 1e-9 {
                out.push_str(&format!(
                    "{a:.2} {:e}\n",
                    poly.eval(&Env::alpha_n(a, n_star))?.exp()
                ));
                a += 0.1;
            }
            Some(out)
        }
        None => None,
    };
    Ok((ours, karp))
}

/// External benchmark-config schema (mirrors the shipped `benchmarks.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub name: String,
    pub prr: String,
    pub kappa: String,
    pub ep: String,
    #[serde(default)]
    pub karp: Option<String>,
    #[serde(default)]
    pub comp: Option<BenchConfigComp>,
    pub table3: BenchConfigTable3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfigComp {
    pub kappa: String,
    pub bound: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfigTable3 {
    pub f: String,
    pub t: String,
    pub bound: String,
}

/// The shipped `benchmarks.json` contents, generated from the corpus.
pub fn config_json() -> serde_json::Value {
    serde_json::Value::Array(
        corpus()
            .iter()
            .map(|d| {
                serde_json::json!({
                    "name": d.name,
                    "prr": format!("benchmarks/{}.prr", d.name.to_ascii_lowercase()),
                    "kappa": d.kappa,
                    "ep": d.ep,
                    "karp": d.karp,
                    "comp": d.comp.map(|c| serde_json::json!({"kappa": c.kappa, "bound": c.bound})),
                    "table3": {"f": d.table3.f, "t": d.table3.t, "bound": d.table3.bound},
                })
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrec::validate;

    #[test]
    fn corpus_parses_and_validates_clean() {
        for def in corpus() {
            let ast = def.ast();
            let violations = validate(&ast);
            assert!(violations.is_empty(), "{}: {violations:?}", def.name);
            let canon = def.canonical();
            assert!((canon.total_prob() - 1.0).abs() < 1e-9, "{}", def.name);
        }
    }

    #[test]
    fn reference_expressions_parse() {
        for def in corpus() {
            parse_exp_bound(def.table3.bound).unwrap();
            parse_poly(def.table3.f).unwrap();
            parse_poly(def.table3.t).unwrap();
            parse_poly(def.kappa).unwrap();
            parse_poly(def.ep).unwrap();
            if let Some(k) = def.karp {
                parse_exp_bound(k).unwrap();
            }
            if let Some(c) = def.comp {
                parse_poly(c.kappa).unwrap();
            }
        }
    }

    #[test]
    fn quickselect_row_matches_reference() {
        let rows = run_benchmarks(Some("QuickSelect"), 2, 4, 8).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].matches_reference, "{rows:?}");
        assert_eq!(rows[0].bound, "exp(2*alpha - alpha*ln(alpha))");
    }

    #[test]
    fn compare_quickselect_concrete_points() {
        let table = compare_reference("QuickSelect", None, 2, 4, 8).unwrap();
        for row in &table.rows {
            let want = row.ours_reference.unwrap();
            assert!((row.ours - want).abs() / want < 5e-3, "{row:?}");
            let want_ratio = row.ratio_reference.unwrap();
            assert!(
                (row.ratio.unwrap() - want_ratio).abs() / want_ratio < 5e-3,
                "{row:?}"
            );
        }
    }

    #[test]
    fn missing_karp_reference_is_an_error() {
        assert!(matches!(
            compare_reference("Rdadder", None, 2, 4, 8),
            Err(CompareError::MissingReference(_))
        ));
    }

    #[test]
    fn plot_data_has_expected_range() {
        let (ours, karp) = plot_data("QuickSelect", 2, 4, 8).unwrap();
        assert_eq!(ours.lines().count(), 52); // header + 51 points
        assert!(karp.unwrap().starts_with("# alpha"));
    }
}
