//! Flattening of an LRec AST into the canonical branch form: the joint
//! distribution of (preprocessing cost, sizes, call count) as a flat list of
//! probabilistic branches. Nested choices multiply out; each `sample` leaf
//! becomes one branch.

use crate::lrec::{CallForm, Command, Dist, PrrAst};
use crate::sympoly::Poly;

/// One probabilistic branch of the canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Branch probability in (0, 1].
    pub prob: f64,
    /// Deterministic preprocessing cost S(n) of this branch.
    pub pre: Poly,
    pub dist: Dist,
    pub call: CallForm,
}

impl Branch {
    /// Number of recursive calls (1 or 2).
    pub fn r(&self) -> u8 {
        match self.call {
            CallForm::DivideAndConquer(_) => 2,
            _ => 1,
        }
    }
}

/// Canonical form of a PRR: threshold plus flattened branches.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPrr {
    pub c_p: u32,
    pub branches: Vec<Branch>,
}

impl CanonicalPrr {
    pub fn total_prob(&self) -> f64 {
        self.branches.iter().map(|b| b.prob).sum()
    }

    /// Debug dump of the flattened branches.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "c_p": self.c_p,
            "branches": self.branches.iter().map(|b| {
                let dist = match &b.dist {
                    Dist::Uniform => "uniform(n)".to_string(),
                    Dist::MUniform => "muniform(n)".to_string(),
                    Dist::Discrete(arms) => format!(
                        "discrete{{{}}}",
                        arms.iter()
                            .map(|(p, value)| format!("{p}: {value}"))
                            .collect::<Vec<_>>()
                            .join(", ")
                    ),
                    Dist::PiecewiseUniform(pieces) => format!(
                        "puniform{{{}}}",
                        pieces
                            .iter()
                            .map(|piece| format!("[{}, {}]: {}", piece.lo, piece.hi, piece.weight))
                            .collect::<Vec<_>>()
                            .join(", ")
                    ),
                };
                let (size1, size2) = match &b.call {
                    CallForm::SingleV => ("v".to_string(), None),
                    CallForm::SingleSizeMinusV(sb) => (format!("{sb}-v"), None),
                    CallForm::DivideAndConquer(sb) => ("v".to_string(), Some(format!("{sb}-v"))),
                };
                serde_json::json!({
                    "prob": b.prob,
                    "pre": b.pre.to_string(),
                    "dist": dist,
                    "r": b.r(),
                    "size1": size1,
                    "size2": size2,
                })
            }).collect::<Vec<_>>(),
        })
    }
}

/// Flatten a validated AST. Branches with probability below 1e-12 are
/// dropped; their labels are returned as warnings.
pub fn to_canonical(ast: &PrrAst) -> (CanonicalPrr, Vec<String>) {
    let mut branches = Vec::new();
    let mut warnings = Vec::new();
    walk(&ast.body, 1.0, &mut branches, &mut warnings);
    (
        CanonicalPrr {
            c_p: ast.c_p,
            branches,
        },
        warnings,
    )
}

fn walk(c: &Command, prob: f64, out: &mut Vec<Branch>, warnings: &mut Vec<String>) {
    match c {
        Command::Choice(arms) => {
            for (p, inner) in arms {
                let q = prob * p.value;
                if q < 1e-12 {
                    warnings.push(format!("dropping branch with probability {q:e}"));
                    continue;
                }
                walk(inner, q, out, warnings);
            }
        }
        Command::Sample { dist, body, .. } => {
            out.push(Branch {
                prob,
                pre: body.pre.clone(),
                dist: dist.clone(),
                call: body.call.clone(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrec::{parse, SizeBase};
    use crate::sympoly::Sym;

    #[test]
    fn quickselect_single_branch() {
        let ast =
            parse("def p(n; 2) = { sample v <- muniform(n) in { pre(n); invoke p(v); } }").unwrap();
        let (canon, warnings) = to_canonical(&ast);
        assert!(warnings.is_empty());
        assert_eq!(canon.branches.len(), 1);
        let b = &canon.branches[0];
        assert_eq!(b.prob, 1.0);
        assert_eq!(b.pre, Poly::sym(Sym::N));
        assert_eq!(b.dist, Dist::MUniform);
        assert_eq!(b.call, CallForm::SingleV);
        assert_eq!(b.r(), 1);
    }

    #[test]
    fn quicksort_divide_and_conquer_branch() {
        let ast =
            parse("def p(n; 2) = { sample v <- uniform(n) in { pre(n); invoke p(v); p(n-1-v); } }")
                .unwrap();
        let (canon, _) = to_canonical(&ast);
        assert_eq!(canon.branches.len(), 1);
        assert_eq!(
            canon.branches[0].call,
            CallForm::DivideAndConquer(SizeBase::N_MINUS_1)
        );
        assert_eq!(canon.branches[0].r(), 2);
    }

    #[test]
    fn channel_two_branches() {
        let ast = parse(
            "def p(n; 2) = { with { 1/e: { pre(1); invoke p(n-1); }; 1-1/e: { pre(1); invoke p(n); }; } }",
        )
        .unwrap();
        let (canon, _) = to_canonical(&ast);
        assert_eq!(canon.branches.len(), 2);
        let e = std::f64::consts::E;
        assert!((canon.branches[0].prob - 1.0 / e).abs() < 1e-12);
        assert!((canon.branches[1].prob - (1.0 - 1.0 / e)).abs() < 1e-12);
        assert!((canon.total_prob() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_dump_describes_branches() {
        let ast = parse(
            "def p(n; 2) = { with { 1/e: { pre(1); invoke p(n-1); }; 1-1/e: { pre(1); invoke p(n); }; } }",
        )
        .unwrap();
        let (canon, _) = to_canonical(&ast);
        let doc = canon.to_json();
        assert_eq!(doc["branches"][0]["dist"], "discrete{1: n - 1}");
        assert_eq!(doc["branches"][0]["r"], 1);
        assert_eq!(doc["branches"][0]["size1"], "v");
    }

    #[test]
    fn nested_choice_multiplies() {
        let src = "def p(n; 2) = { with { 0.5: { with { 0.5: { pre(1); invoke p(n-1); }; 0.5: { pre(2); invoke p(n-1); }; } }; 0.5: { pre(3); invoke p(n-1); }; } }";
        let (canon, _) = to_canonical(&parse(src).unwrap());
        assert_eq!(canon.branches.len(), 3);
        assert!((canon.branches[0].prob - 0.25).abs() < 1e-12);
        assert!((canon.branches[1].prob - 0.25).abs() < 1e-12);
        assert!((canon.branches[2].prob - 0.5).abs() < 1e-12);
        assert!((canon.total_prob() - 1.0).abs() < 1e-12);
    }
}
