//! Formula-building constructions as AST rewrites: elimination of the
//! distance-to-zeroset operator, exact disjunction/negation/existential
//! quantification, the approximate negation, and compilation of Baire-class
//! connective descriptions into index families.
//!
//! Rewrites are verified semantically by the test suite, not syntactically;
//! no simplification is attempted beyond structural sharing.

use std::collections::BTreeSet;

use num_traits::One;
use thiserror::Error;

use crate::formula::{fresh_name, ConstValue, Formula, IndexRange, MetaExpr, Term};
use crate::rational::Rat;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("expected {expected} fresh variable(s) for {got} free variable(s)")]
    ArityMismatch { expected: usize, got: usize },
    #[error("variable `{0}` already occurs in the formula")]
    NotFresh(String),
    #[error("description uses slot {slot} but only {inputs} input(s) were given")]
    SlotMismatch { slot: usize, inputs: usize },
}

/// A countable disjunction input: either an explicit finite list or a
/// meta-indexed schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Family {
    List(Vec<Formula>),
    Schema {
        index: String,
        range: IndexRange,
        body: Formula,
    },
}

/// Sup-metric distance between a term tuple and a variable tuple, as a
/// formula: `max_i d(t_i, y_i)`. Empty tuples give `const 0`.
fn sup_metric_formula(slots: &[Term], vars: &[String]) -> Formula {
    Formula::max_chain(
        slots
            .iter()
            .zip(vars)
            .map(|(t, y)| Formula::Dist(t.clone(), Term::Var(y.clone())))
            .collect(),
    )
}

/// Core expansion shared by [`build_rho`] and [`rho_eliminate`]:
///
/// `inf_w min( (d_sup(slots, w) + ind(body[bound := w])), 1 )`
///
/// with `w` fresh for the slots and the body. The inner zero test makes the
/// summand `d_sup(slots, w)` exactly where the body vanishes and 1
/// elsewhere, so the infimum is the distance to the zeroset (or 1 when the
/// zeroset is empty).
fn rho_expansion(slots: &[Term], bound: &[String], body: &Formula) -> Formula {
    let mut avoid: BTreeSet<String> = body.variable_names();
    for t in slots {
        avoid.extend(t.variables());
    }
    let mut fresh_bound = Vec::with_capacity(bound.len());
    let mut renamed = body.clone();
    for b in bound {
        let w = fresh_name(b, &avoid);
        avoid.insert(w.clone());
        if w != *b {
            renamed = renamed.substitute_term(b, &Term::Var(w.clone()));
        }
        fresh_bound.push(w);
    }
    let inner = Formula::min(
        Formula::add(
            sup_metric_formula(slots, &fresh_bound),
            Formula::ind(renamed),
        ),
        Formula::rat_const(Rat::one()),
    );
    fresh_bound
        .into_iter()
        .rev()
        .fold(inner, |acc, w| Formula::inf_var(&w, acc))
}

/// Builds the zeroset-distance formula for `f` with the given fresh slot
/// variables: the value at `x̄` is the sup-metric distance from `x̄` to the
/// zeroset of `f` over its free variables (in sorted order), and 1 when the
/// zeroset is empty. The result contains no `Rho` node.
pub fn build_rho(f: &Formula, slots: &[String]) -> Result<Formula, TransformError> {
    let bound: Vec<String> = f.free_variables().into_iter().collect();
    if bound.len() != slots.len() {
        return Err(TransformError::ArityMismatch {
            expected: bound.len(),
            got: slots.len(),
        });
    }
    let mut seen = BTreeSet::new();
    let used = f.variable_names();
    for s in slots {
        if used.contains(s) {
            return Err(TransformError::NotFresh(s.clone()));
        }
        if !seen.insert(s) {
            return Err(TransformError::NotFresh(s.clone()));
        }
    }
    let slot_terms: Vec<Term> = slots.iter().map(|s| Term::Var(s.clone())).collect();
    Ok(rho_expansion(&slot_terms, &bound, f))
}

/// Replaces every `Rho` node bottom-up by its expansion. The result is
/// `Rho`-free and evaluates identically.
pub fn rho_eliminate(f: &Formula) -> Formula {
    match f {
        Formula::Dist(_, _) | Formula::Pred(_, _) | Formula::Const(_) => f.clone(),
        Formula::Sub(a, b) => Formula::sub(rho_eliminate(a), rho_eliminate(b)),
        Formula::Add(a, b) => Formula::add(rho_eliminate(a), rho_eliminate(b)),
        Formula::Min(a, b) => Formula::min(rho_eliminate(a), rho_eliminate(b)),
        Formula::Max(a, b) => Formula::max(rho_eliminate(a), rho_eliminate(b)),
        Formula::Scale(e, body) => Formula::scale(e.clone(), rho_eliminate(body)),
        Formula::SupVar(v, body) => Formula::sup_var(v, rho_eliminate(body)),
        Formula::InfVar(v, body) => Formula::inf_var(v, rho_eliminate(body)),
        Formula::SupIdx(i, r, body) => Formula::sup_idx(i, r.clone(), rho_eliminate(body)),
        Formula::InfIdx(i, r, body) => Formula::inf_idx(i, r.clone(), rho_eliminate(body)),
        Formula::Rho { slots, bound, body } => {
            let body = rho_eliminate(body);
            rho_expansion(slots, bound, &body)
        }
    }
}

/// Exact countable disjunction: value 0 at a point iff some member has
/// value 0 there. A finite list becomes the `min` chain of zero tests; a
/// schema becomes `inf` of the zero-test family.
pub fn exact_disjunction(family: &Family) -> Formula {
    match family {
        Family::List(items) => {
            Formula::min_chain(items.iter().map(|f| Formula::ind(f.clone())).collect())
        }
        Family::Schema { index, range, body } => {
            Formula::inf_idx(index, range.clone(), Formula::ind(body.clone()))
        }
    }
}

/// Exact negation: satisfied exactly where `f` is not. The result is
/// `{0,1}`-valued: the disjunction over `n` of `f >= 1/n`.
pub fn exact_negation(f: &Formula) -> Formula {
    let used = f.index_names();
    let n = fresh_name("n", &used);
    let threshold = Formula::sub(
        Formula::Const(ConstValue::Recip(MetaExpr::linear(&n))),
        f.clone(),
    );
    exact_disjunction(&Family::Schema {
        index: n,
        range: IndexRange::Naturals,
        body: threshold,
    })
}

/// Approximate negation `1 - f`. Involutive on values but not an exact
/// negation.
pub fn approx_negation(f: &Formula) -> Formula {
    Formula::sub(Formula::rat_const(Rat::one()), f.clone())
}

/// Exact existential quantification over `vars`: satisfied iff some witness
/// tuple satisfies `f`. Encoded as `not sup_vars not f`.
pub fn exact_exists(f: &Formula, vars: &[String]) -> Formula {
    let inner = exact_negation(f);
    let quantified = vars
        .iter()
        .rev()
        .fold(inner, |acc, v| Formula::sup_var(v, acc));
    exact_negation(&quantified)
}

/// A connective skeleton over `k` input slots, built from the combinator
/// basis. Holes are numbered from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Skeleton {
    Hole(usize),
    Const(ConstValue),
    Sub(Box<Skeleton>, Box<Skeleton>),
    Add(Box<Skeleton>, Box<Skeleton>),
    Min(Box<Skeleton>, Box<Skeleton>),
    Max(Box<Skeleton>, Box<Skeleton>),
    Scale(MetaExpr, Box<Skeleton>),
}

impl Skeleton {
    fn rename_index(&self, from: &str, to: &str) -> Skeleton {
        let fix = |e: &MetaExpr| -> MetaExpr {
            if e.index.as_deref() == Some(from) {
                MetaExpr {
                    index: Some(to.to_string()),
                    ..e.clone()
                }
            } else {
                e.clone()
            }
        };
        match self {
            Skeleton::Hole(k) => Skeleton::Hole(*k),
            Skeleton::Const(ConstValue::Rat(r)) => Skeleton::Const(ConstValue::Rat(r.clone())),
            Skeleton::Const(ConstValue::Recip(e)) => Skeleton::Const(ConstValue::Recip(fix(e))),
            Skeleton::Sub(a, b) => Skeleton::Sub(
                Box::new(a.rename_index(from, to)),
                Box::new(b.rename_index(from, to)),
            ),
            Skeleton::Add(a, b) => Skeleton::Add(
                Box::new(a.rename_index(from, to)),
                Box::new(b.rename_index(from, to)),
            ),
            Skeleton::Min(a, b) => Skeleton::Min(
                Box::new(a.rename_index(from, to)),
                Box::new(b.rename_index(from, to)),
            ),
            Skeleton::Max(a, b) => Skeleton::Max(
                Box::new(a.rename_index(from, to)),
                Box::new(b.rename_index(from, to)),
            ),
            Skeleton::Scale(e, s) => Skeleton::Scale(fix(e), Box::new(s.rename_index(from, to))),
        }
    }

    fn plug(&self, inputs: &[Formula]) -> Result<Formula, TransformError> {
        match self {
            Skeleton::Hole(k) => inputs.get(*k).cloned().ok_or(TransformError::SlotMismatch {
                slot: *k,
                inputs: inputs.len(),
            }),
            Skeleton::Const(c) => Ok(Formula::Const(c.clone())),
            Skeleton::Sub(a, b) => Ok(Formula::sub(a.plug(inputs)?, b.plug(inputs)?)),
            Skeleton::Add(a, b) => Ok(Formula::add(a.plug(inputs)?, b.plug(inputs)?)),
            Skeleton::Min(a, b) => Ok(Formula::min(a.plug(inputs)?, b.plug(inputs)?)),
            Skeleton::Max(a, b) => Ok(Formula::max(a.plug(inputs)?, b.plug(inputs)?)),
            Skeleton::Scale(e, s) => Ok(Formula::scale(e.clone(), s.plug(inputs)?)),
        }
    }
}

/// A description in the Baire hierarchy of connectives: a continuous base
/// skeleton, or a pointwise limit of a meta-indexed family of descriptions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaireDesc {
    Leaf(Skeleton),
    Limit { index: String, body: Box<BaireDesc> },
}

impl BaireDesc {
    fn rename_index(&self, from: &str, to: &str) -> BaireDesc {
        match self {
            BaireDesc::Leaf(s) => BaireDesc::Leaf(s.rename_index(from, to)),
            BaireDesc::Limit { index, body } => {
                if index == from {
                    // Shadowed below.
                    self.clone()
                } else {
                    BaireDesc::Limit {
                        index: index.clone(),
                        body: Box::new(body.rename_index(from, to)),
                    }
                }
            }
        }
    }

    fn used_indices(&self, out: &mut BTreeSet<String>) {
        match self {
            BaireDesc::Leaf(s) => {
                fn walk(s: &Skeleton, out: &mut BTreeSet<String>) {
                    match s {
                        Skeleton::Hole(_) | Skeleton::Const(ConstValue::Rat(_)) => {}
                        Skeleton::Const(ConstValue::Recip(e)) => {
                            if let Some(i) = &e.index {
                                out.insert(i.clone());
                            }
                        }
                        Skeleton::Sub(a, b)
                        | Skeleton::Add(a, b)
                        | Skeleton::Min(a, b)
                        | Skeleton::Max(a, b) => {
                            walk(a, out);
                            walk(b, out);
                        }
                        Skeleton::Scale(e, inner) => {
                            if let Some(i) = &e.index {
                                out.insert(i.clone());
                            }
                            walk(inner, out);
                        }
                    }
                }
                walk(s, out)
            }
            BaireDesc::Limit { index, body } => {
                out.insert(index.clone());
                body.used_indices(out);
            }
        }
    }
}

/// Compiles a Baire description applied to input formulas. A `Leaf` plugs
/// the inputs into its skeleton; a `Limit` over stages `u_m` becomes the
/// limsup family `inf_k sup_{m >= k} compile(u_m)`, whose value equals the
/// pointwise limit wherever that limit exists.
pub fn borel_compile(desc: &BaireDesc, inputs: &[Formula]) -> Result<Formula, TransformError> {
    let mut avoid = BTreeSet::new();
    desc.used_indices(&mut avoid);
    for f in inputs {
        avoid.extend(f.index_names());
    }
    compile(desc, inputs, &mut avoid)
}

fn compile(
    desc: &BaireDesc,
    inputs: &[Formula],
    avoid: &mut BTreeSet<String>,
) -> Result<Formula, TransformError> {
    match desc {
        BaireDesc::Leaf(s) => s.plug(inputs),
        BaireDesc::Limit { index, body } => {
            let k = fresh_name("k", avoid);
            avoid.insert(k.clone());
            let m = fresh_name("m", avoid);
            avoid.insert(m.clone());
            let staged = body.rename_index(index, &m);
            let compiled = compile(&staged, inputs, avoid)?;
            Ok(Formula::inf_idx(
                &k,
                IndexRange::Naturals,
                Formula::sup_idx(&m, IndexRange::TailFrom(k.clone()), compiled),
            ))
        }
    }
}
