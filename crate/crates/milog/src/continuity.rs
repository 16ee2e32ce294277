//! Syntactic continuity analysis: per-variable Lipschitz upper bounds and
//! classification into the first-order / continuous-infinitary /
//! continuous-with-zeroset-distance / unrestricted fragments.
//!
//! The classifier is deliberately incomplete: it reports the syntactic
//! class only, and a formula that happens to define a continuous function
//! may still classify as unrestricted.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Zero;

use crate::formula::{Formula, IndexRange, MetaExpr, Term};
use crate::rational::{format_rat, int, Rat};
use crate::signature::Signature;

/// A Lipschitz upper bound; arithmetic saturates at infinity, except that
/// scaling a zero bound stays zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Bound {
    Finite(Rat),
    Infinite,
}

impl Bound {
    pub fn zero() -> Bound {
        Bound::Finite(Rat::zero())
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Bound::Finite(_))
    }

    pub fn as_finite(&self) -> Option<&Rat> {
        match self {
            Bound::Finite(r) => Some(r),
            Bound::Infinite => None,
        }
    }

    fn add(&self, other: &Bound) -> Bound {
        match (self, other) {
            (Bound::Finite(a), Bound::Finite(b)) => Bound::Finite(a + b),
            _ => Bound::Infinite,
        }
    }

    fn max(&self, other: &Bound) -> Bound {
        match (self, other) {
            (Bound::Finite(a), Bound::Finite(b)) => Bound::Finite(a.clone().max(b.clone())),
            _ => Bound::Infinite,
        }
    }

    fn mul(&self, other: &Bound) -> Bound {
        match (self, other) {
            (Bound::Finite(a), _) if a.is_zero() => Bound::zero(),
            (_, Bound::Finite(b)) if b.is_zero() => Bound::zero(),
            (Bound::Finite(a), Bound::Finite(b)) => Bound::Finite(a * b),
            _ => Bound::Infinite,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Finite(r) => f.write_str(&format_rat(r)),
            Bound::Infinite => f.write_str("inf"),
        }
    }
}

/// Per-free-variable Lipschitz upper bounds. Missing variables are bound 0
/// (the formula's value does not depend on them).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LipschitzReport(pub BTreeMap<String, Bound>);

impl LipschitzReport {
    pub fn bound(&self, var: &str) -> Bound {
        self.0.get(var).cloned().unwrap_or_else(Bound::zero)
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(Bound::is_finite)
    }

    fn merge_add(&mut self, other: LipschitzReport) {
        for (v, b) in other.0 {
            let cur = self.bound(&v);
            self.0.insert(v, cur.add(&b));
        }
    }

    fn merge_max(&mut self, other: LipschitzReport) {
        for (v, b) in other.0 {
            let cur = self.bound(&v);
            self.0.insert(v, cur.max(&b));
        }
    }

    fn scale(self, factor: &Bound) -> LipschitzReport {
        LipschitzReport(
            self.0
                .into_iter()
                .map(|(v, b)| (v, factor.mul(&b)))
                .collect(),
        )
    }
}

/// Syntactic fragment, ordered by expressive power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FragmentClass {
    /// No infinite index families, no zeroset-distance operator.
    FO,
    /// Infinite families, each with finite common Lipschitz bounds.
    LC,
    /// As `LC` with the zeroset-distance operator allowed.
    LCRho,
    /// No continuity guarantee.
    LFull,
}

impl fmt::Display for FragmentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FragmentClass::FO => "FO",
            FragmentClass::LC => "LC",
            FragmentClass::LCRho => "LCRho",
            FragmentClass::LFull => "LFull",
        })
    }
}

/// Lipschitz bound of a term as a function of one variable, composing
/// function-symbol constants along the term.
fn term_bound(sig: &Signature, t: &Term, var: &str) -> Rat {
    match t {
        Term::Var(v) if v == var => int(1),
        Term::Var(_) | Term::Const(_) | Term::IndexedConst { .. } => Rat::zero(),
        Term::App(f, args) => {
            let lip = sig
                .function(f)
                .map(|fs| fs.lipschitz.clone())
                .unwrap_or_else(|| int(1));
            let worst = args
                .iter()
                .map(|a| term_bound(sig, a, var))
                .max()
                .unwrap_or_else(Rat::zero);
            lip * worst
        }
    }
}

fn term_report(sig: &Signature, terms: &[&Term], weight: &Rat) -> LipschitzReport {
    let mut out = LipschitzReport::default();
    for t in terms {
        for v in t.variables() {
            let b = Bound::Finite(weight * term_bound(sig, t, &v));
            let cur = out.bound(&v);
            out.0.insert(v, cur.max(&b));
        }
    }
    out
}

/// Supremum of an affine scale factor over the range of its index, given
/// the enclosing range context. Free indices are treated as unbounded.
fn factor_sup(e: &MetaExpr, ranges: &BTreeMap<String, Bound>) -> Bound {
    if e.is_constant() {
        return Bound::Finite(e.offset.clone());
    }
    let idx = e.index.as_deref().unwrap_or("");
    match ranges.get(idx) {
        Some(Bound::Finite(top)) => Bound::Finite(&e.coeff * top + &e.offset),
        _ => Bound::Infinite,
    }
}

fn range_sup(range: &IndexRange) -> Bound {
    match range {
        IndexRange::UpTo(k) => Bound::Finite(int(*k as i64)),
        IndexRange::Naturals | IndexRange::From(_) | IndexRange::TailFrom(_) => Bound::Infinite,
    }
}

fn bounds_rec(
    sig: &Signature,
    f: &Formula,
    ranges: &mut BTreeMap<String, Bound>,
) -> LipschitzReport {
    match f {
        Formula::Dist(a, b) => {
            // Each argument moves the distance by at most its own movement.
            let mut out = term_report(sig, &[a], &int(1));
            out.merge_add(term_report(sig, &[b], &int(1)));
            out
        }
        Formula::Pred(p, args) => {
            let lip = sig
                .predicate(p)
                .map(|ps| ps.lipschitz.clone())
                .unwrap_or_else(|| int(1));
            term_report(sig, &args.iter().collect::<Vec<_>>(), &lip)
        }
        Formula::Const(_) => LipschitzReport::default(),
        Formula::Sub(a, b) | Formula::Add(a, b) => {
            let mut out = bounds_rec(sig, a, ranges);
            out.merge_add(bounds_rec(sig, b, ranges));
            out
        }
        Formula::Min(a, b) | Formula::Max(a, b) => {
            let mut out = bounds_rec(sig, a, ranges);
            out.merge_max(bounds_rec(sig, b, ranges));
            out
        }
        Formula::Scale(e, body) => {
            let inner = bounds_rec(sig, body, ranges);
            inner.scale(&factor_sup(e, ranges))
        }
        Formula::SupVar(v, body) | Formula::InfVar(v, body) => {
            let mut out = bounds_rec(sig, body, ranges);
            out.0.remove(v);
            out
        }
        Formula::SupIdx(i, range, body) | Formula::InfIdx(i, range, body) => {
            let saved = ranges.insert(i.clone(), range_sup(range));
            let out = bounds_rec(sig, body, ranges);
            match saved {
                Some(old) => {
                    ranges.insert(i.clone(), old);
                }
                None => {
                    ranges.remove(i);
                }
            }
            out
        }
        Formula::Rho { slots, bound, body } => {
            // The zeroset distance is 1-Lipschitz in the anchor tuple under
            // the sup metric, hence bounded through the slot terms. Any
            // parameter variable of the body can move the zeroset
            // arbitrarily, so it gets no finite bound.
            let mut out = term_report(sig, &slots.iter().collect::<Vec<_>>(), &int(1));
            let mut params = body.free_variables();
            for b in bound {
                params.remove(b);
            }
            for v in params {
                out.0.insert(v, Bound::Infinite);
            }
            out
        }
    }
}

/// Sound per-variable Lipschitz upper bounds: whenever the reported bound
/// for `x` is finite, changing only `x` moves the value by at most
/// `bound * d(old, new)` on every structure.
pub fn lipschitz_bounds(sig: &Signature, f: &Formula) -> LipschitzReport {
    let mut report = bounds_rec(sig, f, &mut BTreeMap::new());
    // Restrict to free variables; bound occurrences were dropped at their
    // binders already, but terms under a rho binder may have leaked.
    let fv = f.free_variables();
    report.0.retain(|v, _| fv.contains(v));
    report
}

/// Syntactic fragment classification. `FO` when no infinite family and no
/// zeroset-distance operator occurs; `LC`/`LCRho` when every infinite
/// family carries finite common Lipschitz bounds on its free variables;
/// `LFull` otherwise.
pub fn classify_fragment(sig: &Signature, f: &Formula) -> FragmentClass {
    let mut has_rho = false;
    let mut has_infinite = false;
    let mut families_bounded = true;
    f.walk(&mut |sub| {
        match sub {
            Formula::Rho { .. } => has_rho = true,
            Formula::SupIdx(_, range, _) | Formula::InfIdx(_, range, _)
                if range.is_infinite() =>
            {
                has_infinite = true;
                if !lipschitz_bounds(sig, sub).all_finite() {
                    families_bounded = false;
                }
            }
            _ => {}
        }
    });
    match (has_infinite, families_bounded, has_rho) {
        (false, _, false) => FragmentClass::FO,
        (_, true, false) => FragmentClass::LC,
        (_, true, true) => FragmentClass::LCRho,
        _ => FragmentClass::LFull,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::formula::MetaExpr;
    use crate::rational::rat;

    fn p_of(v: &str) -> Formula {
        Formula::pred("P", vec![Term::var(v)])
    }

    #[test]
    fn dist_bounds() {
        let sig = fixtures::tri().signature().clone();
        let f = Formula::dist(Term::var("x"), Term::var("y"));
        let r = lipschitz_bounds(&sig, &f);
        assert_eq!(r.bound("x"), Bound::Finite(int(1)));
        assert_eq!(r.bound("y"), Bound::Finite(int(1)));
    }

    #[test]
    fn zero_test_is_unbounded() {
        let sig = fixtures::tri().signature().clone();
        let f = Formula::ind(p_of("x"));
        assert_eq!(lipschitz_bounds(&sig, &f).bound("x"), Bound::Infinite);
        assert_eq!(classify_fragment(&sig, &f), FragmentClass::LFull);
    }

    #[test]
    fn rho_is_one_lipschitz_in_slots() {
        let sig = fixtures::tri().signature().clone();
        let f = Formula::rho(vec![Term::var("x")], vec!["y".into()], p_of("y"));
        let r = lipschitz_bounds(&sig, &f);
        assert_eq!(r.bound("x"), Bound::Finite(int(1)));
        assert_eq!(classify_fragment(&sig, &f), FragmentClass::LCRho);
    }

    #[test]
    fn finite_ranges_stay_first_order() {
        let sig = fixtures::tri().signature().clone();
        let f = Formula::dist(Term::var("x"), Term::var("y"));
        assert_eq!(classify_fragment(&sig, &f), FragmentClass::FO);
        let g = Formula::sup_idx(
            "n",
            crate::formula::IndexRange::UpTo(3),
            Formula::scale(MetaExpr::linear("n"), p_of("x")),
        );
        assert_eq!(classify_fragment(&sig, &g), FragmentClass::FO);
        // Finite multiplier: bound is 3.
        assert_eq!(lipschitz_bounds(&sig, &g).bound("x"), Bound::Finite(int(3)));
    }

    #[test]
    fn bounded_infinite_families_classify_continuous() {
        let sig = fixtures::tri().signature().clone();
        // inf_n max(P(x), 1/(n+1)) — family members share the bound of P.
        let f = Formula::inf_idx(
            "n",
            crate::formula::IndexRange::Naturals,
            Formula::max(
                p_of("x"),
                Formula::recip(MetaExpr::affine(int(1), "n", int(1))),
            ),
        );
        assert_eq!(classify_fragment(&sig, &f), FragmentClass::LC);
        assert_eq!(lipschitz_bounds(&sig, &f).bound("x"), Bound::Finite(int(1)));
    }

    #[test]
    fn scaled_predicate_composes_declared_constant() {
        let sig = fixtures::tri().signature().clone();
        let f = Formula::scale_rat(rat(3, 2), p_of("x"));
        assert_eq!(
            lipschitz_bounds(&sig, &f).bound("x"),
            Bound::Finite(rat(3, 2))
        );
    }

    #[test]
    fn classification_is_monotone_under_subformulas() {
        for seed in 0..60u64 {
            let m = crate::corpus::random_structure(seed);
            let sig = m.signature();
            let f = crate::corpus::random_formula(sig, seed, &Default::default());
            let whole = classify_fragment(sig, &f);
            f.walk(&mut |sub| {
                assert!(
                    classify_fragment(sig, sub) <= whole,
                    "seed {seed}: subformula above whole"
                );
            });
        }
    }

    #[test]
    fn rho_elimination_raises_class_to_unrestricted() {
        let sig = fixtures::tri().signature().clone();
        let f = Formula::rho(vec![Term::var("x")], vec!["y".into()], p_of("y"));
        assert_eq!(classify_fragment(&sig, &f), FragmentClass::LCRho);
        let gone = crate::transform::rho_eliminate(&f);
        assert_eq!(classify_fragment(&sig, &gone), FragmentClass::LFull);
    }
}
