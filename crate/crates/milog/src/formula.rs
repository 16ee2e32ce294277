//! Terms and formulas.
//!
//! The connective basis is `{const, sub, add, min, max, scale}`, all
//! truncated to `[0,1]`. Countable sup/inf families are presented as
//! meta-indexed schemas: an index binder (`SupIdx`/`InfIdx`) ranges over the
//! naturals, a finite prefix `1..=k`, or the tail of an enclosing index, and
//! the body may mention the index through affine scale factors `r*i + s`,
//! reciprocal constants `1/(r*i + s)`, tail ranges, and indexed constant
//! symbols. Free object variables never depend on an index, so every formula
//! has a fixed finite free-variable set.
//!
//! `Rho` is the distance-to-zeroset operator: `Rho(slots, bound, body)`
//! evaluates to the sup-metric distance from the slot tuple's value to the
//! set of `bound`-tuples where `body` vanishes.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::rational::{format_rat, Rat};
use crate::signature::Signature;
use crate::syntax;

pub type FormulaRef = Arc<Formula>;

/// First-order terms over the ambient signature.
///
/// `IndexedConst` is a schematic constant reference `prefix‖i` that resolves
/// to the concrete constant symbol `prefix‖k` when the index `i` is
/// instantiated at `k`; it is what lets a single formula quantify over a
/// family of named constants.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
    IndexedConst { prefix: String, index: String },
    App(String, Vec<Term>),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.into())
    }

    pub fn cons(name: &str) -> Term {
        Term::Const(name.into())
    }

    pub fn app(function: &str, args: Vec<Term>) -> Term {
        Term::App(function.into(), args)
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::Const(_) | Term::IndexedConst { .. } => {}
            Term::App(_, args) => {
                for a in args {
                    a.collect_variables(out);
                }
            }
        }
    }

    fn substitute(&self, var: &str, replacement: &Term) -> Term {
        match self {
            Term::Var(v) if v == var => replacement.clone(),
            Term::Var(_) | Term::Const(_) | Term::IndexedConst { .. } => self.clone(),
            Term::App(f, args) => Term::App(
                f.clone(),
                args.iter().map(|a| a.substitute(var, replacement)).collect(),
            ),
        }
    }

    fn substitute_constant(&self, constant: &str, var: &str) -> Term {
        match self {
            Term::Const(c) if c == constant => Term::Var(var.into()),
            Term::Var(_) | Term::Const(_) | Term::IndexedConst { .. } => self.clone(),
            Term::App(f, args) => Term::App(
                f.clone(),
                args.iter()
                    .map(|a| a.substitute_constant(constant, var))
                    .collect(),
            ),
        }
    }

    fn substitute_index(&self, index: &str, value: u64) -> Term {
        match self {
            Term::IndexedConst { prefix, index: i } if i == index => {
                Term::Const(format!("{prefix}{value}"))
            }
            Term::Var(_) | Term::Const(_) | Term::IndexedConst { .. } => self.clone(),
            Term::App(f, args) => Term::App(
                f.clone(),
                args.iter().map(|a| a.substitute_index(index, value)).collect(),
            ),
        }
    }

    pub(crate) fn mentions_index(&self, index: &str) -> bool {
        match self {
            Term::IndexedConst { index: i, .. } => i == index,
            Term::Var(_) | Term::Const(_) => false,
            Term::App(_, args) => args.iter().any(|a| a.mentions_index(index)),
        }
    }

    pub(crate) fn collect_indices(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::IndexedConst { index, .. } => {
                out.insert(index.clone());
            }
            Term::Var(_) | Term::Const(_) => {}
            Term::App(_, args) => {
                for a in args {
                    a.collect_indices(out);
                }
            }
        }
    }
}

/// Affine meta expression `coeff * index + offset` with nonnegative rational
/// coefficients. `coeff == 0` means a plain rational and carries no index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MetaExpr {
    pub coeff: Rat,
    pub index: Option<String>,
    pub offset: Rat,
}

impl MetaExpr {
    pub fn constant(value: Rat) -> MetaExpr {
        MetaExpr {
            coeff: Rat::zero(),
            index: None,
            offset: value,
        }
    }

    pub fn linear(index: &str) -> MetaExpr {
        MetaExpr {
            coeff: Rat::one(),
            index: Some(index.into()),
            offset: Rat::zero(),
        }
    }

    pub fn affine(coeff: Rat, index: &str, offset: Rat) -> MetaExpr {
        MetaExpr {
            coeff,
            index: Some(index.into()),
            offset,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.coeff.is_zero()
    }

    /// Value at `index = k`; for constant expressions the index is ignored.
    pub fn value_at(&self, k: u64) -> Rat {
        &self.coeff * Rat::from_integer(k.into()) + &self.offset
    }

    fn substitute_index(&self, index: &str, value: u64) -> MetaExpr {
        if self.index.as_deref() == Some(index) {
            MetaExpr::constant(self.value_at(value))
        } else {
            self.clone()
        }
    }
}

/// Range of an index binder. All ranges start at 1 except `From`/`TailFrom`;
/// `TailFrom(j)` refers to an enclosing binder and becomes `From(k)` when
/// that binder is instantiated at `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum IndexRange {
    Naturals,
    UpTo(u64),
    From(u64),
    TailFrom(String),
}

impl IndexRange {
    pub fn is_infinite(&self) -> bool {
        !matches!(self, IndexRange::UpTo(_))
    }
}

/// Constant value: a literal rational or a reciprocal `1/(r*i + s)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ConstValue {
    Rat(Rat),
    Recip(MetaExpr),
}

/// Formulas. All values live in `[0,1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    /// Distance between two terms.
    Dist(Term, Term),
    /// Predicate application.
    Pred(String, Vec<Term>),
    Const(ConstValue),
    /// Truncated difference `F - G`, clipped at 0.
    Sub(FormulaRef, FormulaRef),
    /// Truncated sum `F + G`, clipped at 1.
    Add(FormulaRef, FormulaRef),
    Min(FormulaRef, FormulaRef),
    Max(FormulaRef, FormulaRef),
    /// `min(c * F, 1)` where `c` is a rational or an affine meta expression.
    Scale(MetaExpr, FormulaRef),
    SupVar(String, FormulaRef),
    InfVar(String, FormulaRef),
    SupIdx(String, IndexRange, FormulaRef),
    InfIdx(String, IndexRange, FormulaRef),
    /// Distance from the slot tuple to the zeroset of `body` with respect to
    /// the `bound` tuple. Slots are free positions; `bound` is bound in
    /// `body`; the two tuples have equal length.
    Rho {
        slots: Vec<Term>,
        bound: Vec<String>,
        body: FormulaRef,
    },
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&syntax::print_formula(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormulaViolation {
    UnknownPredicate(String),
    UnknownFunction(String),
    UnknownConstant(String),
    ArityMismatch { symbol: String, expected: usize, got: usize },
    ConstOutOfRange(Rat),
    RecipBelowOne { min_value: Rat },
    NegativeMeta,
    MetaWithoutIndex,
    DegenerateMeta(String),
    UnboundIndex(String),
    BadRangeBound,
    InvalidName { name: String, reason: String },
    VariableShadowsSymbol(String),
    RhoArityMismatch { slots: usize, bound: usize },
    DuplicateRhoBinder(String),
    IndexedConstantAmbiguous(String),
}

impl fmt::Display for FormulaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use FormulaViolation::*;
        match self {
            UnknownPredicate(n) => write!(f, "unknown predicate `{n}`"),
            UnknownFunction(n) => write!(f, "unknown function `{n}`"),
            UnknownConstant(n) => write!(f, "unknown constant `{n}`"),
            ArityMismatch { symbol, expected, got } => {
                write!(f, "`{symbol}` expects {expected} argument(s), got {got}")
            }
            ConstOutOfRange(r) => write!(f, "constant {} is outside [0,1]", format_rat(r)),
            RecipBelowOne { min_value } => write!(
                f,
                "reciprocal argument can be as small as {}, below 1",
                format_rat(min_value)
            ),
            NegativeMeta => write!(f, "meta expression has a negative coefficient"),
            MetaWithoutIndex => write!(f, "meta expression scales an index but names none"),
            DegenerateMeta(i) => write!(f, "meta expression names index `{i}` with coefficient 0"),
            UnboundIndex(i) => write!(f, "index `{i}` is not bound by an enclosing binder"),
            BadRangeBound => write!(f, "index ranges start at 1"),
            InvalidName { name, reason } => write!(f, "name `{name}` is invalid: {reason}"),
            VariableShadowsSymbol(n) => {
                write!(f, "variable `{n}` collides with a signature symbol")
            }
            RhoArityMismatch { slots, bound } => {
                write!(f, "rho has {slots} slot(s) but {bound} bound variable(s)")
            }
            DuplicateRhoBinder(n) => write!(f, "rho binds `{n}` twice"),
            IndexedConstantAmbiguous(n) => write!(
                f,
                "indexed constant prints as `{n}` which is itself a declared constant"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubstitutionError {
    #[error("variable `{0}` already occurs in the formula")]
    NotFresh(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("formula is not an index binder")]
    NotAnIndexNode,
    #[error("index value {value} is outside the binder's range")]
    OutOfRange { value: u64 },
}

// Construction helpers. They wrap children in `Arc`, so sharing a subformula
// across several parents costs one reference count.
impl Formula {
    pub fn dist(a: Term, b: Term) -> Formula {
        Formula::Dist(a, b)
    }

    pub fn pred(name: &str, args: Vec<Term>) -> Formula {
        Formula::Pred(name.into(), args)
    }

    pub fn rat_const(r: Rat) -> Formula {
        Formula::Const(ConstValue::Rat(r))
    }

    pub fn recip(e: MetaExpr) -> Formula {
        Formula::Const(ConstValue::Recip(e))
    }

    pub fn sub(a: Formula, b: Formula) -> Formula {
        Formula::Sub(Arc::new(a), Arc::new(b))
    }

    pub fn add(a: Formula, b: Formula) -> Formula {
        Formula::Add(Arc::new(a), Arc::new(b))
    }

    pub fn min(a: Formula, b: Formula) -> Formula {
        Formula::Min(Arc::new(a), Arc::new(b))
    }

    pub fn max(a: Formula, b: Formula) -> Formula {
        Formula::Max(Arc::new(a), Arc::new(b))
    }

    pub fn scale_rat(c: Rat, f: Formula) -> Formula {
        Formula::Scale(MetaExpr::constant(c), Arc::new(f))
    }

    pub fn scale(e: MetaExpr, f: Formula) -> Formula {
        Formula::Scale(e, Arc::new(f))
    }

    pub fn sup_var(var: &str, f: Formula) -> Formula {
        Formula::SupVar(var.into(), Arc::new(f))
    }

    pub fn inf_var(var: &str, f: Formula) -> Formula {
        Formula::InfVar(var.into(), Arc::new(f))
    }

    pub fn sup_idx(index: &str, range: IndexRange, f: Formula) -> Formula {
        Formula::SupIdx(index.into(), range, Arc::new(f))
    }

    pub fn inf_idx(index: &str, range: IndexRange, f: Formula) -> Formula {
        Formula::InfIdx(index.into(), range, Arc::new(f))
    }

    pub fn rho(slots: Vec<Term>, bound: Vec<String>, body: Formula) -> Formula {
        Formula::Rho {
            slots,
            bound,
            body: Arc::new(body),
        }
    }

    /// Left-folded `Max` chain; the empty chain is `const 0`.
    pub fn max_chain(items: Vec<Formula>) -> Formula {
        let mut it = items.into_iter();
        match it.next() {
            None => Formula::rat_const(Rat::zero()),
            Some(first) => it.fold(first, Formula::max),
        }
    }

    /// Left-folded `Min` chain; the empty chain is `const 1`.
    pub fn min_chain(items: Vec<Formula>) -> Formula {
        let mut it = items.into_iter();
        match it.next() {
            None => Formula::rat_const(Rat::one()),
            Some(first) => it.fold(first, Formula::min),
        }
    }

    /// The zero test `sup_n min(n*F, 1)`: value 0 where `F` vanishes and 1
    /// elsewhere. Picks an index name not used anywhere in `F`.
    pub fn ind(f: Formula) -> Formula {
        let used = f.index_names();
        let n = fresh_name("n", &used);
        Formula::sup_idx(&n, IndexRange::Naturals, Formula::scale(MetaExpr::linear(&n), f))
    }
}

impl Formula {
    /// Free object variables. Index binders bind no object variables.
    pub fn free_variables(&self) -> BTreeSet<String> {
        match self {
            Formula::Dist(a, b) => {
                let mut s = a.variables();
                s.extend(b.variables());
                s
            }
            Formula::Pred(_, args) => {
                let mut s = BTreeSet::new();
                for a in args {
                    a.collect_variables(&mut s);
                }
                s
            }
            Formula::Const(_) => BTreeSet::new(),
            Formula::Sub(a, b) | Formula::Add(a, b) | Formula::Min(a, b) | Formula::Max(a, b) => {
                let mut s = a.free_variables();
                s.extend(b.free_variables());
                s
            }
            Formula::Scale(_, f) => f.free_variables(),
            Formula::SupVar(v, f) | Formula::InfVar(v, f) => {
                let mut s = f.free_variables();
                s.remove(v);
                s
            }
            Formula::SupIdx(_, _, f) | Formula::InfIdx(_, _, f) => f.free_variables(),
            Formula::Rho { slots, bound, body } => {
                let mut s = body.free_variables();
                for b in bound {
                    s.remove(b);
                }
                for t in slots {
                    s.extend(t.variables());
                }
                s
            }
        }
    }

    /// Index names with a free occurrence (in a meta expression, a tail
    /// range, or an indexed constant) not bound by an enclosing binder.
    pub fn free_indices(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free_indices(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free_indices(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        let mut note = |name: &str, bound: &[String]| {
            if !bound.iter().any(|b| b == name) {
                out.insert(name.to_string());
            }
        };
        match self {
            Formula::Dist(a, b) => {
                let mut s = BTreeSet::new();
                a.collect_indices(&mut s);
                b.collect_indices(&mut s);
                for i in s {
                    note(&i, bound);
                }
            }
            Formula::Pred(_, args) => {
                let mut s = BTreeSet::new();
                for a in args {
                    a.collect_indices(&mut s);
                }
                for i in s {
                    note(&i, bound);
                }
            }
            Formula::Const(ConstValue::Rat(_)) => {}
            Formula::Const(ConstValue::Recip(e)) => {
                if let Some(i) = &e.index {
                    note(i, bound);
                }
            }
            Formula::Sub(a, b) | Formula::Add(a, b) | Formula::Min(a, b) | Formula::Max(a, b) => {
                a.collect_free_indices(bound, out);
                b.collect_free_indices(bound, out);
            }
            Formula::Scale(e, f) => {
                if let Some(i) = &e.index {
                    note(i, bound);
                }
                f.collect_free_indices(bound, out);
            }
            Formula::SupVar(_, f) | Formula::InfVar(_, f) => f.collect_free_indices(bound, out),
            Formula::SupIdx(i, range, f) | Formula::InfIdx(i, range, f) => {
                if let IndexRange::TailFrom(j) = range {
                    note(j, bound);
                }
                bound.push(i.clone());
                f.collect_free_indices(bound, out);
                bound.pop();
            }
            Formula::Rho { slots, body, .. } => {
                let mut s = BTreeSet::new();
                for t in slots {
                    t.collect_indices(&mut s);
                }
                for i in s {
                    note(&i, bound);
                }
                body.collect_free_indices(bound, out);
            }
        }
    }

    /// Every index name occurring anywhere (bound or free).
    pub fn index_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |f| match f {
            Formula::Const(ConstValue::Recip(e)) | Formula::Scale(e, _) => {
                if let Some(i) = &e.index {
                    out.insert(i.clone());
                }
            }
            Formula::SupIdx(i, r, _) | Formula::InfIdx(i, r, _) => {
                out.insert(i.clone());
                if let IndexRange::TailFrom(j) = r {
                    out.insert(j.clone());
                }
            }
            _ => {}
        });
        let mut terms = BTreeSet::new();
        self.walk(&mut |f| match f {
            Formula::Dist(a, b) => {
                a.collect_indices(&mut terms);
                b.collect_indices(&mut terms);
            }
            Formula::Pred(_, args) => {
                for a in args {
                    a.collect_indices(&mut terms);
                }
            }
            Formula::Rho { slots, .. } => {
                for t in slots {
                    t.collect_indices(&mut terms);
                }
            }
            _ => {}
        });
        out.extend(terms);
        out
    }

    /// Every variable name occurring anywhere (free or bound).
    pub fn variable_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |f| match f {
            Formula::Dist(a, b) => {
                a.collect_variables(&mut out);
                b.collect_variables(&mut out);
            }
            Formula::Pred(_, args) => {
                for a in args {
                    a.collect_variables(&mut out);
                }
            }
            Formula::SupVar(v, _) | Formula::InfVar(v, _) => {
                out.insert(v.clone());
            }
            Formula::Rho { slots, bound, .. } => {
                for t in slots {
                    t.collect_variables(&mut out);
                }
                out.extend(bound.iter().cloned());
            }
            _ => {}
        });
        out
    }

    /// Pre-order traversal of every node.
    pub fn walk(&self, visit: &mut dyn FnMut(&Formula)) {
        visit(self);
        match self {
            Formula::Dist(_, _) | Formula::Pred(_, _) | Formula::Const(_) => {}
            Formula::Sub(a, b) | Formula::Add(a, b) | Formula::Min(a, b) | Formula::Max(a, b) => {
                a.walk(visit);
                b.walk(visit);
            }
            Formula::Scale(_, f)
            | Formula::SupVar(_, f)
            | Formula::InfVar(_, f)
            | Formula::SupIdx(_, _, f)
            | Formula::InfIdx(_, _, f) => f.walk(visit),
            Formula::Rho { body, .. } => body.walk(visit),
        }
    }

    pub fn contains_rho(&self) -> bool {
        let mut found = false;
        self.walk(&mut |f| {
            if matches!(f, Formula::Rho { .. }) {
                found = true;
            }
        });
        found
    }

    /// Checks arities, symbol resolution, index scoping, and meta-expression
    /// positivity. Empty result iff the formula is well-formed over `sig`.
    pub fn well_formed(&self, sig: &Signature) -> Vec<FormulaViolation> {
        let mut out = Vec::new();
        // Bound indices mapped to the least value they can take.
        let mut indices: Vec<(String, u64)> = Vec::new();
        self.wf(sig, &mut indices, &mut out);
        out
    }

    fn wf(&self, sig: &Signature, indices: &mut Vec<(String, u64)>, out: &mut Vec<FormulaViolation>) {
        let index_min = |indices: &[(String, u64)], name: &str| -> Option<u64> {
            indices.iter().rev().find(|(n, _)| n == name).map(|(_, v)| *v)
        };
        let check_meta = |e: &MetaExpr,
                          indices: &[(String, u64)],
                          out: &mut Vec<FormulaViolation>|
         -> Option<u64> {
            if e.coeff.is_negative() || e.offset.is_negative() {
                out.push(FormulaViolation::NegativeMeta);
            }
            match (&e.index, e.coeff.is_zero()) {
                (None, true) => Some(1),
                (None, false) => {
                    out.push(FormulaViolation::MetaWithoutIndex);
                    None
                }
                (Some(i), true) => {
                    out.push(FormulaViolation::DegenerateMeta(i.clone()));
                    // Coefficient 0: the value ignores the index.
                    Some(index_min(indices, i).unwrap_or(1))
                }
                (Some(i), false) => match index_min(indices, i) {
                    Some(v) => Some(v),
                    None => {
                        out.push(FormulaViolation::UnboundIndex(i.clone()));
                        None
                    }
                },
            }
        };
        match self {
            Formula::Dist(a, b) => {
                self.wf_term(a, sig, indices, out);
                self.wf_term(b, sig, indices, out);
            }
            Formula::Pred(name, args) => {
                match sig.predicate(name) {
                    None => out.push(FormulaViolation::UnknownPredicate(name.clone())),
                    Some(p) => {
                        if p.arity != args.len() {
                            out.push(FormulaViolation::ArityMismatch {
                                symbol: name.clone(),
                                expected: p.arity,
                                got: args.len(),
                            });
                        }
                    }
                }
                for a in args {
                    self.wf_term(a, sig, indices, out);
                }
            }
            Formula::Const(ConstValue::Rat(r)) => {
                if r.is_negative() || *r > Rat::one() {
                    out.push(FormulaViolation::ConstOutOfRange(r.clone()));
                }
            }
            Formula::Const(ConstValue::Recip(e)) => {
                if let Some(imin) = check_meta(e, indices, out) {
                    let min_value = e.value_at(imin);
                    if min_value < Rat::one() {
                        out.push(FormulaViolation::RecipBelowOne { min_value });
                    }
                }
            }
            Formula::Sub(a, b) | Formula::Add(a, b) | Formula::Min(a, b) | Formula::Max(a, b) => {
                a.wf(sig, indices, out);
                b.wf(sig, indices, out);
            }
            Formula::Scale(e, f) => {
                check_meta(e, indices, out);
                f.wf(sig, indices, out);
            }
            Formula::SupVar(v, f) | Formula::InfVar(v, f) => {
                self.wf_var_name(v, sig, out);
                f.wf(sig, indices, out);
            }
            Formula::SupIdx(i, range, f) | Formula::InfIdx(i, range, f) => {
                if let Err(reason) = syntax::check_symbol_name(i) {
                    out.push(FormulaViolation::InvalidName {
                        name: i.clone(),
                        reason,
                    });
                }
                let min = match range {
                    IndexRange::Naturals => 1,
                    IndexRange::UpTo(k) => {
                        if *k == 0 {
                            out.push(FormulaViolation::BadRangeBound);
                        }
                        1
                    }
                    IndexRange::From(v) => {
                        if *v == 0 {
                            out.push(FormulaViolation::BadRangeBound);
                        }
                        (*v).max(1)
                    }
                    IndexRange::TailFrom(j) => match index_min(indices, j) {
                        Some(v) => v,
                        None => {
                            out.push(FormulaViolation::UnboundIndex(j.clone()));
                            1
                        }
                    },
                };
                indices.push((i.clone(), min));
                f.wf(sig, indices, out);
                indices.pop();
            }
            Formula::Rho { slots, bound, body } => {
                if slots.len() != bound.len() {
                    out.push(FormulaViolation::RhoArityMismatch {
                        slots: slots.len(),
                        bound: bound.len(),
                    });
                }
                let mut seen = BTreeSet::new();
                for b in bound {
                    self.wf_var_name(b, sig, out);
                    if !seen.insert(b) {
                        out.push(FormulaViolation::DuplicateRhoBinder(b.clone()));
                    }
                }
                for t in slots {
                    self.wf_term(t, sig, indices, out);
                }
                body.wf(sig, indices, out);
            }
        }
    }

    fn wf_var_name(&self, name: &str, sig: &Signature, out: &mut Vec<FormulaViolation>) {
        if let Err(reason) = syntax::check_symbol_name(name) {
            out.push(FormulaViolation::InvalidName {
                name: name.to_string(),
                reason,
            });
        }
        if sig.has_symbol(name) {
            out.push(FormulaViolation::VariableShadowsSymbol(name.to_string()));
        }
    }

    fn wf_term(
        &self,
        t: &Term,
        sig: &Signature,
        indices: &mut Vec<(String, u64)>,
        out: &mut Vec<FormulaViolation>,
    ) {
        match t {
            Term::Var(v) => self.wf_var_name(v, sig, out),
            Term::Const(c) => {
                if !sig.has_constant(c) {
                    out.push(FormulaViolation::UnknownConstant(c.clone()));
                }
            }
            Term::IndexedConst { prefix, index } => {
                if !indices.iter().any(|(n, _)| n == index) {
                    out.push(FormulaViolation::UnboundIndex(index.clone()));
                }
                let printed = format!("{prefix}{index}");
                if sig.has_constant(&printed) {
                    out.push(FormulaViolation::IndexedConstantAmbiguous(printed));
                }
            }
            Term::App(f, args) => {
                match sig.function(f) {
                    None => out.push(FormulaViolation::UnknownFunction(f.clone())),
                    Some(fs) => {
                        if fs.arity != args.len() {
                            out.push(FormulaViolation::ArityMismatch {
                                symbol: f.clone(),
                                expected: fs.arity,
                                got: args.len(),
                            });
                        }
                    }
                }
                for a in args {
                    self.wf_term(a, sig, indices, out);
                }
            }
        }
    }

    /// Capture-avoiding substitution of a term for a free variable. Binders
    /// whose name occurs in the replacement are renamed first.
    pub fn substitute_term(&self, var: &str, replacement: &Term) -> Formula {
        match self {
            Formula::Dist(a, b) => Formula::Dist(
                a.substitute(var, replacement),
                b.substitute(var, replacement),
            ),
            Formula::Pred(p, args) => Formula::Pred(
                p.clone(),
                args.iter().map(|a| a.substitute(var, replacement)).collect(),
            ),
            Formula::Const(_) => self.clone(),
            Formula::Sub(a, b) => Formula::sub(
                a.substitute_term(var, replacement),
                b.substitute_term(var, replacement),
            ),
            Formula::Add(a, b) => Formula::add(
                a.substitute_term(var, replacement),
                b.substitute_term(var, replacement),
            ),
            Formula::Min(a, b) => Formula::min(
                a.substitute_term(var, replacement),
                b.substitute_term(var, replacement),
            ),
            Formula::Max(a, b) => Formula::max(
                a.substitute_term(var, replacement),
                b.substitute_term(var, replacement),
            ),
            Formula::Scale(e, f) => Formula::scale(e.clone(), f.substitute_term(var, replacement)),
            Formula::SupVar(v, f) | Formula::InfVar(v, f) => {
                let is_sup = matches!(self, Formula::SupVar(_, _));
                let rebuilt = |v: &str, body: Formula| {
                    if is_sup {
                        Formula::sup_var(v, body)
                    } else {
                        Formula::inf_var(v, body)
                    }
                };
                if v == var {
                    return self.clone();
                }
                if !f.free_variables().contains(var) {
                    return self.clone();
                }
                if replacement.variables().contains(v) {
                    let mut avoid = f.variable_names();
                    avoid.extend(replacement.variables());
                    avoid.insert(var.to_string());
                    let fresh = fresh_name(v, &avoid);
                    let renamed = f.substitute_term(v, &Term::Var(fresh.clone()));
                    rebuilt(&fresh, renamed.substitute_term(var, replacement))
                } else {
                    rebuilt(v, f.substitute_term(var, replacement))
                }
            }
            Formula::SupIdx(i, r, f) => {
                Formula::sup_idx(i, r.clone(), f.substitute_term(var, replacement))
            }
            Formula::InfIdx(i, r, f) => {
                Formula::inf_idx(i, r.clone(), f.substitute_term(var, replacement))
            }
            Formula::Rho { slots, bound, body } => {
                let slots: Vec<Term> = slots.iter().map(|t| t.substitute(var, replacement)).collect();
                if bound.iter().any(|b| b == var) || !body.free_variables().contains(var) {
                    return Formula::Rho {
                        slots,
                        bound: bound.clone(),
                        body: body.clone(),
                    };
                }
                let replacement_vars = replacement.variables();
                let mut bound = bound.clone();
                let mut body_now: Formula = (**body).clone();
                if bound.iter().any(|b| replacement_vars.contains(b)) {
                    let mut avoid = body.variable_names();
                    avoid.extend(replacement_vars.iter().cloned());
                    avoid.insert(var.to_string());
                    avoid.extend(bound.iter().cloned());
                    for b in bound.iter_mut() {
                        if replacement_vars.contains(b) {
                            let fresh = fresh_name(b, &avoid);
                            avoid.insert(fresh.clone());
                            body_now = body_now.substitute_term(b, &Term::Var(fresh.clone()));
                            *b = fresh;
                        }
                    }
                }
                Formula::Rho {
                    slots,
                    bound,
                    body: Arc::new(body_now.substitute_term(var, replacement)),
                }
            }
        }
    }

    /// Replaces every occurrence of a constant symbol by a fresh variable.
    pub fn substitute_constant(&self, constant: &str, var: &str) -> Result<Formula, SubstitutionError> {
        if self.variable_names().contains(var) {
            return Err(SubstitutionError::NotFresh(var.to_string()));
        }
        Ok(self.subst_const_unchecked(constant, var))
    }

    fn subst_const_unchecked(&self, constant: &str, var: &str) -> Formula {
        match self {
            Formula::Dist(a, b) => Formula::Dist(
                a.substitute_constant(constant, var),
                b.substitute_constant(constant, var),
            ),
            Formula::Pred(p, args) => Formula::Pred(
                p.clone(),
                args.iter()
                    .map(|a| a.substitute_constant(constant, var))
                    .collect(),
            ),
            Formula::Const(_) => self.clone(),
            Formula::Sub(a, b) => Formula::sub(
                a.subst_const_unchecked(constant, var),
                b.subst_const_unchecked(constant, var),
            ),
            Formula::Add(a, b) => Formula::add(
                a.subst_const_unchecked(constant, var),
                b.subst_const_unchecked(constant, var),
            ),
            Formula::Min(a, b) => Formula::min(
                a.subst_const_unchecked(constant, var),
                b.subst_const_unchecked(constant, var),
            ),
            Formula::Max(a, b) => Formula::max(
                a.subst_const_unchecked(constant, var),
                b.subst_const_unchecked(constant, var),
            ),
            Formula::Scale(e, f) => {
                Formula::scale(e.clone(), f.subst_const_unchecked(constant, var))
            }
            Formula::SupVar(v, f) => Formula::sup_var(v, f.subst_const_unchecked(constant, var)),
            Formula::InfVar(v, f) => Formula::inf_var(v, f.subst_const_unchecked(constant, var)),
            Formula::SupIdx(i, r, f) => {
                Formula::sup_idx(i, r.clone(), f.subst_const_unchecked(constant, var))
            }
            Formula::InfIdx(i, r, f) => {
                Formula::inf_idx(i, r.clone(), f.subst_const_unchecked(constant, var))
            }
            Formula::Rho { slots, bound, body } => Formula::Rho {
                slots: slots
                    .iter()
                    .map(|t| t.substitute_constant(constant, var))
                    .collect(),
                bound: bound.clone(),
                body: Arc::new(body.subst_const_unchecked(constant, var)),
            },
        }
    }

    /// Instantiates the outermost index binder at `k`: returns the body with
    /// every meta expression over that index evaluated to a concrete
    /// rational, tail ranges anchored, and indexed constants resolved.
    pub fn instantiate_index(&self, k: u64) -> Result<Formula, IndexError> {
        let (i, range, body) = match self {
            Formula::SupIdx(i, r, f) | Formula::InfIdx(i, r, f) => (i, r, f),
            _ => return Err(IndexError::NotAnIndexNode),
        };
        let in_range = match range {
            IndexRange::Naturals => k >= 1,
            IndexRange::UpTo(n) => k >= 1 && k <= *n,
            IndexRange::From(v) => k >= *v,
            // The tail start is only known once the enclosing binder is
            // instantiated; accept any positive value here.
            IndexRange::TailFrom(_) => k >= 1,
        };
        if !in_range {
            return Err(IndexError::OutOfRange { value: k });
        }
        Ok(body.substitute_index(i, k))
    }

    /// Syntactic occurrence check for an index name, counting meta
    /// expressions, tail ranges, and indexed constants; inner binders of
    /// the same name shadow their bodies but not their ranges.
    pub(crate) fn references_index(&self, index: &str) -> bool {
        match self {
            Formula::Dist(a, b) => a.mentions_index(index) || b.mentions_index(index),
            Formula::Pred(_, args) => args.iter().any(|a| a.mentions_index(index)),
            Formula::Const(ConstValue::Rat(_)) => false,
            Formula::Const(ConstValue::Recip(e)) => e.index.as_deref() == Some(index),
            Formula::Sub(a, b) | Formula::Add(a, b) | Formula::Min(a, b) | Formula::Max(a, b) => {
                a.references_index(index) || b.references_index(index)
            }
            Formula::Scale(e, f) => {
                e.index.as_deref() == Some(index) || f.references_index(index)
            }
            Formula::SupVar(_, f) | Formula::InfVar(_, f) => f.references_index(index),
            Formula::SupIdx(i, r, f) | Formula::InfIdx(i, r, f) => {
                if matches!(r, IndexRange::TailFrom(j) if j == index) {
                    return true;
                }
                i != index && f.references_index(index)
            }
            Formula::Rho { slots, body, .. } => {
                slots.iter().any(|t| t.mentions_index(index)) || body.references_index(index)
            }
        }
    }

    /// Substitutes a concrete value for an index name. Inner binders of the
    /// same name shadow, but their ranges are still rewritten. Subtrees
    /// that never mention the index are shared, not copied.
    pub(crate) fn substitute_index(&self, index: &str, value: u64) -> Formula {
        let child = |f: &FormulaRef| -> FormulaRef {
            if f.references_index(index) {
                Arc::new(f.substitute_index(index, value))
            } else {
                f.clone()
            }
        };
        let subst_range = |r: &IndexRange| match r {
            IndexRange::TailFrom(j) if j == index => IndexRange::From(value.max(1)),
            other => other.clone(),
        };
        match self {
            Formula::Dist(a, b) => Formula::Dist(
                a.substitute_index(index, value),
                b.substitute_index(index, value),
            ),
            Formula::Pred(p, args) => Formula::Pred(
                p.clone(),
                args.iter().map(|a| a.substitute_index(index, value)).collect(),
            ),
            Formula::Const(ConstValue::Rat(_)) => self.clone(),
            Formula::Const(ConstValue::Recip(e)) => {
                if e.index.as_deref() == Some(index) {
                    let denom = e.value_at(value);
                    Formula::Const(ConstValue::Rat(Rat::one() / denom))
                } else {
                    self.clone()
                }
            }
            Formula::Sub(a, b) => Formula::Sub(child(a), child(b)),
            Formula::Add(a, b) => Formula::Add(child(a), child(b)),
            Formula::Min(a, b) => Formula::Min(child(a), child(b)),
            Formula::Max(a, b) => Formula::Max(child(a), child(b)),
            Formula::Scale(e, f) => {
                Formula::Scale(e.substitute_index(index, value), child(f))
            }
            Formula::SupVar(v, f) => Formula::SupVar(v.clone(), child(f)),
            Formula::InfVar(v, f) => Formula::InfVar(v.clone(), child(f)),
            Formula::SupIdx(i, r, f) => {
                let r = subst_range(r);
                if i == index {
                    Formula::SupIdx(i.clone(), r, f.clone())
                } else {
                    Formula::SupIdx(i.clone(), r, child(f))
                }
            }
            Formula::InfIdx(i, r, f) => {
                let r = subst_range(r);
                if i == index {
                    Formula::InfIdx(i.clone(), r, f.clone())
                } else {
                    Formula::InfIdx(i.clone(), r, child(f))
                }
            }
            Formula::Rho { slots, bound, body } => Formula::Rho {
                slots: slots.iter().map(|t| t.substitute_index(index, value)).collect(),
                bound: bound.clone(),
                body: child(body),
            },
        }
    }

    /// Replaces every finite index binder by the corresponding `Max`/`Min`
    /// chain of instantiations, bottom-up. Semantics-preserving.
    pub fn desugar_finite_index(&self) -> Formula {
        match self {
            Formula::Dist(_, _) | Formula::Pred(_, _) | Formula::Const(_) => self.clone(),
            Formula::Sub(a, b) => {
                Formula::sub(a.desugar_finite_index(), b.desugar_finite_index())
            }
            Formula::Add(a, b) => {
                Formula::add(a.desugar_finite_index(), b.desugar_finite_index())
            }
            Formula::Min(a, b) => {
                Formula::min(a.desugar_finite_index(), b.desugar_finite_index())
            }
            Formula::Max(a, b) => {
                Formula::max(a.desugar_finite_index(), b.desugar_finite_index())
            }
            Formula::Scale(e, f) => Formula::scale(e.clone(), f.desugar_finite_index()),
            Formula::SupVar(v, f) => Formula::sup_var(v, f.desugar_finite_index()),
            Formula::InfVar(v, f) => Formula::inf_var(v, f.desugar_finite_index()),
            Formula::SupIdx(i, IndexRange::UpTo(k), f) => {
                let body = f.desugar_finite_index();
                let items: Vec<Formula> =
                    (1..=*k).map(|v| body.substitute_index(i, v)).collect();
                Formula::max_chain(items)
            }
            Formula::InfIdx(i, IndexRange::UpTo(k), f) => {
                let body = f.desugar_finite_index();
                let items: Vec<Formula> =
                    (1..=*k).map(|v| body.substitute_index(i, v)).collect();
                Formula::min_chain(items)
            }
            Formula::SupIdx(i, r, f) => {
                Formula::sup_idx(i, r.clone(), f.desugar_finite_index())
            }
            Formula::InfIdx(i, r, f) => {
                Formula::inf_idx(i, r.clone(), f.desugar_finite_index())
            }
            Formula::Rho { slots, bound, body } => Formula::Rho {
                slots: slots.clone(),
                bound: bound.clone(),
                body: Arc::new(body.desugar_finite_index()),
            },
        }
    }
}

/// First name in `base, base', base'', ...` not in `avoid`.
pub fn fresh_name(base: &str, avoid: &BTreeSet<String>) -> String {
    let mut candidate = base.to_string();
    while avoid.contains(&candidate) {
        candidate.push('\'');
    }
    candidate
}
