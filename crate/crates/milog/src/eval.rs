//! Recursive evaluation of formulas on finite structures.
//!
//! Everything is exact rational arithmetic. Quantifiers range over the
//! finite point set and finite index ranges are folded out, so the only
//! sources of inexactness are infinite index families. Two family shapes
//! are recognized structurally and evaluated exactly:
//!
//! * the zero test `sup_n min((r*n+s)*F, 1)` with `r > 0`: value 0 if `F`
//!   vanishes, else 1;
//! * its exact-negation dual `inf_n sup_R min(R * max(1/(r*n+s) - F, 0), 1)`:
//!   value 1 if `F` vanishes, else 0.
//!
//! A sup or inf whose body provably does not depend on its index (the
//! recognized patterns count as start-independent even over tail ranges)
//! is evaluated once. Any other infinite family falls back to a certified
//! enclosure obtained from a budget-limited prefix: for a `sup`,
//! `[prefix max, 1]`; for an `inf`, `[0, prefix min]`. An enclosure that
//! closes to a point is reported exactly, so results come back as
//! [`EvalResult::Exact`] whenever no unrecognized infinite family occurs.
//!
//! Formulas share subtrees through `Arc`. The session caches free-variable
//! sets, free-index sets, index dependence, and values of shared or
//! binder-rooted nodes per relevant assignment, which keeps evaluation
//! linear in the size of the shared DAG rather than the unfolded tree.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;
use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::formula::{ConstValue, Formula, FormulaRef, IndexRange, Term};
use crate::rational::{add_trunc, scale_trunc, sub_trunc, Rat};
use crate::structure::{FiniteStructure, PointId};

/// Default truncation budget for unrecognized infinite families.
pub const DEFAULT_BUDGET: u32 = 64;

/// Assignment of structure points to free variables.
pub type Assignment = BTreeMap<String, PointId>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalResult {
    Exact(Rat),
    Bounds { lo: Rat, hi: Rat, budget: u32 },
}

impl EvalResult {
    pub fn exact(&self) -> Option<&Rat> {
        match self {
            EvalResult::Exact(r) => Some(r),
            EvalResult::Bounds { .. } => None,
        }
    }

    pub fn lo(&self) -> &Rat {
        match self {
            EvalResult::Exact(r) => r,
            EvalResult::Bounds { lo, .. } => lo,
        }
    }

    pub fn hi(&self) -> &Rat {
        match self {
            EvalResult::Exact(r) => r,
            EvalResult::Bounds { hi, .. } => hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no point assigned to free variable `{0}`")]
    UnassignedVariable(String),
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("index `{0}` reached evaluation unbound")]
    UnboundIndex(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("structure has no table entry for `{0}`")]
    MissingEntry(String),
    #[error("formula is malformed: {0}")]
    Malformed(String),
    #[error("result is not exact; raise the budget or stay in the exact fragment")]
    NotExact,
}

/// Certified enclosure; exact iff `lo == hi`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Iv {
    lo: Rat,
    hi: Rat,
}

impl Iv {
    fn exact(v: Rat) -> Iv {
        Iv {
            lo: v.clone(),
            hi: v,
        }
    }

    fn is_exact(&self) -> bool {
        self.lo == self.hi
    }

    fn add_t(&self, other: &Iv) -> Iv {
        Iv {
            lo: add_trunc(&self.lo, &other.lo),
            hi: add_trunc(&self.hi, &other.hi),
        }
    }

    fn sub_t(&self, other: &Iv) -> Iv {
        Iv {
            lo: sub_trunc(&self.lo, &other.hi),
            hi: sub_trunc(&self.hi, &other.lo),
        }
    }

    fn min(&self, other: &Iv) -> Iv {
        Iv {
            lo: self.lo.clone().min(other.lo.clone()),
            hi: self.hi.clone().min(other.hi.clone()),
        }
    }

    fn max(&self, other: &Iv) -> Iv {
        Iv {
            lo: self.lo.clone().max(other.lo.clone()),
            hi: self.hi.clone().max(other.hi.clone()),
        }
    }

    fn scale(&self, c: &Rat) -> Iv {
        Iv {
            lo: scale_trunc(c, &self.lo),
            hi: scale_trunc(c, &self.hi),
        }
    }
}

type MemoKey = (usize, Vec<(String, PointId)>);

/// Reusable evaluation context for one structure and budget. Sharing a
/// session across many formulas shares all caches, so formulas built from
/// common `Arc` subtrees are evaluated once per relevant assignment.
pub struct EvalSession<'m> {
    m: &'m FiniteStructure,
    budget: u32,
    memo: RefCell<HashMap<MemoKey, Iv>>,
    fv: RefCell<HashMap<usize, Rc<BTreeSet<String>>>>,
    fidx: RefCell<HashMap<usize, Rc<BTreeSet<String>>>>,
    deps: RefCell<HashMap<(usize, String), bool>>,
    // Instantiations are cached so repeated index values reuse one subtree
    // (and so cache keys, which are pointers, stay alive and unique for
    // the lifetime of the session).
    insts: RefCell<HashMap<(usize, String, u64), FormulaRef>>,
    // Every evaluated formula is retained: the caches key subtrees by
    // pointer, so nodes must not be freed (and their addresses reused)
    // while the session lives.
    retained: RefCell<Vec<FormulaRef>>,
}

impl<'m> EvalSession<'m> {
    pub fn new(m: &'m FiniteStructure, budget: u32) -> Result<Self, EvalError> {
        if budget == 0 {
            return Err(EvalError::ZeroBudget);
        }
        Ok(EvalSession {
            m,
            budget,
            memo: RefCell::new(HashMap::new()),
            fv: RefCell::new(HashMap::new()),
            fidx: RefCell::new(HashMap::new()),
            deps: RefCell::new(HashMap::new()),
            insts: RefCell::new(HashMap::new()),
            retained: RefCell::new(Vec::new()),
        })
    }

    pub fn structure(&self) -> &FiniteStructure {
        self.m
    }

    pub fn evaluate(&self, f: &Formula, env: &Assignment) -> Result<EvalResult, EvalError> {
        // A shallow clone of the root holds the whole child DAG alive.
        self.retained.borrow_mut().push(std::sync::Arc::new(f.clone()));
        for v in self.fv_node(f).iter() {
            if !env.contains_key(v) {
                return Err(EvalError::UnassignedVariable(v.clone()));
            }
        }
        let iv = self.eval(f, env)?;
        Ok(if iv.is_exact() {
            EvalResult::Exact(iv.lo)
        } else {
            EvalResult::Bounds {
                lo: iv.lo,
                hi: iv.hi,
                budget: self.budget,
            }
        })
    }

    // ---- cached structural analyses ------------------------------------

    fn fv_of(&self, f: &FormulaRef) -> Rc<BTreeSet<String>> {
        let key = Arc::as_ptr(f) as usize;
        if let Some(s) = self.fv.borrow().get(&key) {
            return s.clone();
        }
        let s = Rc::new(self.fv_node(f.as_ref()));
        self.fv.borrow_mut().insert(key, s.clone());
        s
    }

    fn fv_node(&self, f: &Formula) -> BTreeSet<String> {
        match f {
            Formula::Dist(a, b) => {
                let mut s = a.variables();
                s.extend(b.variables());
                s
            }
            Formula::Pred(_, args) => {
                let mut s = BTreeSet::new();
                for a in args {
                    s.extend(a.variables());
                }
                s
            }
            Formula::Const(_) => BTreeSet::new(),
            Formula::Sub(a, b) | Formula::Add(a, b) | Formula::Min(a, b) | Formula::Max(a, b) => {
                let mut s = (*self.fv_of(a)).clone();
                s.extend(self.fv_of(b).iter().cloned());
                s
            }
            Formula::Scale(_, g) | Formula::SupIdx(_, _, g) | Formula::InfIdx(_, _, g) => {
                (*self.fv_of(g)).clone()
            }
            Formula::SupVar(v, g) | Formula::InfVar(v, g) => {
                let mut s = (*self.fv_of(g)).clone();
                s.remove(v);
                s
            }
            Formula::Rho { slots, bound, body } => {
                let mut s = (*self.fv_of(body)).clone();
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

    fn fidx_of(&self, f: &FormulaRef) -> Rc<BTreeSet<String>> {
        let key = Arc::as_ptr(f) as usize;
        if let Some(s) = self.fidx.borrow().get(&key) {
            return s.clone();
        }
        let s = Rc::new(self.fidx_node(f.as_ref()));
        self.fidx.borrow_mut().insert(key, s.clone());
        s
    }

    fn fidx_node(&self, f: &Formula) -> BTreeSet<String> {
        let term_indices = |ts: &mut dyn Iterator<Item = &Term>| {
            let mut s = BTreeSet::new();
            for t in ts {
                t.collect_indices(&mut s);
            }
            s
        };
        match f {
            Formula::Dist(a, b) => term_indices(&mut [a, b].into_iter()),
            Formula::Pred(_, args) => term_indices(&mut args.iter()),
            Formula::Const(ConstValue::Rat(_)) => BTreeSet::new(),
            Formula::Const(ConstValue::Recip(e)) => e.index.iter().cloned().collect(),
            Formula::Sub(a, b) | Formula::Add(a, b) | Formula::Min(a, b) | Formula::Max(a, b) => {
                let mut s = (*self.fidx_of(a)).clone();
                s.extend(self.fidx_of(b).iter().cloned());
                s
            }
            Formula::Scale(e, g) => {
                let mut s = (*self.fidx_of(g)).clone();
                s.extend(e.index.iter().cloned());
                s
            }
            Formula::SupVar(_, g) | Formula::InfVar(_, g) => (*self.fidx_of(g)).clone(),
            Formula::SupIdx(i, range, g) | Formula::InfIdx(i, range, g) => {
                let mut s = (*self.fidx_of(g)).clone();
                s.remove(i);
                if let IndexRange::TailFrom(j) = range {
                    s.insert(j.clone());
                }
                s
            }
            Formula::Rho { slots, body, .. } => {
                let mut s = (*self.fidx_of(body)).clone();
                s.extend(term_indices(&mut slots.iter()));
                s
            }
        }
    }

    /// Cached recognizer for the zero-test family rooted at `f`.
    fn zero_test(&self, f: &Formula) -> Option<FormulaRef> {
        match f {
            Formula::SupIdx(i, range, body) if range.is_infinite() => match body.as_ref() {
                Formula::Scale(e, inner)
                    if e.index.as_deref() == Some(i.as_str())
                        && e.coeff.is_positive()
                        && !e.offset.is_negative()
                        && self.fidx_of(inner).is_empty() =>
                {
                    Some(inner.clone())
                }
                _ => None,
            },
            _ => None,
        }
    }

    /// Cached recognizer for the exact-negation family rooted at `f`.
    fn neg_test(&self, f: &Formula) -> Option<FormulaRef> {
        let (n, body) = match f {
            Formula::InfIdx(n, range, body) if range.is_infinite() => (n, body),
            _ => return None,
        };
        let (r_idx, inner) = match body.as_ref() {
            Formula::SupIdx(r, range, inner) if range.is_infinite() => (r, inner),
            _ => return None,
        };
        let (e_scale, diff) = match inner.as_ref() {
            Formula::Scale(e, diff) => (e, diff),
            _ => return None,
        };
        if e_scale.index.as_deref() != Some(r_idx.as_str()) || !e_scale.coeff.is_positive() {
            return None;
        }
        let (threshold, psi) = match diff.as_ref() {
            Formula::Sub(a, b) => (a, b),
            _ => return None,
        };
        match threshold.as_ref() {
            Formula::Const(ConstValue::Recip(e))
                if e.index.as_deref() == Some(n.as_str()) && e.coeff.is_positive() => {}
            _ => return None,
        }
        if self.fidx_of(psi).is_empty() {
            Some(psi.clone())
        } else {
            None
        }
    }

    /// Whether the value of `f` can depend on the free index `index`.
    /// Conservative, except that recognized families over a tail range are
    /// start-independent, as is a binder whose body ignores both indices.
    fn deps(&self, f: &FormulaRef, index: &str) -> bool {
        let key = (Arc::as_ptr(f) as usize, index.to_string());
        if let Some(&hit) = self.deps.borrow().get(&key) {
            return hit;
        }
        let result = self.deps_node(f.as_ref(), index);
        self.deps.borrow_mut().insert(key, result);
        result
    }

    fn deps_node(&self, f: &Formula, index: &str) -> bool {
        match f {
            Formula::Dist(a, b) => a.mentions_index(index) || b.mentions_index(index),
            Formula::Pred(_, args) => args.iter().any(|t| t.mentions_index(index)),
            Formula::Const(ConstValue::Rat(_)) => false,
            Formula::Const(ConstValue::Recip(e)) => e.index.as_deref() == Some(index),
            Formula::Sub(a, b) | Formula::Add(a, b) | Formula::Min(a, b) | Formula::Max(a, b) => {
                self.deps(a, index) || self.deps(b, index)
            }
            Formula::Scale(e, g) => e.index.as_deref() == Some(index) || self.deps(g, index),
            Formula::SupVar(_, g) | Formula::InfVar(_, g) => self.deps(g, index),
            Formula::SupIdx(i, range, g) | Formula::InfIdx(i, range, g) => {
                let range_hit = matches!(range, IndexRange::TailFrom(j) if j == index);
                if range_hit {
                    if let Some(inner) = self.zero_test(f).or_else(|| self.neg_test(f)) {
                        return self.deps(&inner, index);
                    }
                    // A sup/inf over a nonempty tail of a body that ignores
                    // its own binder is start-independent.
                    if !self.deps(g, i) && (i == index || !self.deps(g, index)) {
                        return false;
                    }
                    return true;
                }
                if i == index {
                    return false; // shadowed
                }
                self.deps(g, index)
            }
            Formula::Rho { slots, body, .. } => {
                slots.iter().any(|t| t.mentions_index(index)) || self.deps(body, index)
            }
        }
    }

    // ---- evaluation -----------------------------------------------------

    fn point_of(&self, t: &Term, env: &Assignment) -> Result<PointId, EvalError> {
        match t {
            Term::Var(v) => env
                .get(v)
                .copied()
                .ok_or_else(|| EvalError::UnassignedVariable(v.clone())),
            Term::Const(c) => self
                .m
                .constant_point(c)
                .ok_or_else(|| EvalError::UnknownSymbol(c.clone())),
            Term::IndexedConst { index, .. } => Err(EvalError::UnboundIndex(index.clone())),
            Term::App(f, args) => {
                let tuple = args
                    .iter()
                    .map(|a| self.point_of(a, env))
                    .collect::<Result<Vec<_>, _>>()?;
                self.m
                    .function_value(f, &tuple)
                    .ok_or_else(|| EvalError::MissingEntry(f.clone()))
            }
        }
    }

    /// Evaluates a child node, memoizing shared and binder-rooted subtrees
    /// per assignment of their free variables.
    fn eval_child(&self, f: &FormulaRef, env: &Assignment) -> Result<Iv, EvalError> {
        let worthy = Arc::strong_count(f) > 1
            || matches!(
                f.as_ref(),
                Formula::SupVar(_, _)
                    | Formula::InfVar(_, _)
                    | Formula::SupIdx(_, _, _)
                    | Formula::InfIdx(_, _, _)
                    | Formula::Rho { .. }
            );
        if !worthy {
            return self.eval(f.as_ref(), env);
        }
        let fv = self.fv_of(f);
        let key: MemoKey = (
            Arc::as_ptr(f) as usize,
            fv.iter()
                .map(|v| {
                    env.get(v)
                        .map(|&p| (v.clone(), p))
                        .ok_or_else(|| EvalError::UnassignedVariable(v.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?,
        );
        if let Some(hit) = self.memo.borrow().get(&key) {
            return Ok(hit.clone());
        }
        let iv = self.eval(f.as_ref(), env)?;
        self.memo.borrow_mut().insert(key, iv.clone());
        Ok(iv)
    }

    fn eval(&self, f: &Formula, env: &Assignment) -> Result<Iv, EvalError> {
        match f {
            Formula::Dist(a, b) => {
                let x = self.point_of(a, env)?;
                let y = self.point_of(b, env)?;
                Ok(Iv::exact(self.m.distance(x, y).clone()))
            }
            Formula::Pred(p, args) => {
                let tuple = args
                    .iter()
                    .map(|a| self.point_of(a, env))
                    .collect::<Result<Vec<_>, _>>()?;
                match self.m.predicate_value(p, &tuple) {
                    Some(v) => Ok(Iv::exact(v.clone())),
                    None if self.m.signature().predicate(p).is_none() => {
                        Err(EvalError::UnknownSymbol(p.clone()))
                    }
                    None => Err(EvalError::MissingEntry(p.clone())),
                }
            }
            Formula::Const(ConstValue::Rat(r)) => {
                if r.is_negative() || *r > Rat::one() {
                    return Err(EvalError::Malformed(format!("constant {r} outside [0,1]")));
                }
                Ok(Iv::exact(r.clone()))
            }
            Formula::Const(ConstValue::Recip(e)) => {
                if !e.is_constant() {
                    return Err(EvalError::UnboundIndex(e.index.clone().unwrap_or_default()));
                }
                if e.offset < Rat::one() {
                    return Err(EvalError::Malformed("reciprocal of a value below 1".into()));
                }
                Ok(Iv::exact(Rat::one() / e.offset.clone()))
            }
            Formula::Sub(a, b) => Ok(self.eval_child(a, env)?.sub_t(&self.eval_child(b, env)?)),
            Formula::Add(a, b) => Ok(self.eval_child(a, env)?.add_t(&self.eval_child(b, env)?)),
            Formula::Min(a, b) => Ok(self.eval_child(a, env)?.min(&self.eval_child(b, env)?)),
            Formula::Max(a, b) => Ok(self.eval_child(a, env)?.max(&self.eval_child(b, env)?)),
            Formula::Scale(e, body) => {
                if !e.is_constant() {
                    return Err(EvalError::UnboundIndex(e.index.clone().unwrap_or_default()));
                }
                if e.offset.is_negative() {
                    return Err(EvalError::Malformed("negative scale factor".into()));
                }
                Ok(self.eval_child(body, env)?.scale(&e.offset))
            }
            Formula::SupVar(v, body) => {
                let mut acc: Option<Iv> = None;
                for p in 0..self.m.point_count() {
                    let mut env2 = env.clone();
                    env2.insert(v.clone(), p);
                    let iv = self.eval_child(body, &env2)?;
                    acc = Some(match acc {
                        None => iv,
                        Some(a) => a.max(&iv),
                    });
                }
                acc.ok_or_else(|| EvalError::Malformed("structure has no points".into()))
            }
            Formula::InfVar(v, body) => {
                let mut acc: Option<Iv> = None;
                for p in 0..self.m.point_count() {
                    let mut env2 = env.clone();
                    env2.insert(v.clone(), p);
                    let iv = self.eval_child(body, &env2)?;
                    acc = Some(match acc {
                        None => iv,
                        Some(a) => a.min(&iv),
                    });
                }
                acc.ok_or_else(|| EvalError::Malformed("structure has no points".into()))
            }
            Formula::SupIdx(i, range, body) => self.eval_sup_idx(f, i, range, body, env),
            Formula::InfIdx(i, range, body) => self.eval_inf_idx(f, i, range, body, env),
            Formula::Rho { slots, bound, body } => self.eval_rho(slots, bound, body, env),
        }
    }

    fn instantiate(&self, body: &FormulaRef, index: &str, k: u64) -> FormulaRef {
        let key = (Arc::as_ptr(body) as usize, index.to_string(), k);
        if let Some(hit) = self.insts.borrow().get(&key) {
            return hit.clone();
        }
        let inst = Arc::new(body.substitute_index(index, k));
        self.insts.borrow_mut().insert(key, inst.clone());
        inst
    }

    fn range_start(&self, range: &IndexRange) -> Result<u64, EvalError> {
        match range {
            IndexRange::Naturals | IndexRange::UpTo(_) => Ok(1),
            IndexRange::From(v) => Ok(*v),
            IndexRange::TailFrom(j) => Err(EvalError::UnboundIndex(j.clone())),
        }
    }

    fn eval_sup_idx(
        &self,
        node: &Formula,
        i: &str,
        range: &IndexRange,
        body: &FormulaRef,
        env: &Assignment,
    ) -> Result<Iv, EvalError> {
        if let IndexRange::UpTo(k) = range {
            let mut acc: Option<Iv> = None;
            for v in 1..=*k {
                let inst = self.instantiate(body, i, v);
                let iv = self.eval_child(&inst, env)?;
                acc = Some(match acc {
                    None => iv,
                    Some(a) => a.max(&iv),
                });
            }
            return acc.ok_or_else(|| EvalError::Malformed("empty index range".into()));
        }
        if let Some(inner) = self.zero_test(node) {
            let iv = self.eval_child(&inner, env)?;
            return Ok(if iv.is_exact() && iv.lo.is_zero() {
                Iv::exact(Rat::zero())
            } else if iv.lo.is_positive() {
                Iv::exact(Rat::one())
            } else {
                Iv {
                    lo: Rat::zero(),
                    hi: Rat::one(),
                }
            });
        }
        if !self.deps(body, i) {
            let start = self.range_start(range)?;
            let inst = self.instantiate(body, i, start);
            return self.eval_child(&inst, env);
        }
        // Certified enclosure from a budget-limited prefix.
        let start = self.range_start(range)?;
        let mut lo = Rat::zero();
        for v in start..start + self.budget as u64 {
            let inst = self.instantiate(body, i, v);
            let iv = self.eval_child(&inst, env)?;
            if iv.lo > lo {
                lo = iv.lo;
            }
            if lo == Rat::one() {
                break;
            }
        }
        Ok(Iv { lo, hi: Rat::one() })
    }

    fn eval_inf_idx(
        &self,
        node: &Formula,
        i: &str,
        range: &IndexRange,
        body: &FormulaRef,
        env: &Assignment,
    ) -> Result<Iv, EvalError> {
        if let IndexRange::UpTo(k) = range {
            let mut acc: Option<Iv> = None;
            for v in 1..=*k {
                let inst = self.instantiate(body, i, v);
                let iv = self.eval_child(&inst, env)?;
                acc = Some(match acc {
                    None => iv,
                    Some(a) => a.min(&iv),
                });
            }
            return acc.ok_or_else(|| EvalError::Malformed("empty index range".into()));
        }
        if let Some(inner) = self.neg_test(node) {
            let iv = self.eval_child(&inner, env)?;
            return Ok(if iv.is_exact() && iv.lo.is_zero() {
                Iv::exact(Rat::one())
            } else if iv.lo.is_positive() {
                Iv::exact(Rat::zero())
            } else {
                Iv {
                    lo: Rat::zero(),
                    hi: Rat::one(),
                }
            });
        }
        if !self.deps(body, i) {
            let start = self.range_start(range)?;
            let inst = self.instantiate(body, i, start);
            return self.eval_child(&inst, env);
        }
        let start = self.range_start(range)?;
        let mut hi = Rat::one();
        for v in start..start + self.budget as u64 {
            let inst = self.instantiate(body, i, v);
            let iv = self.eval_child(&inst, env)?;
            if iv.hi < hi {
                hi = iv.hi;
            }
            if hi.is_zero() {
                break;
            }
        }
        Ok(Iv {
            lo: Rat::zero(),
            hi,
        })
    }

    /// Distance from the slot tuple to the zeroset of `body`. Membership of
    /// each candidate tuple is decided exactly when the body evaluates
    /// exactly; undecided members widen the enclosure.
    fn eval_rho(
        &self,
        slots: &[Term],
        bound: &[String],
        body: &FormulaRef,
        env: &Assignment,
    ) -> Result<Iv, EvalError> {
        let anchor: Vec<PointId> = slots
            .iter()
            .map(|t| self.point_of(t, env))
            .collect::<Result<Vec<_>, _>>()?;
        let mut certain = Rat::one();
        let mut possible = Rat::one();
        for tuple in self.m.tuples(bound.len()) {
            let mut env2 = env.clone();
            for (v, &p) in bound.iter().zip(&tuple) {
                env2.insert(v.clone(), p);
            }
            let iv = self.eval_child(body, &env2)?;
            let d = self.m.tuple_distance(&anchor, &tuple);
            if iv.is_exact() && iv.lo.is_zero() {
                if d < certain {
                    certain = d.clone();
                }
                if d < possible {
                    possible = d;
                }
            } else if !iv.lo.is_positive() {
                // Membership undecided; it can only shrink the distance.
                if d < possible {
                    possible = d;
                }
            }
        }
        Ok(Iv {
            lo: possible,
            hi: certain,
        })
    }
}

/// Evaluates `f` on `m` under `env` with the given truncation budget.
pub fn evaluate(
    m: &FiniteStructure,
    f: &Formula,
    env: &Assignment,
    budget: u32,
) -> Result<EvalResult, EvalError> {
    EvalSession::new(m, budget)?.evaluate(f, env)
}

/// Satisfaction: the value is exactly 0. Errors when the result is not
/// exact at the default budget.
pub fn satisfies(m: &FiniteStructure, f: &Formula, env: &Assignment) -> Result<bool, EvalError> {
    match evaluate(m, f, env, DEFAULT_BUDGET)? {
        EvalResult::Exact(v) => Ok(v.is_zero()),
        EvalResult::Bounds { .. } => Err(EvalError::NotExact),
    }
}

/// Matches the zero-test family `sup_i min((r*i+s)*F, 1)` over an infinite
/// range with `r > 0` and `F` free of index references; returns `F`.
pub fn recognize_zero_test(f: &Formula) -> Option<&Formula> {
    match f {
        Formula::SupIdx(i, range, body) if range.is_infinite() => match body.as_ref() {
            Formula::Scale(e, inner)
                if e.index.as_deref() == Some(i.as_str())
                    && e.coeff.is_positive()
                    && !e.offset.is_negative()
                    && inner.free_indices().is_empty() =>
            {
                Some(inner)
            }
            _ => None,
        },
        _ => None,
    }
}

/// Matches the exact-negation family
/// `inf_n sup_R min(R * (1/(r*n+s) - F), 1)` (both ranges infinite, both
/// coefficients positive, `F` free of index references); returns `F`. The
/// family's value is 1 where `F` vanishes and 0 elsewhere.
pub fn recognize_exact_negation(f: &Formula) -> Option<&Formula> {
    let (n, body) = match f {
        Formula::InfIdx(n, range, body) if range.is_infinite() => (n, body),
        _ => return None,
    };
    let (r_idx, inner) = match body.as_ref() {
        Formula::SupIdx(r, range, inner) if range.is_infinite() => (r, inner),
        _ => return None,
    };
    let (e_scale, diff) = match inner.as_ref() {
        Formula::Scale(e, diff) => (e, diff),
        _ => return None,
    };
    if e_scale.index.as_deref() != Some(r_idx.as_str()) || !e_scale.coeff.is_positive() {
        return None;
    }
    let (threshold, psi) = match diff.as_ref() {
        Formula::Sub(a, b) => (a, b),
        _ => return None,
    };
    match threshold.as_ref() {
        Formula::Const(ConstValue::Recip(e))
            if e.index.as_deref() == Some(n.as_str()) && e.coeff.is_positive() => {}
        _ => return None,
    }
    if psi.free_indices().is_empty() {
        Some(psi)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::formula::MetaExpr;
    use crate::rational::{int, rat};

    fn env1(m: &FiniteStructure, var: &str, point: &str) -> Assignment {
        BTreeMap::from([(var.to_string(), m.point_id(point).unwrap())])
    }

    fn p_of(v: &str) -> Formula {
        Formula::pred("P", vec![Term::var(v)])
    }

    #[test]
    fn table_lookup() {
        let m = fixtures::tri();
        let r = evaluate(&m, &p_of("x"), &env1(&m, "x", "b"), DEFAULT_BUDGET).unwrap();
        assert_eq!(r, EvalResult::Exact(rat(1, 2)));
    }

    #[test]
    fn zero_test_examples() {
        let m = fixtures::tri();
        let f = Formula::ind(p_of("x"));
        assert_eq!(
            evaluate(&m, &f, &env1(&m, "x", "a"), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(0))
        );
        assert_eq!(
            evaluate(&m, &f, &env1(&m, "x", "b"), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(1))
        );
    }

    #[test]
    fn sup_over_points() {
        let m = fixtures::tri();
        let f = Formula::sup_var("x", p_of("x"));
        assert_eq!(
            evaluate(&m, &f, &Assignment::new(), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(1))
        );
    }

    #[test]
    fn rho_examples() {
        let m = fixtures::tri();
        let f = Formula::rho(vec![Term::var("x")], vec!["y".into()], p_of("y"));
        assert_eq!(
            evaluate(&m, &f, &env1(&m, "x", "b"), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(rat(1, 2))
        );
        assert_eq!(
            evaluate(&m, &f, &env1(&m, "x", "a"), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(0))
        );
        let empty = Formula::rho(
            vec![Term::var("x")],
            vec!["y".into()],
            Formula::rat_const(int(1)),
        );
        assert_eq!(
            evaluate(&m, &empty, &env1(&m, "x", "a"), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(1))
        );
    }

    #[test]
    fn enumeration_sentence_on_m1_and_m2() {
        let f = crate::syntax::parse_formula(
            "(sup x (iinf n (upto 2) (isup R nat (scale R (d x cn)))))",
            &crate::signature::Signature {
                constants: vec!["c1".into(), "c2".into()],
                ..Default::default()
            },
        )
        .unwrap();
        // M1/M2 with constants named c1, c2 to match the indexed family.
        let mk = |extra: bool| {
            let sig = crate::signature::Signature {
                constants: vec!["c1".into(), "c2".into()],
                ..Default::default()
            };
            let names: &[&str] = if extra {
                &["p0", "p1", "p2"]
            } else {
                &["p0", "p1"]
            };
            let mut m = FiniteStructure::new(sig, names);
            m.set_distance("p0", "p1", rat(1, 2));
            if extra {
                m.set_distance("p0", "p2", rat(1, 2));
                m.set_distance("p1", "p2", rat(1, 2));
            }
            m.set_constant("c1", "p0");
            m.set_constant("c2", "p1");
            m
        };
        let m1 = mk(false);
        let m2 = mk(true);
        assert!(satisfies(&m1, &f, &Assignment::new()).unwrap());
        assert!(!satisfies(&m2, &f, &Assignment::new()).unwrap());
        assert_eq!(
            evaluate(&m2, &f, &Assignment::new(), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(1))
        );
    }

    #[test]
    fn dist_reflexive_satisfaction() {
        let m = fixtures::sym();
        let f = Formula::dist(Term::var("x"), Term::var("x"));
        assert!(satisfies(&m, &f, &env1(&m, "x", "a")).unwrap());
    }

    #[test]
    fn recognizer_examples() {
        let f = Formula::ind(p_of("x"));
        assert_eq!(recognize_zero_test(&f), Some(&p_of("x")));

        let not_scale = Formula::sup_idx(
            "n",
            IndexRange::Naturals,
            Formula::recip(MetaExpr::linear("n")),
        );
        assert_eq!(recognize_zero_test(&not_scale), None);

        let shifted = Formula::sup_idx(
            "m",
            IndexRange::TailFrom("k".into()),
            Formula::scale(MetaExpr::linear("m"), p_of("x")),
        );
        assert_eq!(recognize_zero_test(&shifted), Some(&p_of("x")));
    }

    #[test]
    fn negation_pattern_is_recognized_and_exact() {
        let m = fixtures::tri();
        let neg = crate::transform::exact_negation(&p_of("x"));
        assert!(recognize_exact_negation(&neg).is_some());
        assert_eq!(
            evaluate(&m, &neg, &env1(&m, "x", "a"), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(1))
        );
        assert_eq!(
            evaluate(&m, &neg, &env1(&m, "x", "b"), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(0))
        );
    }

    #[test]
    fn tail_families_collapse_when_start_independent() {
        let m = fixtures::tri();
        // inf_k sup_{m >= k} min(m * P(x), 1): the inner family is the zero
        // test whatever the tail start, so the whole formula is exact.
        let f = Formula::inf_idx(
            "k",
            IndexRange::Naturals,
            Formula::sup_idx(
                "m",
                IndexRange::TailFrom("k".into()),
                Formula::scale(MetaExpr::linear("m"), p_of("x")),
            ),
        );
        assert_eq!(
            evaluate(&m, &f, &env1(&m, "x", "b"), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(1))
        );
        assert_eq!(
            evaluate(&m, &f, &env1(&m, "x", "a"), DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(0))
        );
    }

    #[test]
    fn unrecognized_families_give_monotone_bounds() {
        let m = fixtures::tri();
        // inf_n max(1/n, P(x)): true value is P(x), never attained.
        let f = Formula::inf_idx(
            "n",
            IndexRange::Naturals,
            Formula::max(Formula::recip(MetaExpr::linear("n")), p_of("x")),
        );
        let env = env1(&m, "x", "b");
        let r8 = evaluate(&m, &f, &env, 8).unwrap();
        let r64 = evaluate(&m, &f, &env, 64).unwrap();
        match (&r8, &r64) {
            (
                EvalResult::Bounds { lo: l8, hi: h8, .. },
                EvalResult::Bounds { lo: l64, hi: h64, .. },
            ) => {
                assert!(l8 <= l64);
                assert!(h64 <= h8);
                assert!(*l8 <= rat(1, 2) && rat(1, 2) <= *h8);
            }
            other => panic!("expected bounds, got {other:?}"),
        }
    }

    #[test]
    fn budget_validation() {
        let m = fixtures::tri();
        assert!(matches!(
            evaluate(&m, &p_of("x"), &env1(&m, "x", "a"), 0),
            Err(EvalError::ZeroBudget)
        ));
        assert!(matches!(
            evaluate(&m, &p_of("x"), &Assignment::new(), 1),
            Err(EvalError::UnassignedVariable(_))
        ));
    }

    #[test]
    fn values_stay_in_unit_interval_on_corpus() {
        for seed in 0..40u64 {
            let m = crate::corpus::random_structure(seed);
            let f = crate::corpus::random_formula(m.signature(), seed, &Default::default());
            let env = crate::corpus::random_assignment(&m, &f, seed);
            let r = evaluate(&m, &f, &env, 16).unwrap();
            assert!(!r.lo().is_negative() && *r.hi() <= int(1), "seed {seed}");
            assert!(r.lo() <= r.hi(), "seed {seed}");
            // Determinism.
            assert_eq!(r, evaluate(&m, &f, &env, 16).unwrap());
        }
    }

    #[test]
    fn desugaring_preserves_values_on_corpus() {
        for seed in 0..40u64 {
            let m = crate::corpus::random_structure(seed);
            let f = crate::corpus::random_formula(m.signature(), seed, &Default::default());
            let g = f.desugar_finite_index();
            let env = crate::corpus::random_assignment(&m, &f, seed);
            assert_eq!(
                evaluate(&m, &f, &env, 16).unwrap(),
                evaluate(&m, &g, &env, 16).unwrap(),
                "seed {seed}"
            );
        }
    }
}
