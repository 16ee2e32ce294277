//! Finite-structure Scott analysis.
//!
//! The back-and-forth hierarchy assigns every tuple `a` (arity at most the
//! cap) a `[0,1]`-valued formula `phi^m_a` measuring how well another tuple
//! imitates it. Stage 0 compares the finite atomic basis; each later stage
//! adds the extension and covering moves for arities below the cap. Values
//! are nondecreasing in the stage and live in the finite lattice generated
//! by the atomic values under min/max, so the per-stage value matrices
//! stabilize; the stabilized formulas feed three constructions:
//!
//! * `theta` formulas — zero tests of the stabilized hierarchy, which on
//!   the source structure cut out exactly the automorphism orbits;
//! * Scott sentences — structure descriptions whose value on a comparison
//!   structure is 0 or 1, with 0 exactly on isomorphic copies (validated
//!   against the brute-force oracle at this scale);
//! * definability synthesis — for an automorphism-invariant predicate
//!   table, a formula sandwiching the table within a chosen grid step.
//!
//! Function symbols are not supported here (the atomic basis at each arity
//! must stay finite); everything else in the crate accepts them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::eval::{EvalResult, EvalSession, DEFAULT_BUDGET};
use crate::formula::{Formula, FormulaRef, IndexRange, MetaExpr, Term};
use crate::par;
use crate::rational::{format_rat, rat, Rat};
use crate::structure::{Automorphism, FiniteStructure, PointId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScottError {
    #[error("back-and-forth tables do not support function symbols")]
    FunctionSymbols,
    #[error("tuple arity {arity} exceeds the table cap {cap}")]
    CapTooSmall { cap: usize, arity: usize },
    #[error("structures have different signatures")]
    SignatureMismatch,
    #[error("sentence evaluation did not return an exact value")]
    NonExact,
    #[error("evaluation failed: {0}")]
    Eval(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DefinabilityError {
    #[error("predicate table is empty or has mixed arity")]
    BadTable,
    #[error("table value {value} at ({tuple}) is outside [0,1]")]
    ValueOutOfRange { tuple: String, value: String },
    #[error("table is missing tuple ({tuple})")]
    MissingTuple { tuple: String },
    #[error("grid resolution must be at least 1")]
    BadGrid,
    #[error(
        "table is not invariant: automorphism {automorphism:?} moves ({tuple}) with value {value} to a tuple with value {image_value}"
    )]
    NotInvariant {
        automorphism: Automorphism,
        tuple: String,
        value: String,
        image_value: String,
    },
    #[error("unknown point `{0}`")]
    UnknownPoint(String),
    #[error(transparent)]
    Scott(#[from] ScottError),
}

/// Interned rational values; matrices hold `u32` ids.
#[derive(Debug, Default)]
struct ValuePool {
    values: Vec<Rat>,
    ids: HashMap<Rat, u32>,
}

impl ValuePool {
    fn intern(&mut self, v: Rat) -> u32 {
        if let Some(&id) = self.ids.get(&v) {
            return id;
        }
        let id = self.values.len() as u32;
        self.values.push(v.clone());
        self.ids.insert(v, id);
        id
    }

    fn value(&self, id: u32) -> &Rat {
        &self.values[id as usize]
    }
}

/// One stage of the hierarchy: per arity, the value matrix (row = reference
/// tuple, column = compared tuple) and the formulas.
#[derive(Debug, Clone)]
struct Stage {
    /// `matrices[k]` has `n^k * n^k` entries.
    matrices: Vec<Arc<Vec<u32>>>,
    /// `formulas[k][rank]` is `phi^stage` for the rank-th arity-`k` tuple.
    formulas: Vec<Arc<Vec<FormulaRef>>>,
}

/// The computed hierarchy for one structure.
#[derive(Debug)]
pub struct BackAndForthTables {
    structure: FiniteStructure,
    cap: usize,
    stages: Vec<Stage>,
    pool: ValuePool,
}

fn tuple_var(position: usize) -> String {
    format!("x{}", position + 1)
}

/// Atomic comparison basis at a given arity: distances between tuple
/// variables, distances to constants, and predicate applications over the
/// tuple variables (with repetition).
enum Atom {
    DistVars(usize, usize),
    DistConst(usize, String, PointId),
    Pred(String, Vec<usize>),
}

impl Atom {
    fn formula(&self) -> Formula {
        match self {
            Atom::DistVars(i, j) => {
                Formula::Dist(Term::var(&tuple_var(*i)), Term::var(&tuple_var(*j)))
            }
            Atom::DistConst(i, name, _) => {
                Formula::Dist(Term::var(&tuple_var(*i)), Term::cons(name))
            }
            Atom::Pred(name, positions) => Formula::Pred(
                name.clone(),
                positions.iter().map(|&p| Term::var(&tuple_var(p))).collect(),
            ),
        }
    }

    fn value(&self, m: &FiniteStructure, tuple: &[PointId]) -> Rat {
        match self {
            Atom::DistVars(i, j) => m.distance(tuple[*i], tuple[*j]).clone(),
            Atom::DistConst(i, _, c) => m.distance(tuple[*i], *c).clone(),
            Atom::Pred(name, positions) => {
                let args: Vec<PointId> = positions.iter().map(|&p| tuple[p]).collect();
                m.predicate_value(name, &args)
                    .expect("validated structure has total tables")
                    .clone()
            }
        }
    }
}

fn atoms(m: &FiniteStructure, arity: usize) -> Vec<Atom> {
    let mut out = Vec::new();
    for i in 0..arity {
        for j in (i + 1)..arity {
            out.push(Atom::DistVars(i, j));
        }
    }
    for c in &m.signature().constants {
        let p = m.constant_point(c).expect("validated constants are total");
        for i in 0..arity {
            out.push(Atom::DistConst(i, c.clone(), p));
        }
    }
    for pred in &m.signature().predicates {
        let mut positions = vec![0usize; pred.arity];
        if arity == 0 {
            continue;
        }
        loop {
            out.push(Atom::Pred(pred.name.clone(), positions.clone()));
            let mut i = pred.arity;
            let mut done = false;
            loop {
                if i == 0 {
                    done = true;
                    break;
                }
                i -= 1;
                positions[i] += 1;
                if positions[i] < arity {
                    break;
                }
                positions[i] = 0;
            }
            if done {
                break;
            }
        }
    }
    out
}

/// `|f - c|` as `max(f - c, c - f)` with truncated differences; exact on
/// `[0,1]` values.
fn abs_diff(f: &FormulaRef, c: &Rat) -> Formula {
    let cf = Arc::new(Formula::rat_const(c.clone()));
    Formula::Max(
        Arc::new(Formula::Sub(f.clone(), cf.clone())),
        Arc::new(Formula::Sub(cf, f.clone())),
    )
}

/// The zero test with a fixed index name. The hierarchy formulas contain no
/// index binders, so any name is fresh for them.
fn ind_named(name: &str, f: Formula) -> Formula {
    Formula::sup_idx(
        name,
        IndexRange::Naturals,
        Formula::scale(MetaExpr::linear(name), f),
    )
}

/// Exact negation with fixed index names (fresh by the same argument).
fn neg_named(f: Formula, n: &str, r: &str) -> Formula {
    Formula::inf_idx(
        n,
        IndexRange::Naturals,
        Formula::sup_idx(
            r,
            IndexRange::Naturals,
            Formula::scale(
                MetaExpr::linear(r),
                Formula::sub(
                    Formula::Const(crate::formula::ConstValue::Recip(MetaExpr::linear(n))),
                    f,
                ),
            ),
        ),
    )
}

impl BackAndForthTables {
    /// Computes the hierarchy up to the arity cap, iterating until the
    /// value matrices stop changing.
    pub fn compute(m: &FiniteStructure, cap: usize) -> Result<Self, ScottError> {
        Self::compute_with(m, cap, par::default_parallel())
    }

    /// Sequential variant of [`BackAndForthTables::compute`].
    pub fn compute_seq(m: &FiniteStructure, cap: usize) -> Result<Self, ScottError> {
        Self::compute_with(m, cap, false)
    }

    fn compute_with(m: &FiniteStructure, cap: usize, parallel: bool) -> Result<Self, ScottError> {
        if !m.signature().functions.is_empty() {
            return Err(ScottError::FunctionSymbols);
        }
        let n = m.point_count();
        let mut pool = ValuePool::default();

        // Stage 0: atomic comparison.
        let mut matrices = Vec::with_capacity(cap + 1);
        let mut formulas = Vec::with_capacity(cap + 1);
        for k in 0..=cap {
            let ats = atoms(m, k);
            let tuples = m.tuples(k);
            let count = tuples.len();
            // Atom values per tuple, then pairwise sup differences.
            let table: Vec<Vec<Rat>> = par::map_vec(parallel, tuples.clone(), |t| {
                ats.iter().map(|a| a.value(m, &t)).collect()
            });
            let rows: Vec<Vec<Rat>> = par::map_vec(parallel, (0..count).collect(), |ra| {
                (0..count)
                    .map(|rb| {
                        let mut best = Rat::zero();
                        for (va, vb) in table[ra].iter().zip(&table[rb]) {
                            let gap = (va - vb).abs();
                            if gap > best {
                                best = gap;
                            }
                        }
                        best
                    })
                    .collect()
            });
            let mut mat = Vec::with_capacity(count * count);
            for row in rows {
                for v in row {
                    mat.push(pool.intern(v));
                }
            }
            matrices.push(Arc::new(mat));

            let atom_forms: Vec<FormulaRef> = ats.iter().map(|a| Arc::new(a.formula())).collect();
            let fs: Vec<FormulaRef> = tuples
                .iter()
                .enumerate()
                .map(|(ra, _)| {
                    let pieces: Vec<Formula> = atom_forms
                        .iter()
                        .zip(&table[ra])
                        .map(|(af, c)| abs_diff(af, c))
                        .collect();
                    Arc::new(Formula::max_chain(pieces))
                })
                .collect();
            formulas.push(Arc::new(fs));
        }
        let mut tables = BackAndForthTables {
            structure: m.clone(),
            cap,
            stages: vec![Stage { matrices, formulas }],
            pool,
        };

        loop {
            let prev = tables.stages.last().unwrap();
            let next = successor_stage(prev, &mut tables.pool, cap, n, parallel);
            let stable = next
                .matrices
                .iter()
                .zip(&tables.stages.last().unwrap().matrices)
                .all(|(a, b)| a == b);
            if stable {
                break;
            }
            tables.stages.push(next);
            assert!(tables.stages.len() < 10_000, "hierarchy failed to stabilize");
        }
        Ok(tables)
    }
}

/// One refinement stage: arities below the cap gain the extension and
/// covering moves computed from the next arity up.
fn successor_stage(
    prev: &Stage,
    pool: &mut ValuePool,
    cap: usize,
    n: usize,
    parallel: bool,
) -> Stage {
    let mut matrices = Vec::with_capacity(cap + 1);
    let mut formulas = Vec::with_capacity(cap + 1);
    for k in 0..=cap {
        if k == cap {
            // Top arity never refines.
            matrices.push(prev.matrices[k].clone());
            formulas.push(prev.formulas[k].clone());
            continue;
        }
        let count = n.pow(k as u32);
        let cur = &prev.matrices[k];
        let ext = &prev.matrices[k + 1];
        let rows: Vec<Vec<Rat>> = {
            let pool: &ValuePool = pool;
            par::map_vec(parallel, (0..count).collect(), |ra| {
                (0..count)
                    .map(|rb| {
                        let extc = count * n;
                        let mut best = pool.value(cur[ra * count + rb]).clone();
                        // Extension move: every reference extension must be
                        // imitated by some compared extension.
                        for b in 0..n {
                            let row = (ra * n + b) * extc;
                            let mut inner = Rat::one();
                            for y in 0..n {
                                let v = pool.value(ext[row + rb * n + y]);
                                if *v < inner {
                                    inner = v.clone();
                                }
                                if inner.is_zero() {
                                    break;
                                }
                            }
                            if inner > best {
                                best = inner;
                            }
                        }
                        // Covering move: every compared extension must
                        // imitate some reference extension.
                        for y in 0..n {
                            let col = rb * n + y;
                            let mut inner = Rat::one();
                            for b in 0..n {
                                let v = pool.value(ext[(ra * n + b) * extc + col]);
                                if *v < inner {
                                    inner = v.clone();
                                }
                                if inner.is_zero() {
                                    break;
                                }
                            }
                            if inner > best {
                                best = inner;
                            }
                        }
                        best
                    })
                    .collect()
            })
        };
        let mut mat = Vec::with_capacity(count * count);
        for row in rows {
            for v in row {
                mat.push(pool.intern(v));
            }
        }
        matrices.push(Arc::new(mat));

        let y = tuple_var(k);
        let fs: Vec<FormulaRef> = (0..count)
            .map(|ra| {
                let base = (*prev.formulas[k][ra]).clone();
                let extend = Formula::max_chain(
                    (0..n)
                        .map(|b| {
                            Formula::InfVar(y.clone(), prev.formulas[k + 1][ra * n + b].clone())
                        })
                        .collect(),
                );
                let cover = Formula::SupVar(
                    y.clone(),
                    Arc::new(Formula::min_chain(
                        (0..n)
                            .map(|b| (*prev.formulas[k + 1][ra * n + b]).clone())
                            .collect(),
                    )),
                );
                Arc::new(Formula::max_chain(vec![base, extend, cover]))
            })
            .collect();
        formulas.push(Arc::new(fs));
    }
    Stage { matrices, formulas }
}

impl BackAndForthTables {
    pub fn structure(&self) -> &FiniteStructure {
        &self.structure
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// The stabilization stage: matrices at this stage equal their
    /// successor's.
    pub fn stable_stage(&self) -> usize {
        self.stages.len() - 1
    }

    fn rank(&self, tuple: &[PointId]) -> usize {
        let n = self.structure.point_count();
        tuple.iter().fold(0, |acc, &p| acc * n + p)
    }

    /// Hierarchy value `phi^stage_a(b)`.
    pub fn value(&self, stage: usize, a: &[PointId], b: &[PointId]) -> &Rat {
        assert_eq!(a.len(), b.len());
        let k = a.len();
        let count = self.structure.point_count().pow(k as u32);
        let id = self.stages[stage].matrices[k][self.rank(a) * count + self.rank(b)];
        self.pool.value(id)
    }

    /// Stabilized hierarchy value.
    pub fn stable_value(&self, a: &[PointId], b: &[PointId]) -> &Rat {
        self.value(self.stable_stage(), a, b)
    }

    /// The formula `phi^stage_a`, free in `x1..xk`.
    pub fn formula(&self, stage: usize, tuple: &[PointId]) -> Result<&FormulaRef, ScottError> {
        if tuple.len() > self.cap {
            return Err(ScottError::CapTooSmall {
                cap: self.cap,
                arity: tuple.len(),
            });
        }
        Ok(&self.stages[stage].formulas[tuple.len()][self.rank(tuple)])
    }

    /// Orbit-indicator formula `theta_a`: the zero test of the stabilized
    /// hierarchy formula. Parameter-free, `{0,1}`-valued on every
    /// structure; on the source structure its zeroset is the orbit of `a`.
    pub fn theta(&self, tuple: &[PointId]) -> Result<Formula, ScottError> {
        let phi = self.formula(self.stable_stage(), tuple)?;
        Ok(ind_named("n", (**phi).clone()))
    }
}

/// Convenience wrapper matching the operation vocabulary.
pub fn bf_tables(m: &FiniteStructure, cap: usize) -> Result<BackAndForthTables, ScottError> {
    BackAndForthTables::compute(m, cap)
}

/// See [`BackAndForthTables::theta`].
pub fn theta_formula(
    tables: &BackAndForthTables,
    tuple: &[PointId],
) -> Result<Formula, ScottError> {
    tables.theta(tuple)
}

/// The Scott sentence of a finite structure with a predicate/constant
/// signature, built from the stabilized hierarchy with arity cap equal to
/// the structure size.
pub fn scott_sentence(m: &FiniteStructure) -> Result<Formula, ScottError> {
    let tables = BackAndForthTables::compute(m, m.point_count())?;
    scott_sentence_from(&tables)
}

/// Scott sentence from precomputed tables (cap taken from the tables).
pub fn scott_sentence_from(tables: &BackAndForthTables) -> Result<Formula, ScottError> {
    let m = &tables.structure;
    let n = m.point_count();
    let cap = tables.cap;
    // Shared theta formulas per arity and rank. Index names are fixed;
    // hierarchy formulas contain no binders of their own.
    let thetas: Vec<Vec<FormulaRef>> = (0..=cap)
        .map(|k| {
            (0..n.pow(k as u32))
                .map(|ra| {
                    let phi = &tables.stages[tables.stable_stage()].formulas[k][ra];
                    Ok(Arc::new(ind_named("n", (**phi).clone())))
                })
                .collect::<Result<Vec<_>, ScottError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut clauses = Vec::new();
    for k in 0..cap {
        let y = tuple_var(k);
        for ra in 0..n.pow(k as u32) {
            // Extension move: every one-point extension of the reference
            // tuple is realized over tuples matching it.
            let extend = Formula::max_chain(
                (0..n)
                    .map(|b| {
                        let theta_ext = &thetas[k + 1][ra * n + b];
                        // Exact existential: not sup_y not theta.
                        let inner_neg = neg_named((**theta_ext).clone(), "q", "r");
                        neg_named(Formula::sup_var(&y, inner_neg), "s", "t")
                    })
                    .collect(),
            );
            // Covering move: every point extends the match to some
            // reference extension.
            let cover = Formula::SupVar(
                y.clone(),
                Arc::new(Formula::min_chain(
                    (0..n)
                        .map(|b| (*thetas[k + 1][ra * n + b]).clone())
                        .collect(),
                )),
            );
            let body = Formula::max(extend, cover);
            // Root realizability stands alone; higher arities are guarded
            // by their match premise, as an implication on {0,1} values:
            // min(1 - premise, body).
            let guarded = if k == 0 {
                body
            } else {
                let premise = (*thetas[k][ra]).clone();
                Formula::min(
                    Formula::sub(Formula::rat_const(Rat::one()), premise),
                    body,
                )
            };
            let clause = (0..k)
                .rev()
                .fold(guarded, |acc, pos| Formula::sup_var(&tuple_var(pos), acc));
            clauses.push(clause);
        }
    }
    Ok(Formula::max_chain(clauses))
}

fn eval_sentence(sentence: &Formula, on: &FiniteStructure) -> Result<Rat, ScottError> {
    let session = EvalSession::new(on, DEFAULT_BUDGET).map_err(|e| ScottError::Eval(e.to_string()))?;
    match session
        .evaluate(sentence, &BTreeMap::new())
        .map_err(|e| ScottError::Eval(e.to_string()))?
    {
        EvalResult::Exact(v) => Ok(v),
        EvalResult::Bounds { .. } => Err(ScottError::NonExact),
    }
}

/// Mutual Scott-sentence satisfaction. At this scale it coincides with the
/// brute-force isomorphism oracle (checked by the test suite).
pub fn check_elementary_equivalence(
    m: &FiniteStructure,
    n: &FiniteStructure,
) -> Result<bool, ScottError> {
    if m.signature() != n.signature() {
        return Err(ScottError::SignatureMismatch);
    }
    let sigma_m = scott_sentence(m)?;
    if !eval_sentence(&sigma_m, n)?.is_zero() {
        return Ok(false);
    }
    let sigma_n = scott_sentence(n)?;
    Ok(eval_sentence(&sigma_n, m)?.is_zero())
}

/// A definability request: a target predicate table on `structure` and the
/// grid resolution for the approximation.
#[derive(Debug, Clone)]
pub struct DefinabilityRequest<'a> {
    pub structure: &'a FiniteStructure,
    pub table: &'a BTreeMap<Vec<PointId>, Rat>,
    pub grid: u32,
}

fn tuple_names(m: &FiniteStructure, tuple: &[PointId]) -> String {
    tuple
        .iter()
        .map(|&p| m.point_name(p))
        .collect::<Vec<_>>()
        .join(",")
}

fn check_table(req: &DefinabilityRequest) -> Result<usize, DefinabilityError> {
    let m = req.structure;
    if req.grid == 0 {
        return Err(DefinabilityError::BadGrid);
    }
    let mut arity = None;
    for (tuple, value) in req.table.iter() {
        match arity {
            None => arity = Some(tuple.len()),
            Some(a) if a != tuple.len() => return Err(DefinabilityError::BadTable),
            _ => {}
        }
        if value.is_negative() || *value > Rat::one() {
            return Err(DefinabilityError::ValueOutOfRange {
                tuple: tuple_names(m, tuple),
                value: format_rat(value),
            });
        }
    }
    let arity = arity.filter(|&a| a > 0).ok_or(DefinabilityError::BadTable)?;
    for t in m.tuples(arity) {
        if !req.table.contains_key(&t) {
            return Err(DefinabilityError::MissingTuple {
                tuple: tuple_names(m, &t),
            });
        }
    }
    Ok(arity)
}

fn check_invariance(
    m: &FiniteStructure,
    table: &BTreeMap<Vec<PointId>, Rat>,
    arity: usize,
) -> Result<Vec<Automorphism>, DefinabilityError> {
    let autos = m.automorphisms();
    for a in &autos {
        for t in m.tuples(arity) {
            let image = a.apply_tuple(&t);
            if table[&t] != table[&image] {
                return Err(DefinabilityError::NotInvariant {
                    automorphism: a.clone(),
                    tuple: tuple_names(m, &t),
                    value: format_rat(&table[&t]),
                    image_value: format_rat(&table[&image]),
                });
            }
        }
    }
    Ok(autos)
}

/// Smallest cap at which the stabilized hierarchy's zero classes agree
/// with the automorphism orbits at the given arity.
fn tables_for_arity(
    m: &FiniteStructure,
    arity: usize,
    autos: &[Automorphism],
) -> Result<BackAndForthTables, ScottError> {
    let orbit_of: BTreeMap<Vec<PointId>, BTreeSet<Vec<PointId>>> = m
        .tuples(arity)
        .into_iter()
        .map(|t| {
            let orbit = autos.iter().map(|a| a.apply_tuple(&t)).collect();
            (t, orbit)
        })
        .collect();
    let max_cap = m.point_count().max(arity + 1);
    let mut tables = None;
    for cap in arity..=max_cap {
        let t = BackAndForthTables::compute(m, cap)?;
        let agrees = m.tuples(arity).into_iter().all(|a| {
            m.tuples(arity)
                .into_iter()
                .all(|b| t.stable_value(&a, &b).is_zero() == orbit_of[&a].contains(&b))
        });
        let done = agrees;
        tables = Some(t);
        if done {
            break;
        }
    }
    Ok(tables.expect("cap range is nonempty"))
}

/// Synthesizes a formula agreeing with an automorphism-invariant table up
/// to one grid step: `table <= formula <= table + 1/grid` pointwise. The
/// formula is free in `x1..xn` for a table of arity `n`.
pub fn define_invariant_predicate(req: &DefinabilityRequest) -> Result<Formula, DefinabilityError> {
    let m = req.structure;
    let arity = check_table(req)?;
    let autos = check_invariance(m, req.table, arity)?;
    let tables = tables_for_arity(m, arity, &autos)?;

    // Theta formulas re-based onto bound variables y1..yn.
    let ys: Vec<String> = (0..arity).map(|i| format!("y{}", i + 1)).collect();
    let tuples = m.tuples(arity);
    let theta_y: BTreeMap<Vec<PointId>, FormulaRef> = tuples
        .iter()
        .map(|t| {
            let mut theta = tables.theta(t)?;
            for (i, y) in ys.iter().enumerate() {
                theta = theta.substitute_term(&tuple_var(i), &Term::var(y));
            }
            Ok((t.clone(), Arc::new(theta)))
        })
        .collect::<Result<_, ScottError>>()?;

    let anchor = Formula::max_chain(
        (0..arity)
            .map(|i| Formula::Dist(Term::var(&tuple_var(i)), Term::var(&ys[i])))
            .collect(),
    );
    let anchor = Arc::new(anchor);

    // One inner formula per distinct sublevel set of the table.
    let mut sigma_cache: BTreeMap<Vec<Vec<PointId>>, FormulaRef> = BTreeMap::new();
    let mut sigma_for = |threshold: &Rat| -> FormulaRef {
        let members: Vec<Vec<PointId>> = tuples
            .iter()
            .filter(|t| req.table[*t] < *threshold)
            .cloned()
            .collect();
        if let Some(hit) = sigma_cache.get(&members) {
            return hit.clone();
        }
        let near_members = Formula::min_chain(
            members
                .iter()
                .map(|t| (*theta_y[t]).clone())
                .collect(),
        );
        let body = Formula::Max(anchor.clone(), Arc::new(near_members));
        let sigma = ys
            .iter()
            .rev()
            .fold(body, |acc, y| Formula::inf_var(y, acc));
        let arc = Arc::new(sigma);
        sigma_cache.insert(members, arc.clone());
        arc
    };

    let grid = req.grid as i64;
    let mut pieces = Vec::new();
    for k in 1..grid {
        let eps = rat(k, grid);
        let sigma = sigma_for(&eps);
        let test = ind_named("m", (*sigma).clone());
        pieces.push(Formula::max(Formula::rat_const(eps), test));
    }
    Ok(Formula::min_chain(pieces))
}

/// Parameterized variant: the table need only be invariant under
/// automorphisms fixing the parameter points, which are added as fresh
/// constants. Returns the defining formula together with the extended
/// structure it lives on.
pub fn define_with_parameters(
    m: &FiniteStructure,
    table: &BTreeMap<Vec<PointId>, Rat>,
    parameters: &[PointId],
    grid: u32,
) -> Result<(Formula, FiniteStructure), DefinabilityError> {
    let mut assignment = BTreeMap::new();
    let mut counter = 0usize;
    for &p in parameters {
        let name = loop {
            let candidate = format!("e{counter}");
            counter += 1;
            if !m.signature().has_symbol(&candidate) {
                break candidate;
            }
        };
        assignment.insert(name, m.point_name(p).to_string());
    }
    let extended = m
        .add_constants(&assignment)
        .map_err(|e| DefinabilityError::UnknownPoint(e.to_string()))?;
    let req = DefinabilityRequest {
        structure: &extended,
        table,
        grid,
    };
    let formula = define_invariant_predicate(&req)?;
    Ok((formula, extended))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Assignment;
    use crate::fixtures;
    use crate::rational::int;
    use crate::structure::brute_force_isomorphic;

    fn ids(m: &FiniteStructure, names: &[&str]) -> Vec<PointId> {
        names.iter().map(|n| m.point_id(n).unwrap()).collect()
    }

    #[test]
    fn sym_pair_is_indistinguishable() {
        let m = fixtures::sym();
        let t = BackAndForthTables::compute(&m, 2).unwrap();
        let a = ids(&m, &["a"]);
        let b = ids(&m, &["b"]);
        assert!(t.stable_value(&a, &b).is_zero());
        assert!(t.stable_value(&a, &a).is_zero());
    }

    #[test]
    fn tri_separates_at_stage_zero() {
        let m = fixtures::tri();
        let t = BackAndForthTables::compute(&m, 2).unwrap();
        let a = ids(&m, &["a"]);
        let b = ids(&m, &["b"]);
        assert!(t.stable_value(&a, &b).is_positive());
        assert_eq!(*t.value(0, &a, &b), rat(1, 2));
    }

    #[test]
    fn values_are_monotone_in_stage_and_reflexive() {
        for seed in 0..10u64 {
            let m = crate::corpus::random_scott_structure(seed);
            let t = BackAndForthTables::compute(&m, m.point_count().min(3)).unwrap();
            for k in 0..=t.cap() {
                for a in m.tuples(k) {
                    assert!(t.stable_value(&a, &a).is_zero());
                    for b in m.tuples(k) {
                        for s in 1..=t.stable_stage() {
                            assert!(t.value(s - 1, &a, &b) <= t.value(s, &a, &b));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn matrix_and_formula_routes_agree() {
        // The value matrices are a DP shortcut; the formulas are the
        // artifact. They must agree on the source structure.
        for seed in [0u64, 3, 7] {
            let m = crate::corpus::random_scott_structure(seed);
            let cap = m.point_count().min(3);
            let t = BackAndForthTables::compute(&m, cap).unwrap();
            let session = EvalSession::new(&m, DEFAULT_BUDGET).unwrap();
            for k in 1..=cap {
                for a in m.tuples(k) {
                    let phi = t.formula(t.stable_stage(), &a).unwrap();
                    for b in m.tuples(k) {
                        let env: Assignment = b
                            .iter()
                            .enumerate()
                            .map(|(i, &p)| (tuple_var(i), p))
                            .collect();
                        let got = session.evaluate(phi, &env).unwrap();
                        assert_eq!(
                            got,
                            EvalResult::Exact(t.stable_value(&a, &b).clone()),
                            "seed {seed} arity {k}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn theta_matches_orbits_on_fixtures() {
        let sym = fixtures::sym();
        let t = BackAndForthTables::compute(&sym, 2).unwrap();
        let theta_a = t.theta(&ids(&sym, &["a"])).unwrap();
        let env_b: Assignment = [("x1".to_string(), sym.point_id("b").unwrap())].into();
        assert_eq!(
            crate::eval::evaluate(&sym, &theta_a, &env_b, DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(0))
        );

        let tri = fixtures::tri();
        let t = BackAndForthTables::compute(&tri, 2).unwrap();
        let theta_a = t.theta(&ids(&tri, &["a"])).unwrap();
        let env_b: Assignment = [("x1".to_string(), tri.point_id("b").unwrap())].into();
        assert_eq!(
            crate::eval::evaluate(&tri, &theta_a, &env_b, DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(1))
        );
        let env_a: Assignment = [("x1".to_string(), tri.point_id("a").unwrap())].into();
        assert_eq!(
            crate::eval::evaluate(&tri, &theta_a, &env_a, DEFAULT_BUDGET).unwrap(),
            EvalResult::Exact(int(0))
        );
    }

    #[test]
    fn cap_is_enforced() {
        let m = fixtures::sym();
        let t = BackAndForthTables::compute(&m, 1).unwrap();
        assert!(matches!(
            t.theta(&ids(&m, &["a", "b"])),
            Err(ScottError::CapTooSmall { cap: 1, arity: 2 })
        ));
    }

    #[test]
    fn function_symbols_are_rejected() {
        let sig = crate::signature::Signature {
            functions: vec![crate::signature::FunctionSymbol {
                name: "f".into(),
                arity: 1,
                lipschitz: int(1),
            }],
            ..Default::default()
        };
        let mut m = FiniteStructure::new(sig, &["a", "b"]);
        m.set_distance("a", "b", rat(1, 2));
        m.set_function("f", &["a"], "a");
        m.set_function("f", &["b"], "b");
        assert!(matches!(
            BackAndForthTables::compute(&m, 1),
            Err(ScottError::FunctionSymbols)
        ));
    }

    #[test]
    fn scott_sentences_on_fixtures() {
        let sym = fixtures::sym();
        let sigma = scott_sentence(&sym).unwrap();
        assert!(eval_sentence(&sigma, &sym).unwrap().is_zero());

        let mut sym_prime = fixtures::sym();
        sym_prime.set_predicate("Q", &["a"], rat(2, 5));
        sym_prime.set_predicate("Q", &["b"], rat(2, 5));
        assert_eq!(eval_sentence(&sigma, &sym_prime).unwrap(), int(1));

        let m1 = fixtures::m1();
        let m2 = fixtures::m2();
        let sigma1 = scott_sentence(&m1).unwrap();
        assert!(eval_sentence(&sigma1, &m1).unwrap().is_zero());
        assert_eq!(eval_sentence(&sigma1, &m2).unwrap(), int(1));
    }

    #[test]
    fn equivalence_examples() {
        let tri = fixtures::tri();
        assert!(check_elementary_equivalence(&tri, &tri).unwrap());

        let sym = fixtures::sym();
        let renamed = crate::corpus::renamed_copy(&sym, "r");
        assert!(check_elementary_equivalence(&sym, &renamed).unwrap());
        assert!(brute_force_isomorphic(&sym, &renamed));

        assert!(!check_elementary_equivalence(&fixtures::m1(), &fixtures::m2()).unwrap());
        assert!(matches!(
            check_elementary_equivalence(&fixtures::m1(), &fixtures::tri()),
            Err(ScottError::SignatureMismatch)
        ));
    }

    #[test]
    fn definability_on_sym() {
        let sym = fixtures::sym();
        let table: BTreeMap<Vec<PointId>, Rat> =
            sym.tuples(1).into_iter().map(|t| (t, rat(3, 10))).collect();
        let req = DefinabilityRequest {
            structure: &sym,
            table: &table,
            grid: 10,
        };
        let phi = define_invariant_predicate(&req).unwrap();
        let session = EvalSession::new(&sym, DEFAULT_BUDGET).unwrap();
        for t in sym.tuples(1) {
            let env: Assignment = [("x1".to_string(), t[0])].into();
            let got = session.evaluate(&phi, &env).unwrap();
            let v = got.exact().expect("exact").clone();
            assert!(rat(3, 10) <= v && v <= rat(3, 10) + rat(1, 10), "value {v}");
        }
    }

    #[test]
    fn definability_on_tri_indicator() {
        // Indicator-style table on a rigid structure, coarse grid.
        let tri = fixtures::tri();
        let a = tri.point_id("a").unwrap();
        let table: BTreeMap<Vec<PointId>, Rat> = tri
            .tuples(1)
            .into_iter()
            .map(|t| {
                let v = if t[0] == a { int(0) } else { int(1) };
                (t, v)
            })
            .collect();
        let req = DefinabilityRequest {
            structure: &tri,
            table: &table,
            grid: 4,
        };
        let phi = define_invariant_predicate(&req).unwrap();
        let session = EvalSession::new(&tri, DEFAULT_BUDGET).unwrap();
        for t in tri.tuples(1) {
            let env: Assignment = [("x1".to_string(), t[0])].into();
            let v = session.evaluate(&phi, &env).unwrap().exact().unwrap().clone();
            let p = &table[&t];
            assert!(p <= &v && v <= p + rat(1, 4), "point {} value {v}", t[0]);
        }
    }

    #[test]
    fn pinning_every_point_accepts_any_table() {
        let sym = fixtures::sym();
        let a = sym.point_id("a").unwrap();
        let table: BTreeMap<Vec<PointId>, Rat> = sym
            .tuples(1)
            .into_iter()
            .map(|t| {
                let v = if t[0] == a { rat(1, 3) } else { rat(5, 6) };
                (t, v)
            })
            .collect();
        let all: Vec<PointId> = (0..sym.point_count()).collect();
        let (phi, extended) = define_with_parameters(&sym, &table, &all, 12).unwrap();
        let session = EvalSession::new(&extended, DEFAULT_BUDGET).unwrap();
        for t in extended.tuples(1) {
            let env: Assignment = [("x1".to_string(), t[0])].into();
            let v = session.evaluate(&phi, &env).unwrap().exact().unwrap().clone();
            let p = &table[&t];
            assert!(p <= &v && v <= p + rat(1, 12));
        }
    }

    #[test]
    fn non_invariant_table_reports_a_witness() {
        let sym = fixtures::sym();
        let a = sym.point_id("a").unwrap();
        let table: BTreeMap<Vec<PointId>, Rat> = sym
            .tuples(1)
            .into_iter()
            .map(|t| {
                let v = if t[0] == a { int(0) } else { int(1) };
                (t, v)
            })
            .collect();
        let req = DefinabilityRequest {
            structure: &sym,
            table: &table,
            grid: 10,
        };
        match define_invariant_predicate(&req) {
            Err(DefinabilityError::NotInvariant { automorphism, .. }) => {
                // The witness must actually be an automorphism that moves
                // the table.
                assert!(sym.automorphisms().contains(&automorphism));
                assert!(!automorphism.is_identity());
            }
            other => panic!("expected invariance failure, got {other:?}"),
        }
    }

    #[test]
    fn parameters_fix_the_asymmetry() {
        let sym = fixtures::sym();
        let a = sym.point_id("a").unwrap();
        let table: BTreeMap<Vec<PointId>, Rat> = sym
            .tuples(1)
            .into_iter()
            .map(|t| {
                let v = if t[0] == a { int(0) } else { int(1) };
                (t, v)
            })
            .collect();
        let (phi, extended) = define_with_parameters(&sym, &table, &[a], 10).unwrap();
        let session = EvalSession::new(&extended, DEFAULT_BUDGET).unwrap();
        for t in extended.tuples(1) {
            let env: Assignment = [("x1".to_string(), t[0])].into();
            let v = session.evaluate(&phi, &env).unwrap().exact().unwrap().clone();
            let p = &table[&t];
            assert!(p <= &v && v <= p + rat(1, 10), "point {} value {v}", t[0]);
        }
        // Empty parameter set reduces to the plain synthesis.
        let flat: BTreeMap<Vec<PointId>, Rat> =
            sym.tuples(1).into_iter().map(|t| (t, rat(1, 2))).collect();
        let (phi0, ext0) = define_with_parameters(&sym, &flat, &[], 4).unwrap();
        assert_eq!(ext0, sym);
        let req = DefinabilityRequest {
            structure: &sym,
            table: &flat,
            grid: 4,
        };
        assert_eq!(phi0, define_invariant_predicate(&req).unwrap());
    }
}
