//! Seeded random structures and formulas for desk-scale testing.
//!
//! Structures are valid by construction: distances are drawn from a band
//! `[1/2, 1]` (so the triangle inequality is automatic) on a base
//! denominator of at most 12, and predicate tables either fit inside a
//! window compatible with the declared Lipschitz constant or use a declared
//! constant of 2, which makes any `[0,1]` table legal. A slice of the
//! structures is deliberately symmetric (constant tables, equal distances)
//! so that orbit and definability tests see nontrivial automorphism groups.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::eval::Assignment;
use crate::formula::{Formula, IndexRange, MetaExpr, Term};
use crate::rational::{int, rat, Rat};
use crate::signature::{PredicateSymbol, Signature};
use crate::structure::FiniteStructure;

const VAR_POOL: [&str; 3] = ["x", "y", "z"];

fn band_value(rng: &mut StdRng, denom: i64) -> Rat {
    // Numerators in [ceil(d/2), d]: values in [1/2, 1].
    let lo = (denom + 1) / 2;
    rat(rng.random_range(lo..=denom), denom)
}

/// A random valid structure: 2-5 points, 1-2 unary/binary predicates,
/// 0-2 constants, no functions, distances with denominators at most 12.
pub fn random_structure(seed: u64) -> FiniteStructure {
    random_structure_sized(seed, 2, 5)
}

/// Random structure restricted to predicate/constant signatures and at most
/// 4 points; suitable for back-and-forth computations.
pub fn random_scott_structure(seed: u64) -> FiniteStructure {
    random_structure_sized(seed, 2, 4)
}

/// Random valid structure with a chosen point-count range. Deterministic in
/// the seed.
pub fn random_structure_sized(seed: u64, min_points: usize, max_points: usize) -> FiniteStructure {
    let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    let n = rng.random_range(min_points..=max_points);
    let names: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
    let denom = *[2i64, 3, 4, 6, 8, 12]
        .get(rng.random_range(0..6))
        .unwrap();

    let n_preds = rng.random_range(1..=2usize);
    let mut predicates = Vec::new();
    for i in 0..n_preds {
        let arity = rng.random_range(1..=2usize);
        // Lipschitz 2 leaves tables unconstrained on the [1/2,1] band.
        let lipschitz = if rng.random_bool(0.5) { int(1) } else { int(2) };
        predicates.push(PredicateSymbol {
            name: if i == 0 { "P".into() } else { "Q".into() },
            arity,
            lipschitz,
        });
    }
    let n_consts = rng.random_range(0..=2usize);
    let constants: Vec<String> = (0..n_consts).map(|i| format!("c{i}")).collect();

    let sig = Signature {
        predicates: predicates.clone(),
        functions: vec![],
        constants: constants.clone(),
    };
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut m = FiniteStructure::new(sig, &name_refs);

    // Metric: uniform distance (symmetric) or independent band values.
    if rng.random_bool(0.4) {
        let d = band_value(&mut rng, denom);
        for i in 0..n {
            for j in (i + 1)..n {
                m.set_distance(&names[i], &names[j], d.clone());
            }
        }
    } else {
        for i in 0..n {
            for j in (i + 1)..n {
                m.set_distance(&names[i], &names[j], band_value(&mut rng, denom));
            }
        }
    }

    for p in &predicates {
        let style = rng.random_range(0..3u8);
        // Window base keeps Lipschitz-1 tables inside a width-1/2 band.
        let base_num = rng.random_range(0..=denom / 2).max(0);
        let constant_value = rat(rng.random_range(0..=denom), denom);
        for tuple in m.tuples(p.arity) {
            let value = match style {
                // Constant table: maximal symmetry.
                0 => constant_value.clone(),
                // Small pool inside the window: partial symmetry.
                1 => {
                    let step = rng.random_range(0..=1i64);
                    rat(base_num + step * (denom / 4).max(1), denom * 2)
                        + rat(base_num, denom * 2)
                }
                // Free values; window for Lipschitz 1, anything for 2.
                _ => {
                    if p.lipschitz == int(1) {
                        rat(base_num + rng.random_range(0..=denom / 2), denom)
                    } else {
                        rat(rng.random_range(0..=denom), denom)
                    }
                }
            };
            let tuple_names: Vec<&str> = tuple.iter().map(|&q| name_refs[q]).collect();
            m.set_predicate(&p.name, &tuple_names, value);
        }
    }
    for c in &constants {
        let p = rng.random_range(0..n);
        m.set_constant(c, &names[p]);
    }
    debug_assert_eq!(m.validate(), Vec::new(), "generator produced an invalid structure");
    m
}

/// A copy of `m` with every point renamed; isomorphic to `m` by
/// construction.
pub fn renamed_copy(m: &FiniteStructure, prefix: &str) -> FiniteStructure {
    let names: Vec<String> = (0..m.point_count()).map(|i| format!("{prefix}{i}")).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut out = FiniteStructure::new(m.signature().clone(), &name_refs);
    for x in 0..m.point_count() {
        for y in (x + 1)..m.point_count() {
            out.set_distance(&names[x], &names[y], m.distance(x, y).clone());
        }
    }
    for (pred, table) in m.predicate_tables() {
        for (tuple, v) in table {
            let t: Vec<&str> = tuple.iter().map(|&p| name_refs[p]).collect();
            out.set_predicate(pred, &t, v.clone());
        }
    }
    for (func, table) in m.function_tables() {
        for (tuple, &o) in table {
            let t: Vec<&str> = tuple.iter().map(|&p| name_refs[p]).collect();
            out.set_function(func, &t, &names[o]);
        }
    }
    for (c, &p) in m.constant_assignments() {
        out.set_constant(c, &names[p]);
    }
    out
}

/// Tries to produce a valid near-copy differing in exactly one predicate
/// table entry. Returns `None` when no single-entry nudge stays valid.
pub fn perturbed_copy(m: &FiniteStructure, seed: u64) -> Option<FiniteStructure> {
    let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(0xd1342543de82ef95).wrapping_add(7));
    let preds: Vec<_> = m.signature().predicates.clone();
    if preds.is_empty() {
        return None;
    }
    for _ in 0..32 {
        let p = &preds[rng.random_range(0..preds.len())];
        let tuples = m.tuples(p.arity);
        let tuple = &tuples[rng.random_range(0..tuples.len())];
        let old = m.predicate_value(&p.name, tuple)?.clone();
        let delta = rat(1, 12) * int(if rng.random_bool(0.5) { 1 } else { -1 });
        let new = &old + &delta;
        if new < int(0) || new > int(1) || new == old {
            continue;
        }
        let mut out = m.clone();
        let names: Vec<&str> = tuple.iter().map(|&q| m.point_name(q)).collect();
        out.set_predicate(&p.name, &names, new);
        if out.validate().is_empty() {
            return Some(out);
        }
    }
    None
}

/// Options for the random formula generator.
#[derive(Debug, Clone)]
pub struct FormulaOpts {
    pub max_depth: usize,
    pub allow_rho: bool,
    pub allow_infinite: bool,
    /// Restrict infinite families to the recognized-exact shapes.
    pub exact_only: bool,
}

impl Default for FormulaOpts {
    fn default() -> Self {
        FormulaOpts {
            max_depth: 5,
            allow_rho: true,
            allow_infinite: true,
            exact_only: true,
        }
    }
}

struct FormulaGen<'a> {
    sig: &'a Signature,
    rng: StdRng,
    opts: FormulaOpts,
    counter: usize,
}

impl<'a> FormulaGen<'a> {
    fn term(&mut self) -> Term {
        if !self.sig.constants.is_empty() && self.rng.random_bool(0.25) {
            let c = &self.sig.constants[self.rng.random_range(0..self.sig.constants.len())];
            Term::Const(c.clone())
        } else {
            Term::var(VAR_POOL[self.rng.random_range(0..VAR_POOL.len())])
        }
    }

    fn term_over(&mut self, vars: &[String]) -> Term {
        Term::Var(vars[self.rng.random_range(0..vars.len())].clone())
    }

    fn small_unit_rat(&mut self) -> Rat {
        let denom = *[1i64, 2, 3, 4, 6].get(self.rng.random_range(0..5)).unwrap();
        rat(self.rng.random_range(0..=denom), denom)
    }

    fn leaf(&mut self) -> Formula {
        match self.rng.random_range(0..4u8) {
            0 => Formula::Dist(self.term(), self.term()),
            1 | 2 => self.pred_leaf(None),
            _ => Formula::rat_const(self.small_unit_rat()),
        }
    }

    fn pred_leaf(&mut self, vars: Option<&[String]>) -> Formula {
        if self.sig.predicates.is_empty() {
            return match vars {
                Some(vs) if vs.len() >= 2 => {
                    Formula::Dist(Term::Var(vs[0].clone()), Term::Var(vs[1].clone()))
                }
                Some(vs) => Formula::Dist(Term::Var(vs[0].clone()), Term::Var(vs[0].clone())),
                None => Formula::Dist(self.term(), self.term()),
            };
        }
        let p = &self.sig.predicates[self.rng.random_range(0..self.sig.predicates.len())];
        let args = (0..p.arity)
            .map(|_| match vars {
                Some(vs) => self.term_over(vs),
                None => self.term(),
            })
            .collect();
        Formula::Pred(p.name.clone(), args)
    }

    fn fresh_index(&mut self) -> String {
        self.counter += 1;
        format!("n{}", self.counter)
    }

    /// A formula with no free index references, for zero-test bodies.
    fn index_free(&mut self, depth: usize) -> Formula {
        // Index binders introduced below are closed, so ordinary generation
        // suffices.
        self.formula(depth)
    }

    fn formula(&mut self, depth: usize) -> Formula {
        if depth == 0 {
            return self.leaf();
        }
        match self.rng.random_range(0..12u8) {
            0 | 1 => self.leaf(),
            2 => Formula::sub(self.formula(depth - 1), self.formula(depth - 1)),
            3 => Formula::add(self.formula(depth - 1), self.formula(depth - 1)),
            4 => Formula::min(self.formula(depth - 1), self.formula(depth - 1)),
            5 => Formula::max(self.formula(depth - 1), self.formula(depth - 1)),
            6 => {
                let c = rat(self.rng.random_range(0..=6), 2);
                Formula::scale_rat(c, self.formula(depth - 1))
            }
            7 => {
                let v = VAR_POOL[self.rng.random_range(0..VAR_POOL.len())];
                if self.rng.random_bool(0.5) {
                    Formula::sup_var(v, self.formula(depth - 1))
                } else {
                    Formula::inf_var(v, self.formula(depth - 1))
                }
            }
            8 => {
                // Finite index family with genuine index dependence.
                let i = self.fresh_index();
                let k = self.rng.random_range(2..=3u64);
                let body = match self.rng.random_range(0..3u8) {
                    0 => Formula::scale(
                        MetaExpr::linear(&i),
                        self.formula(depth.saturating_sub(2)),
                    ),
                    1 => Formula::max(
                        Formula::recip(MetaExpr::affine(int(1), &i, int(1))),
                        self.formula(depth.saturating_sub(2)),
                    ),
                    _ => self.formula(depth - 1),
                };
                if self.rng.random_bool(0.5) {
                    Formula::sup_idx(&i, IndexRange::UpTo(k), body)
                } else {
                    Formula::inf_idx(&i, IndexRange::UpTo(k), body)
                }
            }
            9 if self.opts.allow_infinite => {
                let inner = self.index_free(depth.saturating_sub(2));
                match self.rng.random_range(0..if self.opts.exact_only { 2 } else { 3 }) {
                    0 => Formula::ind(inner),
                    1 => crate::transform::exact_negation(&inner),
                    _ => {
                        let i = self.fresh_index();
                        Formula::inf_idx(
                            &i,
                            IndexRange::Naturals,
                            Formula::max(Formula::recip(MetaExpr::linear(&i)), inner),
                        )
                    }
                }
            }
            10 if self.opts.allow_rho && depth >= 2 => self.rho(depth),
            _ => self.formula(depth - 1),
        }
    }

    fn rho(&mut self, depth: usize) -> Formula {
        let arity = self.rng.random_range(1..=2usize);
        let slots: Vec<Term> = (0..arity).map(|_| self.term()).collect();
        let bound: Vec<String> = (0..arity).map(|i| format!("u{i}")).collect();
        let body = self.rho_body(&bound, depth - 1);
        Formula::Rho {
            slots,
            bound,
            body: body.into(),
        }
    }

    /// Body over exactly the bound variables, Rho-free and index-closed.
    fn rho_body(&mut self, vars: &[String], depth: usize) -> Formula {
        if depth == 0 || self.rng.random_bool(0.4) {
            return self.pred_leaf(Some(vars));
        }
        match self.rng.random_range(0..4u8) {
            0 => Formula::min(
                self.rho_body(vars, depth - 1),
                self.rho_body(vars, depth - 1),
            ),
            1 => Formula::max(
                self.rho_body(vars, depth - 1),
                self.rho_body(vars, depth - 1),
            ),
            2 => Formula::sub(
                self.rho_body(vars, depth - 1),
                Formula::rat_const(self.small_unit_rat()),
            ),
            _ => self.pred_leaf(Some(vars)),
        }
    }
}

/// A random well-formed formula over `sig` of depth at most
/// `opts.max_depth`.
pub fn random_formula(sig: &Signature, seed: u64, opts: &FormulaOpts) -> Formula {
    let mut gen = FormulaGen {
        sig,
        rng: StdRng::seed_from_u64(seed.wrapping_mul(0xa24baed4963ee407).wrapping_add(3)),
        opts: opts.clone(),
        counter: 0,
    };
    let f = gen.formula(opts.max_depth.min(5));
    debug_assert_eq!(f.well_formed(sig), Vec::new(), "generator produced an ill-formed formula");
    f
}

/// A bare zeroset-distance formula over `sig` (one `Rho` node at the root).
pub fn random_rho_formula(sig: &Signature, seed: u64) -> Formula {
    let mut gen = FormulaGen {
        sig,
        rng: StdRng::seed_from_u64(seed.wrapping_mul(0xf1357aea2e62a9c5).wrapping_add(11)),
        opts: FormulaOpts::default(),
        counter: 0,
    };
    gen.rho(3)
}

/// Assigns a deterministic random point to every free variable of `f`.
pub fn random_assignment(m: &FiniteStructure, f: &Formula, seed: u64) -> Assignment {
    let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(5));
    f.free_variables()
        .into_iter()
        .map(|v| (v, rng.random_range(0..m.point_count())))
        .collect()
}

/// Orbit-averaged table of the given arity: the average of a random table
/// over each orbit, hence automorphism-invariant by construction.
pub fn random_invariant_table(
    m: &FiniteStructure,
    arity: usize,
    seed: u64,
) -> BTreeMap<Vec<usize>, Rat> {
    let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(0x9fb21c651e98df25).wrapping_add(13));
    let raw: BTreeMap<Vec<usize>, Rat> = m
        .tuples(arity)
        .into_iter()
        .map(|t| (t, rat(rng.random_range(0..=12), 12)))
        .collect();
    m.tuples(arity)
        .into_iter()
        .map(|t| {
            let orbit = m.orbit(&t);
            let sum: Rat = orbit.iter().map(|u| raw[u].clone()).sum();
            let avg = sum / int(orbit.len() as i64);
            (t, avg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structures_are_valid_and_deterministic() {
        for seed in 0..120u64 {
            let m = random_structure(seed);
            assert_eq!(m.validate(), Vec::new(), "seed {seed}");
            assert_eq!(m, random_structure(seed));
            assert!((2..=5).contains(&m.point_count()));
        }
    }

    #[test]
    fn some_structures_have_nontrivial_symmetry() {
        let mut nontrivial = 0;
        for seed in 0..60u64 {
            if random_scott_structure(seed).automorphisms().len() > 1 {
                nontrivial += 1;
            }
        }
        assert!(nontrivial >= 5, "only {nontrivial} symmetric structures");
    }

    #[test]
    fn formulas_are_well_formed() {
        for seed in 0..200u64 {
            let m = random_structure(seed);
            let f = random_formula(m.signature(), seed, &FormulaOpts::default());
            assert_eq!(f.well_formed(m.signature()), Vec::new(), "seed {seed}");
        }
    }

    #[test]
    fn renamed_copies_are_isomorphic() {
        for seed in 0..20u64 {
            let m = random_scott_structure(seed);
            let r = renamed_copy(&m, "r");
            assert_eq!(r.validate(), Vec::new());
            assert!(crate::structure::brute_force_isomorphic(&m, &r), "seed {seed}");
        }
    }

    #[test]
    fn perturbed_copies_differ() {
        let mut produced = 0;
        for seed in 0..20u64 {
            let m = random_scott_structure(seed);
            if let Some(p) = perturbed_copy(&m, seed) {
                produced += 1;
                assert_eq!(p.validate(), Vec::new());
                assert_ne!(p, m);
            }
        }
        assert!(produced >= 8, "only {produced} perturbations succeeded");
    }

    #[test]
    fn invariant_tables_are_invariant() {
        for seed in 0..15u64 {
            let m = random_scott_structure(seed);
            let table = random_invariant_table(&m, 1, seed);
            for a in m.automorphisms() {
                for (t, v) in &table {
                    assert_eq!(&table[&a.apply_tuple(t)], v, "seed {seed}");
                }
            }
        }
    }
}
