//! Finite metric structures and the brute-force oracles built on them:
//! automorphism enumeration, tuple orbits, and isomorphism testing.
//!
//! Structures are immutable once built (the mutating methods exist for
//! construction and test setup); every operation here is pure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use itertools::Itertools;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::par;
use crate::rational::{format_rat, Rat};
use crate::signature::{Signature, SignatureViolation};

/// Index of a point in a [`FiniteStructure`].
pub type PointId = usize;

/// A finite metric structure over a [`Signature`]: named points, an exact
/// rational distance table, and total interpretation tables for every
/// predicate, function, and constant symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteStructure {
    sig: Signature,
    points: Vec<String>,
    /// Full distance matrix, `dist[x][y]`.
    dist: Vec<Vec<Rat>>,
    predicates: BTreeMap<String, BTreeMap<Vec<PointId>, Rat>>,
    functions: BTreeMap<String, BTreeMap<Vec<PointId>, PointId>>,
    constants: BTreeMap<String, PointId>,
}

/// A structure-preserving bijection of points.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Automorphism {
    perm: Vec<PointId>,
}

impl Automorphism {
    pub fn identity(n: usize) -> Self {
        Automorphism {
            perm: (0..n).collect(),
        }
    }

    pub fn from_permutation(perm: Vec<PointId>) -> Self {
        Automorphism { perm }
    }

    pub fn apply(&self, p: PointId) -> PointId {
        self.perm[p]
    }

    pub fn apply_tuple(&self, tuple: &[PointId]) -> Vec<PointId> {
        tuple.iter().map(|&p| self.perm[p]).collect()
    }

    /// `self.compose(g)` maps `x` to `self(g(x))`.
    pub fn compose(&self, g: &Automorphism) -> Automorphism {
        Automorphism {
            perm: g.perm.iter().map(|&p| self.perm[p]).collect(),
        }
    }

    pub fn inverse(&self) -> Automorphism {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Automorphism { perm: inv }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn as_slice(&self) -> &[PointId] {
        &self.perm
    }
}

/// A violated structure invariant, with the witnessing points. Violations
/// are data, not errors: [`FiniteStructure::validate`] returns all of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StructureViolation {
    Signature(SignatureViolation),
    NoPoints,
    DuplicatePointName(String),
    NonzeroSelfDistance { point: String },
    AsymmetricDistance { x: String, y: String },
    DistanceOutOfRange { x: String, y: String, value: Rat },
    CoincidentPoints { x: String, y: String },
    TriangleViolation { x: String, y: String, z: String },
    MissingPredicateEntry { predicate: String, tuple: Vec<String> },
    PredicateValueOutOfRange { predicate: String, tuple: Vec<String>, value: Rat },
    PredicateLipschitz { predicate: String, tuple_a: Vec<String>, tuple_b: Vec<String> },
    MissingFunctionEntry { function: String, tuple: Vec<String> },
    FunctionLipschitz { function: String, tuple_a: Vec<String>, tuple_b: Vec<String> },
    MissingConstant { constant: String },
    UnknownTableSymbol { name: String },
    TableArityMismatch { symbol: String, tuple: Vec<String> },
}

impl fmt::Display for StructureViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use StructureViolation::*;
        match self {
            Signature(v) => write!(f, "signature: {v}"),
            NoPoints => write!(f, "structure has no points"),
            DuplicatePointName(p) => write!(f, "duplicate point name `{p}`"),
            NonzeroSelfDistance { point } => write!(f, "d({point},{point}) is nonzero"),
            AsymmetricDistance { x, y } => write!(f, "d({x},{y}) differs from d({y},{x})"),
            DistanceOutOfRange { x, y, value } => {
                write!(f, "d({x},{y}) = {} is outside [0,1]", format_rat(value))
            }
            CoincidentPoints { x, y } => write!(f, "d({x},{y}) = 0 but {x} and {y} are distinct"),
            TriangleViolation { x, y, z } => {
                write!(f, "triangle inequality fails: d({x},{z}) > d({x},{y}) + d({y},{z})")
            }
            MissingPredicateEntry { predicate, tuple } => {
                write!(f, "predicate `{predicate}` has no value at ({})", tuple.join(","))
            }
            PredicateValueOutOfRange { predicate, tuple, value } => write!(
                f,
                "predicate `{predicate}` value {} at ({}) is outside [0,1]",
                format_rat(value),
                tuple.join(",")
            ),
            PredicateLipschitz { predicate, tuple_a, tuple_b } => write!(
                f,
                "predicate `{predicate}` violates its Lipschitz bound between ({}) and ({})",
                tuple_a.join(","),
                tuple_b.join(",")
            ),
            MissingFunctionEntry { function, tuple } => {
                write!(f, "function `{function}` has no value at ({})", tuple.join(","))
            }
            FunctionLipschitz { function, tuple_a, tuple_b } => write!(
                f,
                "function `{function}` violates its Lipschitz bound between ({}) and ({})",
                tuple_a.join(","),
                tuple_b.join(",")
            ),
            MissingConstant { constant } => write!(f, "constant `{constant}` is unassigned"),
            UnknownTableSymbol { name } => {
                write!(f, "table given for `{name}` which is not in the signature")
            }
            TableArityMismatch { symbol, tuple } => {
                write!(f, "tuple ({}) has the wrong arity for `{symbol}`", tuple.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstantError {
    #[error("constant name `{0}` collides with an existing symbol")]
    NameCollision(String),
    #[error("unknown point `{0}`")]
    UnknownPoint(String),
}

impl FiniteStructure {
    /// A structure over `sig` with the given points, all distances zero and
    /// all tables empty. Callers fill it in with the `set_*` methods.
    pub fn new(sig: Signature, point_names: &[&str]) -> Self {
        let n = point_names.len();
        FiniteStructure {
            sig,
            points: point_names.iter().map(|s| s.to_string()).collect(),
            dist: vec![vec![Rat::zero(); n]; n],
            predicates: BTreeMap::new(),
            functions: BTreeMap::new(),
            constants: BTreeMap::new(),
        }
    }

    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn point_names(&self) -> &[String] {
        &self.points
    }

    pub fn point_id(&self, name: &str) -> Option<PointId> {
        self.points.iter().position(|p| p == name)
    }

    pub fn point_name(&self, id: PointId) -> &str {
        &self.points[id]
    }

    /// Sets both oriented entries for the pair.
    pub fn set_distance(&mut self, a: &str, b: &str, d: Rat) {
        let (x, y) = (self.require(a), self.require(b));
        self.dist[x][y] = d.clone();
        self.dist[y][x] = d;
    }

    /// Sets a single oriented entry. Used by the file loader so that
    /// asymmetric inputs surface as validation violations.
    pub(crate) fn set_distance_oriented(&mut self, x: PointId, y: PointId, d: Rat) {
        self.dist[x][y] = d;
    }

    pub fn set_predicate(&mut self, predicate: &str, tuple: &[&str], value: Rat) {
        let t: Vec<PointId> = tuple.iter().map(|p| self.require(p)).collect();
        self.predicates
            .entry(predicate.to_string())
            .or_default()
            .insert(t, value);
    }

    pub fn set_function(&mut self, function: &str, tuple: &[&str], output: &str) {
        let t: Vec<PointId> = tuple.iter().map(|p| self.require(p)).collect();
        let out = self.require(output);
        self.functions
            .entry(function.to_string())
            .or_default()
            .insert(t, out);
    }

    pub fn set_constant(&mut self, constant: &str, point: &str) {
        let p = self.require(point);
        self.constants.insert(constant.to_string(), p);
    }

    pub(crate) fn insert_predicate_raw(&mut self, predicate: String, tuple: Vec<PointId>, value: Rat) {
        self.predicates.entry(predicate).or_default().insert(tuple, value);
    }

    pub(crate) fn insert_function_raw(&mut self, function: String, tuple: Vec<PointId>, out: PointId) {
        self.functions.entry(function).or_default().insert(tuple, out);
    }

    pub(crate) fn insert_constant_raw(&mut self, constant: String, point: PointId) {
        self.constants.insert(constant, point);
    }

    fn require(&self, name: &str) -> PointId {
        self.point_id(name)
            .unwrap_or_else(|| panic!("unknown point `{name}`"))
    }

    pub fn distance(&self, x: PointId, y: PointId) -> &Rat {
        &self.dist[x][y]
    }

    /// Sup-metric distance between same-length tuples.
    pub fn tuple_distance(&self, a: &[PointId], b: &[PointId]) -> Rat {
        debug_assert_eq!(a.len(), b.len());
        let mut best = Rat::zero();
        for (&x, &y) in a.iter().zip(b) {
            let d = &self.dist[x][y];
            if *d > best {
                best = d.clone();
            }
        }
        best
    }

    pub fn predicate_value(&self, predicate: &str, tuple: &[PointId]) -> Option<&Rat> {
        self.predicates.get(predicate)?.get(tuple)
    }

    pub fn function_value(&self, function: &str, tuple: &[PointId]) -> Option<PointId> {
        self.functions.get(function)?.get(tuple).copied()
    }

    pub fn constant_point(&self, constant: &str) -> Option<PointId> {
        self.constants.get(constant).copied()
    }

    pub(crate) fn predicate_tables(&self) -> &BTreeMap<String, BTreeMap<Vec<PointId>, Rat>> {
        &self.predicates
    }

    pub(crate) fn function_tables(&self) -> &BTreeMap<String, BTreeMap<Vec<PointId>, PointId>> {
        &self.functions
    }

    pub(crate) fn constant_assignments(&self) -> &BTreeMap<String, PointId> {
        &self.constants
    }

    /// All tuples of the given arity over the point set, in rank order
    /// (first coordinate most significant).
    pub fn tuples(&self, arity: usize) -> Vec<Vec<PointId>> {
        let n = self.point_count();
        let mut out = Vec::with_capacity(n.pow(arity as u32));
        let mut cur = vec![0; arity];
        loop {
            out.push(cur.clone());
            let mut i = arity;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                cur[i] += 1;
                if cur[i] < n {
                    break;
                }
                cur[i] = 0;
            }
        }
    }

    fn names(&self, tuple: &[PointId]) -> Vec<String> {
        tuple.iter().map(|&p| self.points[p].clone()).collect()
    }

    /// Checks every structure invariant and returns all violations with
    /// their witnesses. Idempotent and deterministic; an empty result means
    /// the structure is valid.
    pub fn validate(&self) -> Vec<StructureViolation> {
        let mut out: Vec<StructureViolation> = self
            .sig
            .validate()
            .into_iter()
            .map(StructureViolation::Signature)
            .collect();
        let n = self.point_count();
        if n == 0 {
            out.push(StructureViolation::NoPoints);
            return out;
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for p in &self.points {
            if !seen.insert(p) {
                out.push(StructureViolation::DuplicatePointName(p.clone()));
            }
        }

        for x in 0..n {
            if !self.dist[x][x].is_zero() {
                out.push(StructureViolation::NonzeroSelfDistance {
                    point: self.points[x].clone(),
                });
            }
            for y in 0..n {
                if x < y && self.dist[x][y] != self.dist[y][x] {
                    out.push(StructureViolation::AsymmetricDistance {
                        x: self.points[x].clone(),
                        y: self.points[y].clone(),
                    });
                }
                if x != y {
                    let d = &self.dist[x][y];
                    if d.is_negative() || *d > Rat::one() {
                        out.push(StructureViolation::DistanceOutOfRange {
                            x: self.points[x].clone(),
                            y: self.points[y].clone(),
                            value: d.clone(),
                        });
                    }
                    if x < y && d.is_zero() {
                        out.push(StructureViolation::CoincidentPoints {
                            x: self.points[x].clone(),
                            y: self.points[y].clone(),
                        });
                    }
                }
            }
        }
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    if x != y && y != z && x != z {
                        let sum = &self.dist[x][y] + &self.dist[y][z];
                        if self.dist[x][z] > sum {
                            out.push(StructureViolation::TriangleViolation {
                                x: self.points[x].clone(),
                                y: self.points[y].clone(),
                                z: self.points[z].clone(),
                            });
                        }
                    }
                }
            }
        }

        for name in self.predicates.keys() {
            if self.sig.predicate(name).is_none() {
                out.push(StructureViolation::UnknownTableSymbol { name: name.clone() });
            }
        }
        for name in self.functions.keys() {
            if self.sig.function(name).is_none() {
                out.push(StructureViolation::UnknownTableSymbol { name: name.clone() });
            }
        }
        for name in self.constants.keys() {
            if !self.sig.has_constant(name) {
                out.push(StructureViolation::UnknownTableSymbol { name: name.clone() });
            }
        }

        for p in &self.sig.predicates {
            let table = self.predicates.get(&p.name);
            let tuples = self.tuples(p.arity);
            for t in &tuples {
                match table.and_then(|tb| tb.get(t)) {
                    None => out.push(StructureViolation::MissingPredicateEntry {
                        predicate: p.name.clone(),
                        tuple: self.names(t),
                    }),
                    Some(v) => {
                        if v.is_negative() || *v > Rat::one() {
                            out.push(StructureViolation::PredicateValueOutOfRange {
                                predicate: p.name.clone(),
                                tuple: self.names(t),
                                value: v.clone(),
                            });
                        }
                    }
                }
            }
            if let Some(tb) = table {
                for t in tb.keys() {
                    if t.len() != p.arity {
                        out.push(StructureViolation::TableArityMismatch {
                            symbol: p.name.clone(),
                            tuple: self.names(t),
                        });
                    }
                }
                // Lipschitz check over all tuple pairs, sup-metric.
                for a in &tuples {
                    for b in &tuples {
                        if a < b {
                            if let (Some(va), Some(vb)) = (tb.get(a), tb.get(b)) {
                                let gap = (va - vb).abs();
                                let allowed = &p.lipschitz * self.tuple_distance(a, b);
                                if gap > allowed {
                                    out.push(StructureViolation::PredicateLipschitz {
                                        predicate: p.name.clone(),
                                        tuple_a: self.names(a),
                                        tuple_b: self.names(b),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }

        for fsym in &self.sig.functions {
            let table = self.functions.get(&fsym.name);
            let tuples = self.tuples(fsym.arity);
            for t in &tuples {
                if table.and_then(|tb| tb.get(t)).is_none() {
                    out.push(StructureViolation::MissingFunctionEntry {
                        function: fsym.name.clone(),
                        tuple: self.names(t),
                    });
                }
            }
            if let Some(tb) = table {
                for t in tb.keys() {
                    if t.len() != fsym.arity {
                        out.push(StructureViolation::TableArityMismatch {
                            symbol: fsym.name.clone(),
                            tuple: self.names(t),
                        });
                    }
                }
                for a in &tuples {
                    for b in &tuples {
                        if a < b {
                            if let (Some(&fa), Some(&fb)) = (tb.get(a), tb.get(b)) {
                                let gap = self.dist[fa][fb].clone();
                                let allowed = &fsym.lipschitz * self.tuple_distance(a, b);
                                if gap > allowed {
                                    out.push(StructureViolation::FunctionLipschitz {
                                        function: fsym.name.clone(),
                                        tuple_a: self.names(a),
                                        tuple_b: self.names(b),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }

        for c in &self.sig.constants {
            if !self.constants.contains_key(c) {
                out.push(StructureViolation::MissingConstant { constant: c.clone() });
            }
        }
        out
    }

    fn permutation_preserves(&self, perm: &[PointId]) -> bool {
        let n = self.point_count();
        for x in 0..n {
            for y in (x + 1)..n {
                if self.dist[perm[x]][perm[y]] != self.dist[x][y] {
                    return false;
                }
            }
        }
        for (name, table) in &self.predicates {
            let _ = name;
            for (tuple, value) in table {
                let image: Vec<PointId> = tuple.iter().map(|&p| perm[p]).collect();
                if table.get(&image) != Some(value) {
                    return false;
                }
            }
        }
        for table in self.functions.values() {
            for (tuple, &out) in table {
                let image: Vec<PointId> = tuple.iter().map(|&p| perm[p]).collect();
                if table.get(&image) != Some(&perm[out]) {
                    return false;
                }
            }
        }
        self.constants.values().all(|&c| perm[c] == c)
    }

    /// Every distance/table/constant-preserving bijection of the points.
    /// Always contains the identity; brute force over all permutations.
    pub fn automorphisms(&self) -> Vec<Automorphism> {
        self.automorphisms_with(par::default_parallel())
    }

    /// Sequential variant of [`FiniteStructure::automorphisms`].
    pub fn automorphisms_seq(&self) -> Vec<Automorphism> {
        self.automorphisms_with(false)
    }

    fn automorphisms_with(&self, parallel: bool) -> Vec<Automorphism> {
        let n = self.point_count();
        let candidates: Vec<Vec<PointId>> = (0..n).permutations(n).collect();
        par::filter_map_vec(parallel, candidates, |perm| {
            if self.permutation_preserves(&perm) {
                Some(Automorphism { perm })
            } else {
                None
            }
        })
    }

    /// The orbit of a tuple under the automorphism group.
    pub fn orbit(&self, tuple: &[PointId]) -> BTreeSet<Vec<PointId>> {
        self.automorphisms()
            .iter()
            .map(|a| a.apply_tuple(tuple))
            .collect()
    }

    /// Extends the structure (and its signature) with fresh constants.
    /// The carrier is unchanged, so validity is preserved.
    pub fn add_constants(
        &self,
        assignment: &BTreeMap<String, String>,
    ) -> Result<FiniteStructure, ConstantError> {
        let mut out = self.clone();
        for (name, point) in assignment {
            if self.sig.has_symbol(name) {
                return Err(ConstantError::NameCollision(name.clone()));
            }
            let id = self
                .point_id(point)
                .ok_or_else(|| ConstantError::UnknownPoint(point.clone()))?;
            out.sig.constants.push(name.clone());
            out.constants.insert(name.clone(), id);
        }
        Ok(out)
    }
}

/// True iff some bijection of points carries every distance, table, and
/// constant of `m` exactly onto `n`. Requires equal signatures.
pub fn brute_force_isomorphic(m: &FiniteStructure, n: &FiniteStructure) -> bool {
    isomorphic_with(m, n, par::default_parallel())
}

/// Sequential variant of [`brute_force_isomorphic`].
pub fn brute_force_isomorphic_seq(m: &FiniteStructure, n: &FiniteStructure) -> bool {
    isomorphic_with(m, n, false)
}

fn isomorphic_with(m: &FiniteStructure, n: &FiniteStructure, parallel: bool) -> bool {
    if m.sig != n.sig || m.point_count() != n.point_count() {
        return false;
    }
    let size = m.point_count();
    let candidates: Vec<Vec<PointId>> = (0..size).permutations(size).collect();
    let hits = par::filter_map_vec(parallel, candidates, |map| {
        if mapping_is_isomorphism(m, n, &map) {
            Some(())
        } else {
            None
        }
    });
    !hits.is_empty()
}

fn mapping_is_isomorphism(m: &FiniteStructure, n: &FiniteStructure, map: &[PointId]) -> bool {
    let size = m.point_count();
    for x in 0..size {
        for y in (x + 1)..size {
            if n.dist[map[x]][map[y]] != m.dist[x][y] {
                return false;
            }
        }
    }
    for p in &m.sig.predicates {
        for t in m.tuples(p.arity) {
            let image: Vec<PointId> = t.iter().map(|&q| map[q]).collect();
            if m.predicate_value(&p.name, &t) != n.predicate_value(&p.name, &image) {
                return false;
            }
        }
    }
    for fsym in &m.sig.functions {
        for t in m.tuples(fsym.arity) {
            let image: Vec<PointId> = t.iter().map(|&q| map[q]).collect();
            match (m.function_value(&fsym.name, &t), n.function_value(&fsym.name, &image)) {
                (Some(a), Some(b)) if map[a] == b => {}
                _ => return false,
            }
        }
    }
    for c in &m.sig.constants {
        match (m.constant_point(c), n.constant_point(c)) {
            (Some(a), Some(b)) if map[a] == b => {}
            _ => return false,
        }
    }
    true
}
