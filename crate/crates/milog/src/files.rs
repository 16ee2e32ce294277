//! JSON structure files and predicate-table files.
//!
//! A structure file is a single JSON object:
//!
//! ```json
//! {
//!   "signature": {
//!     "predicates": [{"name": "P", "arity": 1, "lipschitz": "1/1"}],
//!     "functions": [],
//!     "constants": ["c0"]
//!   },
//!   "points": ["a", "b"],
//!   "metric": {"a,b": "1/2"},
//!   "predicates": {"P": {"a": "0/1", "b": "1/2"}},
//!   "functions": {},
//!   "constants": {"c0": "a"}
//! }
//! ```
//!
//! Tuple keys are comma-joined point names. Missing metric entries default
//! by symmetry and `d(x,x)` is implicitly 0. Rationals are `p/q` strings;
//! the integer shorthand `k` means `k/1`. Loading validates the structure
//! and reports violations as errors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{format_rat, parse_rat, Rat};
use crate::signature::{FunctionSymbol, PredicateSymbol, Signature};
use crate::structure::{FiniteStructure, PointId};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("structure is invalid: {0}")]
    Invalid(String),
}

fn schema(msg: impl Into<String>) -> LoadError {
    LoadError::Schema(msg.into())
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawSymbol {
    name: String,
    arity: usize,
    lipschitz: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawSignature {
    #[serde(default)]
    predicates: Vec<RawSymbol>,
    #[serde(default)]
    functions: Vec<RawSymbol>,
    #[serde(default)]
    constants: Vec<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawStructure {
    signature: RawSignature,
    points: Vec<String>,
    #[serde(default)]
    metric: BTreeMap<String, String>,
    #[serde(default)]
    predicates: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    functions: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    constants: BTreeMap<String, String>,
}

fn parse_rat_field(what: &str, s: &str) -> Result<Rat, LoadError> {
    parse_rat(s).map_err(|e| schema(format!("{what}: {e}")))
}

fn split_key(key: &str) -> Vec<&str> {
    key.split(',').collect()
}

/// Parses and validates a structure from JSON text.
pub fn parse_structure_json(text: &str) -> Result<FiniteStructure, LoadError> {
    let raw: RawStructure = serde_json::from_str(text)?;
    let sig = Signature {
        predicates: raw
            .signature
            .predicates
            .iter()
            .map(|p| {
                Ok(PredicateSymbol {
                    name: p.name.clone(),
                    arity: p.arity,
                    lipschitz: parse_rat_field(&format!("predicate `{}` lipschitz", p.name), &p.lipschitz)?,
                })
            })
            .collect::<Result<_, LoadError>>()?,
        functions: raw
            .signature
            .functions
            .iter()
            .map(|f| {
                Ok(FunctionSymbol {
                    name: f.name.clone(),
                    arity: f.arity,
                    lipschitz: parse_rat_field(&format!("function `{}` lipschitz", f.name), &f.lipschitz)?,
                })
            })
            .collect::<Result<_, LoadError>>()?,
        constants: raw.signature.constants.clone(),
    };

    let mut m = FiniteStructure::new(sig, &raw.points.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    let point_ids: BTreeMap<&str, PointId> = raw
        .points
        .iter()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i))
        .collect();
    let id_of = |name: &str| -> Result<PointId, LoadError> {
        point_ids
            .get(name)
            .copied()
            .ok_or_else(|| schema(format!("unknown point `{name}`")))
    };

    // Metric: explicit entries (oriented, so asymmetric inputs surface in
    // validation), then symmetric fill; fully missing pairs are an error.
    let mut given: BTreeMap<(PointId, PointId), Rat> = BTreeMap::new();
    for (key, value) in &raw.metric {
        let parts = split_key(key);
        if parts.len() != 2 {
            return Err(schema(format!("metric key `{key}` is not a pair")));
        }
        let x = id_of(parts[0])?;
        let y = id_of(parts[1])?;
        let d = parse_rat_field(&format!("metric `{key}`"), value)?;
        given.insert((x, y), d);
    }
    let n = m.point_count();
    for x in 0..n {
        for y in 0..n {
            if x == y {
                if let Some(d) = given.get(&(x, x)) {
                    m.set_distance_oriented(x, x, d.clone());
                }
                continue;
            }
            match (given.get(&(x, y)), given.get(&(y, x))) {
                (Some(d), _) => m.set_distance_oriented(x, y, d.clone()),
                (None, Some(d)) => m.set_distance_oriented(x, y, d.clone()),
                (None, None) => {
                    return Err(schema(format!(
                        "metric has no entry for pair `{},{}`",
                        m.point_name(x),
                        m.point_name(y)
                    )))
                }
            }
        }
    }

    for (pred, table) in &raw.predicates {
        for (key, value) in table {
            let tuple = split_key(key)
                .iter()
                .map(|p| id_of(p))
                .collect::<Result<Vec<_>, _>>()?;
            let v = parse_rat_field(&format!("predicate `{pred}` at `{key}`"), value)?;
            m.insert_predicate_raw(pred.clone(), tuple, v);
        }
    }
    for (func, table) in &raw.functions {
        for (key, value) in table {
            let tuple = split_key(key)
                .iter()
                .map(|p| id_of(p))
                .collect::<Result<Vec<_>, _>>()?;
            let out = id_of(value)?;
            m.insert_function_raw(func.clone(), tuple, out);
        }
    }
    for (name, point) in &raw.constants {
        let p = id_of(point)?;
        m.insert_constant_raw(name.clone(), p);
    }

    let violations = m.validate();
    if !violations.is_empty() {
        let text = violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(LoadError::Invalid(text));
    }
    Ok(m)
}

/// Loads and validates a structure file.
pub fn load_structure(path: &Path) -> Result<FiniteStructure, LoadError> {
    parse_structure_json(&std::fs::read_to_string(path)?)
}

/// Serializes a structure back to the file format. Deterministic: maps are
/// sorted and the metric lists each unordered pair once.
pub fn structure_to_json_string(m: &FiniteStructure) -> String {
    let sig = m.signature();
    let mut metric = BTreeMap::new();
    for x in 0..m.point_count() {
        for y in (x + 1)..m.point_count() {
            metric.insert(
                format!("{},{}", m.point_name(x), m.point_name(y)),
                format_rat(m.distance(x, y)),
            );
        }
    }
    let key_of = |tuple: &[PointId]| {
        tuple
            .iter()
            .map(|&p| m.point_name(p))
            .collect::<Vec<_>>()
            .join(",")
    };
    let raw = RawStructure {
        signature: RawSignature {
            predicates: sig
                .predicates
                .iter()
                .map(|p| RawSymbol {
                    name: p.name.clone(),
                    arity: p.arity,
                    lipschitz: format_rat(&p.lipschitz),
                })
                .collect(),
            functions: sig
                .functions
                .iter()
                .map(|f| RawSymbol {
                    name: f.name.clone(),
                    arity: f.arity,
                    lipschitz: format_rat(&f.lipschitz),
                })
                .collect(),
            constants: sig.constants.clone(),
        },
        points: m.point_names().to_vec(),
        metric,
        predicates: m
            .predicate_tables()
            .iter()
            .map(|(name, table)| {
                (
                    name.clone(),
                    table
                        .iter()
                        .map(|(t, v)| (key_of(t), format_rat(v)))
                        .collect(),
                )
            })
            .collect(),
        functions: m
            .function_tables()
            .iter()
            .map(|(name, table)| {
                (
                    name.clone(),
                    table
                        .iter()
                        .map(|(t, &out)| (key_of(t), m.point_name(out).to_string()))
                        .collect(),
                )
            })
            .collect(),
        constants: m
            .constant_assignments()
            .iter()
            .map(|(name, &p)| (name.clone(), m.point_name(p).to_string()))
            .collect(),
    };
    serde_json::to_string_pretty(&raw).expect("structure serialization cannot fail")
}

/// Parses a predicate-table file: a JSON object mapping tuple keys to
/// rationals, e.g. `{"a": "0/1", "b": "1/1"}`. All keys must share one
/// arity and cover every tuple of that arity.
pub fn parse_predicate_table(
    text: &str,
    m: &FiniteStructure,
) -> Result<BTreeMap<Vec<PointId>, Rat>, LoadError> {
    let raw: BTreeMap<String, String> = serde_json::from_str(text)?;
    if raw.is_empty() {
        return Err(schema("predicate table is empty"));
    }
    let mut out = BTreeMap::new();
    let mut arity = None;
    for (key, value) in &raw {
        let tuple = split_key(key)
            .iter()
            .map(|p| {
                m.point_id(p)
                    .ok_or_else(|| schema(format!("unknown point `{p}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        match arity {
            None => arity = Some(tuple.len()),
            Some(a) if a != tuple.len() => {
                return Err(schema(format!("tuple `{key}` has mixed arity")))
            }
            _ => {}
        }
        out.insert(tuple, parse_rat_field(&format!("value at `{key}`"), value)?);
    }
    let arity = arity.unwrap();
    for t in m.tuples(arity) {
        if !out.contains_key(&t) {
            let name = t
                .iter()
                .map(|&p| m.point_name(p))
                .collect::<Vec<_>>()
                .join(",");
            return Err(schema(format!("table is missing tuple `{name}`")));
        }
    }
    Ok(out)
}

pub fn load_predicate_table(
    path: &Path,
    m: &FiniteStructure,
) -> Result<BTreeMap<Vec<PointId>, Rat>, LoadError> {
    parse_predicate_table(&std::fs::read_to_string(path)?, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fixtures_round_trip() {
        for m in [fixtures::tri(), fixtures::sym(), fixtures::m1(), fixtures::m2()] {
            let text = structure_to_json_string(&m);
            let back = parse_structure_json(&text).unwrap();
            assert_eq!(back, m);
            // Save is idempotent.
            assert_eq!(structure_to_json_string(&back), text);
        }
    }

    #[test]
    fn symmetric_fill_and_implicit_diagonal() {
        let text = r#"{
            "signature": {"predicates": [], "functions": [], "constants": []},
            "points": ["a", "b"],
            "metric": {"b,a": "1/2"}
        }"#;
        let m = parse_structure_json(text).unwrap();
        let a = m.point_id("a").unwrap();
        let b = m.point_id("b").unwrap();
        assert_eq!(*m.distance(a, b), crate::rational::rat(1, 2));
        assert_eq!(*m.distance(a, a), crate::rational::int(0));
    }

    #[test]
    fn diameter_violation_is_a_load_error() {
        let text = r#"{
            "signature": {"predicates": [], "functions": [], "constants": []},
            "points": ["a", "b"],
            "metric": {"a,b": "3/2"}
        }"#;
        match parse_structure_json(text) {
            Err(LoadError::Invalid(msg)) => assert!(msg.contains("outside [0,1]")),
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn missing_pair_is_a_schema_error() {
        let text = r#"{
            "signature": {"predicates": [], "functions": [], "constants": []},
            "points": ["a", "b", "c"],
            "metric": {"a,b": "1/2"}
        }"#;
        assert!(matches!(parse_structure_json(text), Err(LoadError::Schema(_))));
    }

    #[test]
    fn key_order_does_not_matter() {
        let a = r#"{
            "points": ["a", "b"],
            "metric": {"a,b": "1/2"},
            "signature": {"constants": [], "functions": [], "predicates": []}
        }"#;
        let b = r#"{
            "signature": {"predicates": [], "constants": [], "functions": []},
            "metric": {"a,b": "1/2"},
            "points": ["a", "b"]
        }"#;
        assert_eq!(
            parse_structure_json(a).unwrap(),
            parse_structure_json(b).unwrap()
        );
    }

    #[test]
    fn predicate_table_parsing() {
        let m = fixtures::sym();
        let table = parse_predicate_table(r#"{"a": "0/1", "b": "1"}"#, &m).unwrap();
        assert_eq!(table.len(), 2);
        assert!(parse_predicate_table(r#"{"a": "0/1"}"#, &m).is_err());
        assert!(parse_predicate_table(r#"{"a": "0/1", "b,a": "1"}"#, &m).is_err());
        assert!(parse_predicate_table(r#"{"a": "0/1", "z": "1"}"#, &m).is_err());
    }
}
