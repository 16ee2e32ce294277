//! Function symbols end to end: validation with declared Lipschitz
//! constants, term evaluation through nested applications, continuity
//! composition along terms, file round trips, and the isomorphism oracle.

use std::collections::BTreeMap;

use milog::continuity::{lipschitz_bounds, Bound};
use milog::corpus::renamed_copy;
use milog::eval::{evaluate, EvalError, EvalResult, DEFAULT_BUDGET};
use milog::files::{parse_structure_json, structure_to_json_string};
use milog::rational::{int, rat};
use milog::signature::{FunctionSymbol, PredicateSymbol, Signature};
use milog::structure::{brute_force_isomorphic, FiniteStructure, StructureViolation};
use milog::syntax::{parse_formula, print_formula};

/// Three points with a unary 2-Lipschitz function `f` (a -> b -> c -> c),
/// the graded predicate `P`, and a constant at `a`.
fn func_fixture() -> FiniteStructure {
    let sig = Signature {
        predicates: vec![PredicateSymbol {
            name: "P".into(),
            arity: 1,
            lipschitz: int(1),
        }],
        functions: vec![FunctionSymbol {
            name: "f".into(),
            arity: 1,
            lipschitz: int(2),
        }],
        constants: vec!["c0".into()],
    };
    let mut m = FiniteStructure::new(sig, &["a", "b", "c"]);
    m.set_distance("a", "b", rat(1, 2));
    m.set_distance("b", "c", rat(1, 2));
    m.set_distance("a", "c", int(1));
    m.set_predicate("P", &["a"], int(0));
    m.set_predicate("P", &["b"], rat(1, 2));
    m.set_predicate("P", &["c"], int(1));
    m.set_function("f", &["a"], "b");
    m.set_function("f", &["b"], "c");
    m.set_function("f", &["c"], "c");
    m.set_constant("c0", "a");
    m
}

fn env_at(m: &FiniteStructure, point: &str) -> BTreeMap<String, usize> {
    BTreeMap::from([("x".to_string(), m.point_id(point).unwrap())])
}

#[test]
fn fixture_is_valid() {
    assert_eq!(func_fixture().validate(), Vec::new());
}

fn fixture_with_function_lipschitz(lip: milog::rational::Rat) -> FiniteStructure {
    let mut sig = func_fixture().signature().clone();
    sig.functions[0].lipschitz = lip;
    let mut m = FiniteStructure::new(sig, &["a", "b", "c"]);
    m.set_distance("a", "b", rat(1, 2));
    m.set_distance("b", "c", rat(1, 2));
    m.set_distance("a", "c", int(1));
    m.set_predicate("P", &["a"], int(0));
    m.set_predicate("P", &["b"], rat(1, 2));
    m.set_predicate("P", &["c"], int(1));
    m.set_function("f", &["a"], "b");
    m.set_function("f", &["b"], "c");
    m.set_function("f", &["c"], "c");
    m.set_constant("c0", "a");
    m
}

#[test]
fn function_lipschitz_violations_are_reported() {
    // d(f(a), f(b)) = 1/2 > (1/4) * d(a,b).
    let m = fixture_with_function_lipschitz(rat(1, 4));
    assert!(m
        .validate()
        .iter()
        .any(|v| matches!(v, StructureViolation::FunctionLipschitz { .. })));
    assert_eq!(fixture_with_function_lipschitz(int(2)).validate(), Vec::new());
}

#[test]
fn missing_function_entries_are_reported() {
    let sig = func_fixture().signature().clone();
    let mut m = FiniteStructure::new(sig, &["a", "b", "c"]);
    m.set_distance("a", "b", rat(1, 2));
    m.set_distance("b", "c", rat(1, 2));
    m.set_distance("a", "c", int(1));
    m.set_predicate("P", &["a"], int(0));
    m.set_predicate("P", &["b"], rat(1, 2));
    m.set_predicate("P", &["c"], int(1));
    m.set_constant("c0", "a");
    m.set_function("f", &["a"], "b");
    let v = m.validate();
    assert!(v
        .iter()
        .any(|x| matches!(x, StructureViolation::MissingFunctionEntry { .. })));
}

#[test]
fn application_terms_parse_print_and_evaluate() {
    let m = func_fixture();
    let f = parse_formula("(P (f x))", m.signature()).unwrap();
    assert_eq!(parse_formula(&print_formula(&f), m.signature()).unwrap(), f);
    assert_eq!(
        evaluate(&m, &f, &env_at(&m, "a"), DEFAULT_BUDGET).unwrap(),
        EvalResult::Exact(rat(1, 2))
    );
    let nested = parse_formula("(P (f (f x)))", m.signature()).unwrap();
    assert_eq!(
        evaluate(&m, &nested, &env_at(&m, "a"), DEFAULT_BUDGET).unwrap(),
        EvalResult::Exact(int(1))
    );
    let dist = parse_formula("(d (f x) c0)", m.signature()).unwrap();
    assert_eq!(
        evaluate(&m, &dist, &env_at(&m, "b"), DEFAULT_BUDGET).unwrap(),
        EvalResult::Exact(int(1))
    );
}

#[test]
fn missing_table_entry_is_an_evaluation_error() {
    let sig = func_fixture().signature().clone();
    let mut broken = FiniteStructure::new(sig, &["a", "b", "c"]);
    broken.set_distance("a", "b", rat(1, 2));
    broken.set_distance("b", "c", rat(1, 2));
    broken.set_distance("a", "c", int(1));
    broken.set_predicate("P", &["a"], int(0));
    broken.set_predicate("P", &["b"], rat(1, 2));
    broken.set_predicate("P", &["c"], int(1));
    broken.set_constant("c0", "a");
    let f = parse_formula("(P (f x))", broken.signature()).unwrap();
    assert!(matches!(
        evaluate(&broken, &f, &env_at(&broken, "a"), DEFAULT_BUDGET),
        Err(EvalError::MissingEntry(_))
    ));
}

#[test]
fn bounds_compose_along_terms() {
    let m = func_fixture();
    let f = parse_formula("(P (f x))", m.signature()).unwrap();
    // L_P * L_f = 1 * 2.
    assert_eq!(lipschitz_bounds(m.signature(), &f).bound("x"), Bound::Finite(int(2)));
    let nested = parse_formula("(P (f (f x)))", m.signature()).unwrap();
    assert_eq!(
        lipschitz_bounds(m.signature(), &nested).bound("x"),
        Bound::Finite(int(4))
    );
    // The composed bound is respected on every pair of points.
    let session_vals: Vec<_> = (0..m.point_count())
        .map(|p| {
            let env = BTreeMap::from([("x".to_string(), p)]);
            evaluate(&m, &nested, &env, DEFAULT_BUDGET)
                .unwrap()
                .exact()
                .unwrap()
                .clone()
        })
        .collect();
    for p in 0..m.point_count() {
        for q in 0..m.point_count() {
            let gap = if session_vals[p] > session_vals[q] {
                &session_vals[p] - &session_vals[q]
            } else {
                &session_vals[q] - &session_vals[p]
            };
            assert!(gap <= int(4) * m.distance(p, q));
        }
    }
}

#[test]
fn files_and_oracles_cover_functions() {
    let m = func_fixture();
    let text = structure_to_json_string(&m);
    let back = parse_structure_json(&text).unwrap();
    assert_eq!(back, m);

    let copy = renamed_copy(&m, "q");
    assert!(brute_force_isomorphic(&m, &copy));

    // Breaking one function entry breaks the isomorphism.
    let mut other = renamed_copy(&m, "q");
    other.set_function("f", &["q1"], "q1");
    assert_eq!(other.validate(), Vec::new());
    assert!(!brute_force_isomorphic(&m, &other));

    // Automorphisms must preserve the function table; this fixture is
    // rigid because P separates the points.
    assert_eq!(m.automorphisms().len(), 1);
}
