//! Small hand-built reference structures used across the test suite, the
//! benches, and the documentation examples.

use crate::rational::{int, rat};
use crate::signature::{PredicateSymbol, Signature};
use crate::structure::FiniteStructure;

/// Three points `a,b,c` with `d(a,b) = d(b,c) = 1/2`, `d(a,c) = 1`, and a
/// unary 1-Lipschitz predicate `P` taking values `0, 1/2, 1`. Rigid.
pub fn tri() -> FiniteStructure {
    let sig = Signature {
        predicates: vec![PredicateSymbol {
            name: "P".into(),
            arity: 1,
            lipschitz: int(1),
        }],
        functions: vec![],
        constants: vec![],
    };
    let mut m = FiniteStructure::new(sig, &["a", "b", "c"]);
    m.set_distance("a", "b", rat(1, 2));
    m.set_distance("b", "c", rat(1, 2));
    m.set_distance("a", "c", int(1));
    m.set_predicate("P", &["a"], int(0));
    m.set_predicate("P", &["b"], rat(1, 2));
    m.set_predicate("P", &["c"], int(1));
    m
}

/// Two points `a,b` at distance `1/2` with a constant unary predicate `Q`
/// of value `3/10`. The swap is an automorphism.
pub fn sym() -> FiniteStructure {
    let sig = Signature {
        predicates: vec![PredicateSymbol {
            name: "Q".into(),
            arity: 1,
            lipschitz: int(1),
        }],
        functions: vec![],
        constants: vec![],
    };
    let mut m = FiniteStructure::new(sig, &["a", "b"]);
    m.set_distance("a", "b", rat(1, 2));
    m.set_predicate("Q", &["a"], rat(3, 10));
    m.set_predicate("Q", &["b"], rat(3, 10));
    m
}

/// Two points `p0,p1` at distance `1/2`, each named by a constant.
pub fn m1() -> FiniteStructure {
    let sig = Signature {
        predicates: vec![],
        functions: vec![],
        constants: vec!["c0".into(), "c1".into()],
    };
    let mut m = FiniteStructure::new(sig, &["p0", "p1"]);
    m.set_distance("p0", "p1", rat(1, 2));
    m.set_constant("c0", "p0");
    m.set_constant("c1", "p1");
    m
}

/// [`m1`] plus an unnamed third point `p2`, all distances `1/2`.
pub fn m2() -> FiniteStructure {
    let sig = Signature {
        predicates: vec![],
        functions: vec![],
        constants: vec!["c0".into(), "c1".into()],
    };
    let mut m = FiniteStructure::new(sig, &["p0", "p1", "p2"]);
    m.set_distance("p0", "p1", rat(1, 2));
    m.set_distance("p0", "p2", rat(1, 2));
    m.set_distance("p1", "p2", rat(1, 2));
    m.set_constant("c0", "p0");
    m.set_constant("c1", "p1");
    m
}
