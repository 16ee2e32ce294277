//! Infinitary `[0,1]`-valued logic on finite metric structures.
//!
//! The crate provides:
//!
//! * finite metric structures over a signature of Lipschitz predicates,
//!   Lipschitz functions, and constants, with brute-force automorphism,
//!   orbit, and isomorphism oracles ([`structure`]);
//! * a formula AST with countable sup/inf families presented as
//!   meta-indexed schemas, a distance-to-zeroset operator, and a fixed
//!   basis of truncated-arithmetic connectives ([`formula`]);
//! * an S-expression surface syntax and JSON structure files ([`syntax`],
//!   [`files`]);
//! * an exact rational evaluator with certified bounds for index families
//!   outside its recognized-exact fragment ([`eval`]);
//! * formula-level constructions: zeroset-distance elimination, exact
//!   disjunction/negation/existential, and Borel connective compilation
//!   ([`transform`]);
//! * syntactic Lipschitz-bound propagation and fragment classification
//!   ([`continuity`]);
//! * back-and-forth tables, orbit-indicator formulas, Scott sentences for
//!   finite structures, and synthesis of defining formulas for
//!   automorphism-invariant predicates ([`scott`]).
//!
//! All semantic computations use exact rational arithmetic; there is no
//! floating point anywhere in the core.
//!
//! ```
//! use milog::eval::{evaluate, DEFAULT_BUDGET};
//! use milog::rational::{int, rat};
//! use milog::syntax::parse_formula;
//! use std::collections::BTreeMap;
//!
//! let m = milog::fixtures::tri();
//! assert!(m.validate().is_empty());
//!
//! // The zero test of P: 0 exactly where P vanishes, 1 elsewhere.
//! let f = parse_formula("(ind (P x))", m.signature()).unwrap();
//! let at = |p: &str| BTreeMap::from([("x".to_string(), m.point_id(p).unwrap())]);
//! assert_eq!(
//!     evaluate(&m, &f, &at("a"), DEFAULT_BUDGET).unwrap().exact(),
//!     Some(&int(0))
//! );
//! assert_eq!(
//!     evaluate(&m, &f, &at("b"), DEFAULT_BUDGET).unwrap().exact(),
//!     Some(&int(1))
//! );
//!
//! // Distance from b to the zeroset of P.
//! let rho = parse_formula("(rho (y) (P y))", m.signature()).unwrap();
//! assert_eq!(
//!     evaluate(&m, &rho, &at("b").into_iter().map(|(_, p)| ("y".to_string(), p)).collect(),
//!              DEFAULT_BUDGET).unwrap().exact(),
//!     Some(&rat(1, 2))
//! );
//! ```

pub mod continuity;
pub mod corpus;
pub mod eval;
pub mod files;
pub mod fixtures;
pub mod formula;
mod par;
pub mod rational;
pub mod scott;
pub mod signature;
pub mod structure;
pub mod syntax;
pub mod transform;

pub use eval::{evaluate, satisfies, EvalResult};
pub use formula::{Formula, Term};
pub use rational::Rat;
pub use signature::Signature;
pub use structure::FiniteStructure;
