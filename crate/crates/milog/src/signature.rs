//! Metric signatures: predicate and function symbols with Lipschitz moduli,
//! plus constant symbols.
//!
//! Moduli of uniform continuity are restricted to Lipschitz form
//! `delta(eps) = eps / L` with `L` a nonnegative rational, which keeps
//! validation exact.

use std::fmt;

use num_traits::Signed;

use crate::rational::{format_rat, Rat};
use crate::syntax;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateSymbol {
    pub name: String,
    pub arity: usize,
    /// Lipschitz constant under the sup-metric on argument tuples.
    pub lipschitz: Rat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionSymbol {
    pub name: String,
    pub arity: usize,
    pub lipschitz: Rat,
}

/// A metric signature. Symbol names must be unique across all three kinds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Signature {
    pub predicates: Vec<PredicateSymbol>,
    pub functions: Vec<FunctionSymbol>,
    pub constants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SignatureViolation {
    DuplicateSymbol(String),
    ZeroArity(String),
    NegativeLipschitz { symbol: String, lipschitz: Rat },
    InvalidName { name: String, reason: String },
}

impl fmt::Display for SignatureViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignatureViolation::DuplicateSymbol(n) => {
                write!(f, "symbol `{n}` declared more than once")
            }
            SignatureViolation::ZeroArity(n) => {
                write!(f, "symbol `{n}` has arity 0; arities must be positive")
            }
            SignatureViolation::NegativeLipschitz { symbol, lipschitz } => {
                write!(
                    f,
                    "symbol `{symbol}` has negative Lipschitz constant {}",
                    format_rat(lipschitz)
                )
            }
            SignatureViolation::InvalidName { name, reason } => {
                write!(f, "symbol name `{name}` is invalid: {reason}")
            }
        }
    }
}

impl Signature {
    pub fn predicate(&self, name: &str) -> Option<&PredicateSymbol> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&FunctionSymbol> {
        self.functions.iter().find(|p| p.name == name)
    }

    pub fn has_constant(&self, name: &str) -> bool {
        self.constants.iter().any(|c| c == name)
    }

    /// All declared names, in declaration order.
    pub fn all_names(&self) -> impl Iterator<Item = &str> {
        self.predicates
            .iter()
            .map(|p| p.name.as_str())
            .chain(self.functions.iter().map(|f| f.name.as_str()))
            .chain(self.constants.iter().map(|c| c.as_str()))
    }

    pub fn has_symbol(&self, name: &str) -> bool {
        self.all_names().any(|n| n == name)
    }

    pub fn validate(&self) -> Vec<SignatureViolation> {
        let mut out = Vec::new();
        let mut seen: Vec<&str> = Vec::new();
        for name in self.all_names() {
            if seen.contains(&name) {
                out.push(SignatureViolation::DuplicateSymbol(name.to_string()));
            } else {
                seen.push(name);
            }
            if let Err(reason) = syntax::check_symbol_name(name) {
                out.push(SignatureViolation::InvalidName {
                    name: name.to_string(),
                    reason,
                });
            }
        }
        for (name, arity, lip) in self
            .predicates
            .iter()
            .map(|p| (&p.name, p.arity, &p.lipschitz))
            .chain(self.functions.iter().map(|f| (&f.name, f.arity, &f.lipschitz)))
        {
            if arity == 0 {
                out.push(SignatureViolation::ZeroArity(name.clone()));
            }
            if lip.is_negative() {
                out.push(SignatureViolation::NegativeLipschitz {
                    symbol: name.clone(),
                    lipschitz: lip.clone(),
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::int;

    fn pred(name: &str, arity: usize, lip: Rat) -> PredicateSymbol {
        PredicateSymbol {
            name: name.into(),
            arity,
            lipschitz: lip,
        }
    }

    #[test]
    fn detects_duplicates_across_kinds() {
        let sig = Signature {
            predicates: vec![pred("P", 1, int(1))],
            functions: vec![],
            constants: vec!["P".into()],
        };
        assert_eq!(
            sig.validate(),
            vec![SignatureViolation::DuplicateSymbol("P".into())]
        );
    }

    #[test]
    fn detects_bad_arity_and_lipschitz() {
        let sig = Signature {
            predicates: vec![pred("P", 0, int(-1))],
            functions: vec![],
            constants: vec![],
        };
        let v = sig.validate();
        assert!(v.contains(&SignatureViolation::ZeroArity("P".into())));
        assert!(matches!(
            v.iter().find(|x| matches!(x, SignatureViolation::NegativeLipschitz { .. })),
            Some(_)
        ));
    }

    #[test]
    fn rejects_reserved_names() {
        let sig = Signature {
            predicates: vec![pred("sup", 1, int(1))],
            functions: vec![],
            constants: vec![],
        };
        assert!(matches!(
            sig.validate().as_slice(),
            [SignatureViolation::InvalidName { .. }]
        ));
    }
}
