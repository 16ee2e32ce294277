//! Exact rational arithmetic for distances and logic values.
//!
//! Logic values live in `[0,1]`; the connective basis uses truncated
//! arithmetic so that every operation is closed over that interval.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

/// Exact rational. Always kept in lowest terms with a positive denominator.
pub type Rat = BigRational;

/// `n/d` as a [`Rat`]. Panics if `d == 0`.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// The integer `n` as a [`Rat`].
pub fn int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// True when `0 <= r <= 1`.
pub fn is_unit(r: &Rat) -> bool {
    !r.is_negative() && *r <= Rat::one()
}

/// Truncated addition `min(a + b, 1)`.
pub fn add_trunc(a: &Rat, b: &Rat) -> Rat {
    let s = a + b;
    if s > Rat::one() {
        Rat::one()
    } else {
        s
    }
}

/// Truncated subtraction `max(a - b, 0)`.
pub fn sub_trunc(a: &Rat, b: &Rat) -> Rat {
    let d = a - b;
    if d.is_negative() {
        Rat::zero()
    } else {
        d
    }
}

/// Truncated scaling `min(c * x, 1)`.
pub fn scale_trunc(c: &Rat, x: &Rat) -> Rat {
    let p = c * x;
    if p > Rat::one() {
        Rat::one()
    } else {
        p
    }
}

/// Canonical `p/q` rendering; integers print with an explicit `/1`.
pub fn format_rat(r: &Rat) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RatParseError {
    #[error("empty rational literal")]
    Empty,
    #[error("invalid rational literal `{0}`")]
    Invalid(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

/// Parses `p/q` or the integer shorthand `k` (meaning `k/1`).
pub fn parse_rat(s: &str) -> Result<Rat, RatParseError> {
    if s.is_empty() {
        return Err(RatParseError::Empty);
    }
    let parse_int = |t: &str| -> Result<BigInt, RatParseError> {
        t.parse::<BigInt>()
            .map_err(|_| RatParseError::Invalid(s.to_string()))
    };
    match s.split_once('/') {
        None => Ok(Rat::from_integer(parse_int(s)?)),
        Some((p, q)) => {
            let numer = parse_int(p)?;
            let denom = parse_int(q)?;
            if denom.is_zero() {
                return Err(RatParseError::ZeroDenominator(s.to_string()));
            }
            Ok(Rat::new(numer, denom))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_round_trip() {
        for s in ["1/2", "0/1", "7/12", "3/1"] {
            let r = parse_rat(s).unwrap();
            assert_eq!(format_rat(&r), s);
        }
        assert_eq!(parse_rat("3").unwrap(), int(3));
        assert_eq!(parse_rat("6/4").unwrap(), rat(3, 2));
        assert_eq!(parse_rat("-1/2").unwrap(), rat(-1, 2));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_rat("").is_err());
        assert!(parse_rat("1/0").is_err());
        assert!(parse_rat("a/b").is_err());
        assert!(parse_rat("1.5").is_err());
    }

    #[test]
    fn truncated_arithmetic_stays_in_unit_interval() {
        let a = rat(3, 4);
        let b = rat(1, 2);
        assert_eq!(add_trunc(&a, &b), int(1));
        assert_eq!(sub_trunc(&b, &a), int(0));
        assert_eq!(sub_trunc(&a, &b), rat(1, 4));
        assert_eq!(scale_trunc(&int(3), &b), int(1));
        assert_eq!(scale_trunc(&b, &b), rat(1, 4));
    }
}
