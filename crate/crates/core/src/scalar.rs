//! Numeric backend abstraction.
//!
//! Distribution-level formulas (Ewens-Pitman weights, kernel transition
//! probabilities, generator coefficients) are rational functions of the
//! parameters, so they are written once, generically, and instantiated with
//! either `f64` (fast path) or [`BigRational`] (exact path). Every float
//! result can therefore be checked against an exact twin in tests.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::ops::{Div, Neg, Sub};

/// A field scalar: `f64` or `BigRational`.
pub trait Scalar:
    Clone
    + PartialOrd
    + PartialEq
    + Zero
    + One
    + Neg<Output = Self>
    + Sub<Output = Self>
    + Div<Output = Self>
    + std::fmt::Debug
{
    fn from_integer(n: i64) -> Self;
    fn from_big_rational(r: &BigRational) -> Self;
    fn to_f64_lossy(&self) -> f64;
}

impl Scalar for f64 {
    fn from_integer(n: i64) -> Self {
        n as f64
    }

    fn from_big_rational(r: &BigRational) -> Self {
        // Ratio::to_f64 handles magnitudes beyond i64 via big-integer division.
        r.to_f64().unwrap_or_else(|| {
            let n = r.numer().to_f64().unwrap_or(f64::NAN);
            let d = r.denom().to_f64().unwrap_or(f64::NAN);
            n / d
        })
    }

    fn to_f64_lossy(&self) -> f64 {
        *self
    }
}

impl Scalar for BigRational {
    fn from_integer(n: i64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn from_big_rational(r: &BigRational) -> Self {
        r.clone()
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

/// Rising factorial (Pochhammer) `a_(k) = a (a+1) ... (a+k-1)`, with `a_(0) = 1`.
pub fn rising<T: Scalar>(a: &T, k: usize) -> T {
    let mut acc = T::one();
    let mut factor = a.clone();
    for _ in 0..k {
        acc = acc * factor.clone();
        factor = factor + T::one();
    }
    acc
}

/// Falling factorial `a_[k] = a (a-1) ... (a-k+1)`, with `a_[0] = 1`.
pub fn falling<T: Scalar>(a: &T, k: usize) -> T {
    let mut acc = T::one();
    let mut factor = a.clone();
    for _ in 0..k {
        acc = acc * factor.clone();
        factor = factor - T::one();
    }
    acc
}

/// Parses a scalar from either a ratio literal `p/q` or a decimal string.
///
/// Decimal strings convert exactly (`0.5` becomes `5/10`), so rational
/// computations driven from the command line stay exact.
pub fn parse_big_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num.trim().parse().ok()?;
        let d: BigInt = den.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        let sign = if int_part.trim_start().starts_with('-') {
            -BigInt::one()
        } else {
            BigInt::one()
        };
        let i: BigInt = if int_part.is_empty() || int_part == "-" {
            BigInt::zero()
        } else {
            int_part.parse().ok()?
        };
        let f: BigInt = if frac_part.is_empty() {
            BigInt::zero()
        } else {
            frac_part.parse().ok()?
        };
        if f.is_negative() {
            return None;
        }
        let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
        return Some(BigRational::new(i.abs() * &scale + f, scale) * BigRational::from_integer(sign));
    }
    let n: BigInt = s.parse().ok()?;
    Some(BigRational::from_integer(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pochhammer_conventions() {
        assert_eq!(rising(&2.0, 0), 1.0);
        assert_eq!(falling(&2.0, 0), 1.0);
        assert_eq!(rising(&2.0, 3), 2.0 * 3.0 * 4.0);
        assert_eq!(falling(&5.0, 3), 5.0 * 4.0 * 3.0);
        let r = BigRational::new(BigInt::from(1), BigInt::from(2));
        assert_eq!(
            rising(&r, 2),
            BigRational::new(BigInt::from(3), BigInt::from(4))
        );
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(
            parse_big_rational("1/2").unwrap(),
            BigRational::new(BigInt::from(1), BigInt::from(2))
        );
        assert_eq!(
            parse_big_rational("0.5").unwrap(),
            BigRational::new(BigInt::from(1), BigInt::from(2))
        );
        assert_eq!(
            parse_big_rational("-0.25").unwrap(),
            BigRational::new(BigInt::from(-1), BigInt::from(4))
        );
        assert_eq!(parse_big_rational("3").unwrap(), Scalar::from_integer(3));
        assert!(parse_big_rational("1/0").is_none());
    }
}
