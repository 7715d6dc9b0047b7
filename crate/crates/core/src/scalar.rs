//! Numeric backends and extended reals.
//!
//! Every solver in the crate is generic over [`Scalar`], which is implemented
//! for `f64` (tolerance-based comparisons) and for [`Rational`] (exact
//! arithmetic, all tolerances zero). Values in `[-inf, +inf)` are carried by
//! [`ExtReal`], which keeps `-inf` symbolic so it never enters arithmetic.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// Exact rational numbers.
pub type Rational = BigRational;

/// Tolerances shared across the crate (float mode only).
pub mod tol {
    /// Kernel normalization and LP feasibility.
    pub const FEASIBILITY: f64 = 1e-12;
    /// Optimality comparisons and tie detection.
    pub const OPTIMALITY: f64 = 1e-10;
    /// Property checks (membership, duality gaps, supermartingale tests).
    pub const PROPERTY: f64 = 1e-9;
}

pub trait Scalar:
    Clone
    + fmt::Debug
    + fmt::Display
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// True for exact arithmetic backends.
    const EXACT: bool;

    fn zero() -> Self;
    fn one() -> Self;
    /// Exact conversion for rationals (every finite double is a dyadic rational).
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn abs(&self) -> Self;
    /// Threshold under which a quantity counts as zero in feasibility tests.
    fn feas_tol() -> Self;
    /// Threshold used for pivoting and optimality tests.
    fn opt_tol() -> Self;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    fn is_zero_tol(&self) -> bool {
        self.abs() <= Self::feas_tol()
    }

    fn is_positive_tol(&self) -> bool {
        *self > Self::feas_tol()
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn feas_tol() -> Self {
        tol::FEASIBILITY
    }
    fn opt_tol() -> Self {
        tol::OPTIMALITY
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;

    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }
    fn one() -> Self {
        <BigRational as One>::one()
    }
    /// The shortest decimal that round-trips to `x`, so `0.2` becomes `1/5`.
    fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "finite value required for exact conversion");
        let text = format!("{:e}", x);
        let (mantissa, exp) = text.split_once('e').expect("exponent form");
        let exp: i64 = exp.parse().expect("integer exponent");
        let negative = mantissa.starts_with('-');
        let mantissa = mantissa.trim_start_matches('-');
        let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        let digits: BigInt = format!("{int}{frac}").parse().expect("decimal digits");
        let shift = exp - frac.len() as i64;
        let ten = BigInt::from(10);
        let mut r = if shift >= 0 {
            BigRational::from_integer(digits * num_traits::pow(ten, shift as usize))
        } else {
            BigRational::new(digits, num_traits::pow(ten, (-shift) as usize))
        };
        if negative {
            r = -r;
        }
        r
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or_else(|| {
            // numerator/denominator too large for a direct conversion
            let n = self.numer().to_f64().unwrap_or(f64::NAN);
            let d = self.denom().to_f64().unwrap_or(f64::NAN);
            n / d
        })
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }
    fn feas_tol() -> Self {
        <BigRational as Zero>::zero()
    }
    fn opt_tol() -> Self {
        <BigRational as Zero>::zero()
    }
    fn from_usize(n: usize) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
    fn is_zero_tol(&self) -> bool {
        Zero::is_zero(self)
    }
    fn is_positive_tol(&self) -> bool {
        Signed::is_positive(self)
    }
}

/// A value in `[-inf, +inf)`.
#[derive(Clone, Debug, PartialEq)]
pub enum ExtReal<S = f64> {
    NegInf,
    Finite(S),
}

impl<S: Scalar> ExtReal<S> {
    pub fn finite(&self) -> Option<&S> {
        match self {
            ExtReal::NegInf => None,
            ExtReal::Finite(v) => Some(v),
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn is_neg_inf(&self) -> bool {
        matches!(self, ExtReal::NegInf)
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(v) => v.to_f64(),
        }
    }

    /// Converts between backends; exact when the target is rational.
    pub fn convert<T: Scalar>(&self) -> ExtReal<T> {
        match self {
            ExtReal::NegInf => ExtReal::NegInf,
            ExtReal::Finite(v) => ExtReal::Finite(T::from_f64(v.to_f64())),
        }
    }

    pub fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    /// Absolute gap between two extended reals; zero when both are `-inf`,
    /// `None` when exactly one is.
    pub fn gap(&self, other: &Self) -> Option<S> {
        match (self, other) {
            (ExtReal::NegInf, ExtReal::NegInf) => Some(S::zero()),
            (ExtReal::Finite(a), ExtReal::Finite(b)) => Some((a.clone() - b.clone()).abs()),
            _ => None,
        }
    }
}

impl ExtReal<f64> {
    /// Maps `f64::NEG_INFINITY` to the symbolic value; rejects NaN and `+inf`.
    pub fn from_f64_checked(x: f64) -> Option<Self> {
        if x == f64::NEG_INFINITY {
            Some(ExtReal::NegInf)
        } else if x.is_finite() {
            Some(ExtReal::Finite(x))
        } else {
            None
        }
    }
}

impl<S: Scalar> PartialOrd for ExtReal<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (ExtReal::NegInf, ExtReal::NegInf) => Some(Ordering::Equal),
            (ExtReal::NegInf, ExtReal::Finite(_)) => Some(Ordering::Less),
            (ExtReal::Finite(_), ExtReal::NegInf) => Some(Ordering::Greater),
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl<S: Scalar> fmt::Display for ExtReal<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => write!(f, "-inf"),
            ExtReal::Finite(v) => write!(f, "{}", v.to_f64()),
        }
    }
}

impl Serialize for ExtReal<f64> {
    fn serialize<Z: Serializer>(&self, serializer: Z) -> Result<Z::Ok, Z::Error> {
        match self {
            ExtReal::NegInf => serializer.serialize_str("-inf"),
            ExtReal::Finite(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal<f64> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ExtVisitor;

        impl Visitor<'_> for ExtVisitor {
            type Value = ExtReal<f64>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a finite number or the string \"-inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
                ExtReal::from_f64_checked(v).ok_or_else(|| E::custom("value must be finite or -inf"))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
                Ok(ExtReal::Finite(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
                Ok(ExtReal::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                match v {
                    "-inf" => Ok(ExtReal::NegInf),
                    other => other
                        .parse::<f64>()
                        .ok()
                        .and_then(ExtReal::from_f64_checked)
                        .ok_or_else(|| E::custom(format!("invalid extended real {other:?}"))),
                }
            }
        }

        deserializer.deserialize_any(ExtVisitor)
    }
}

/// Dot product of two equally sized slices.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

pub fn convert_vec<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::from_f64(x)).collect()
}
