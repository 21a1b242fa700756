//! Scalar abstraction for the count-ratio arithmetic.
//!
//! Marginals, disparate impact, relative improvement and apportionment are
//! written once against [`Scalar`] and instantiated either with binary floats
//! (`f32`, `f64`) or with exact rationals ([`Rational64`]). The floating
//! instantiations are what reports store; the rational one is used where a
//! value has to come out exact (e.g. `0.22 -> 0.55` being `+150%` on the nose).

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// Exact rational scalar.
pub type Rational64 = Ratio<i64>;

pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// Lift an integer count.
    fn from_count(n: u64) -> Self;

    /// Absolute slack used when comparing two values that are equal in exact
    /// arithmetic but may differ in the last bits after rounding. Zero for
    /// exact types.
    fn tolerance() -> Self;

    fn floor(self) -> Self;

    fn to_f64(self) -> f64;

    /// Integer part of a non-negative value.
    fn to_count(self) -> u64 {
        self.floor().to_f64() as u64
    }

    fn percent() -> Self {
        Self::from_count(100)
    }

    fn approx_eq(self, other: Self) -> bool {
        let diff = if self > other { self - other } else { other - self };
        diff <= Self::tolerance()
    }

    /// Floor that snaps values within [`Scalar::tolerance`] of the next
    /// integer up to that integer.
    fn snapped_floor(self) -> Self {
        let fl = self.floor();
        let up = fl + Self::one();
        if up.approx_eq(self) {
            up
        } else {
            fl
        }
    }
}

macro_rules! float_scalar {
    ($t:ty, $tol:expr) => {
        impl Scalar for $t {
            fn from_count(n: u64) -> Self {
                n as $t
            }

            fn tolerance() -> Self {
                $tol
            }

            fn floor(self) -> Self {
                <$t>::floor(self)
            }

            fn to_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

float_scalar!(f32, 1e-5);
float_scalar!(f64, 1e-9);

impl Scalar for Rational64 {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i64::try_from(n).expect("count exceeds i64 range"))
    }

    fn tolerance() -> Self {
        Ratio::from_integer(0)
    }

    fn floor(self) -> Self {
        Ratio::floor(&self)
    }

    fn to_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

/// `num / den` in the scalar type; `None` when `den == 0`.
pub fn count_ratio<S: Scalar>(num: u64, den: u64) -> Option<S> {
    if den == 0 {
        None
    } else {
        Some(S::from_count(num) / S::from_count(den))
    }
}

/// Parse a decimal literal such as `"0.22"` into an exact rational.
pub fn rational_from_decimal(text: &str) -> Option<Rational64> {
    let text = text.trim();
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let scale = 10i64.checked_pow(u32::try_from(frac_part.len()).ok()?)?;
    let whole: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().ok()? };
    let numer = whole.checked_mul(scale)?.checked_add(frac)?;
    let value = Ratio::new(numer, scale);
    Some(if neg { -value } else { value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing() {
        assert_eq!(rational_from_decimal("0.22"), Some(Ratio::new(11, 50)));
        assert_eq!(rational_from_decimal("3"), Some(Ratio::from_integer(3)));
        assert_eq!(rational_from_decimal("-.5"), Some(Ratio::new(-1, 2)));
        assert_eq!(rational_from_decimal("1e3"), None);
        assert_eq!(rational_from_decimal("."), None);
    }

    #[test]
    fn snapped_floor_absorbs_rounding() {
        let third = 1.0f64 / 3.0;
        assert_eq!((third * 3.0 * 20.0).snapped_floor(), 20.0);
        assert_eq!(19.999_999_999_99f64.snapped_floor(), 20.0);
        assert_eq!(19.5f64.snapped_floor(), 19.0);
        assert_eq!(Ratio::new(59i64, 3).snapped_floor(), Ratio::from_integer(19));
    }

    #[test]
    fn count_ratio_guards_zero() {
        assert_eq!(count_ratio::<f64>(1, 0), None);
        assert_eq!(count_ratio::<Rational64>(2, 4), Some(Ratio::new(1, 2)));
    }
}
