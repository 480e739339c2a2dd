//! Exact Gaussian rationals `a + b·i` with `a, b ∈ ℚ`.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExactNum {
    pub re: BigRational,
    pub im: BigRational,
}

impl ExactNum {
    pub fn zero() -> Self {
        Self { re: BigRational::zero(), im: BigRational::zero() }
    }

    pub fn one() -> Self {
        Self::int(1)
    }

    pub fn i() -> Self {
        Self { re: BigRational::zero(), im: BigRational::one() }
    }

    pub fn int(v: i64) -> Self {
        Self { re: BigRational::from_integer(BigInt::from(v)), im: BigRational::zero() }
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Self {
            re: BigRational::new(BigInt::from(num), BigInt::from(den)),
            im: BigRational::zero(),
        }
    }

    pub fn real(re: BigRational) -> Self {
        Self { re, im: BigRational::zero() }
    }

    pub fn complex(re: BigRational, im: BigRational) -> Self {
        Self { re, im }
    }

    /// Exact conversion of a finite double; `None` for NaN or infinities.
    pub fn from_f64(v: f64) -> Option<Self> {
        BigRational::from_float(v).map(Self::real)
    }

    pub fn from_c64(v: Complex64) -> Option<Self> {
        Some(Self { re: BigRational::from_float(v.re)?, im: BigRational::from_float(v.im)? })
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.re.is_one() && self.im.is_zero()
    }

    pub fn is_real(&self) -> bool {
        self.im.is_zero()
    }

    pub fn as_integer(&self) -> Option<i64> {
        if self.is_real() && self.re.is_integer() {
            self.re.to_integer().to_i64()
        } else {
            None
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { re: &self.re + &o.re, im: &self.im + &o.im }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self { re: &self.re - &o.re, im: &self.im - &o.im }
    }

    pub fn mul(&self, o: &Self) -> Self {
        if self.im.is_zero() && o.im.is_zero() {
            return Self::real(&self.re * &o.re);
        }
        Self {
            re: &self.re * &o.re - &self.im * &o.im,
            im: &self.re * &o.im + &self.im * &o.re,
        }
    }

    pub fn neg(&self) -> Self {
        Self { re: -&self.re, im: -&self.im }
    }

    /// `None` when dividing by zero.
    pub fn recip(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        if self.im.is_zero() {
            return Some(Self::real(self.re.recip()));
        }
        let n = &self.re * &self.re + &self.im * &self.im;
        Some(Self { re: &self.re / &n, im: -&self.im / &n })
    }

    pub fn div(&self, o: &Self) -> Option<Self> {
        o.recip().map(|r| self.mul(&r))
    }

    /// Integer power; `None` for a negative power of zero.
    pub fn powi(&self, e: i64) -> Option<Self> {
        let base = if e < 0 { self.recip()? } else { self.clone() };
        let mut n = e.unsigned_abs();
        let mut acc = Self::one();
        let mut b = base;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&b);
            }
            b = b.mul(&b);
            n >>= 1;
        }
        Some(acc)
    }

    pub fn to_c64(&self) -> Complex64 {
        Complex64::new(self.re.to_f64().unwrap_or(f64::NAN), self.im.to_f64().unwrap_or(f64::NAN))
    }

    /// Exact square root for non-negative rational perfect squares.
    pub fn exact_sqrt(&self) -> Option<Self> {
        if !self.is_real() || self.re.is_negative() {
            return None;
        }
        let n = self.re.numer().sqrt();
        let d = self.re.denom().sqrt();
        if &(&n * &n) == self.re.numer() && &(&d * &d) == self.re.denom() {
            Some(Self::real(BigRational::new(n, d)))
        } else {
            None
        }
    }

    /// True when the printed form needs parentheses as a factor.
    pub(crate) fn is_compound(&self) -> bool {
        !self.im.is_zero() && !self.re.is_zero()
    }

    pub(crate) fn is_negative_real(&self) -> bool {
        self.im.is_zero() && self.re.is_negative()
    }
}

fn fmt_rat(r: &BigRational, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if r.is_integer() {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for ExactNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.is_zero() {
            return fmt_rat(&self.re, f);
        }
        let im_abs = self.im.abs();
        let im_part = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if im_abs.is_one() {
                write!(f, "i")
            } else {
                fmt_rat(&im_abs, f)?;
                write!(f, "*i")
            }
        };
        if self.re.is_zero() {
            if self.im.is_negative() {
                write!(f, "-")?;
            }
            return im_part(f);
        }
        fmt_rat(&self.re, f)?;
        write!(f, "{}", if self.im.is_negative() { " - " } else { " + " })?;
        im_part(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_arithmetic_is_exact() {
        let a = ExactNum::complex(BigRational::new(1.into(), 2.into()), BigRational::one());
        let b = a.recip().unwrap();
        assert!(a.mul(&b).is_one());
        assert_eq!(ExactNum::i().mul(&ExactNum::i()), ExactNum::int(-1));
    }

    #[test]
    fn powers_and_roots() {
        assert_eq!(ExactNum::int(2).powi(-3).unwrap(), ExactNum::ratio(1, 8));
        assert_eq!(ExactNum::ratio(9, 4).exact_sqrt().unwrap(), ExactNum::ratio(3, 2));
        assert!(ExactNum::int(2).exact_sqrt().is_none());
        assert!(ExactNum::zero().powi(-1).is_none());
    }

    #[test]
    fn display() {
        assert_eq!(ExactNum::ratio(-3, 2).to_string(), "-3/2");
        assert_eq!(ExactNum::i().neg().to_string(), "-i");
        let z = ExactNum::complex(BigRational::one(), BigRational::new((-1).into(), 2.into()));
        assert_eq!(z.to_string(), "1 - 1/2*i");
    }
}
