//! Scalar abstraction shared by the real solver and its complex-step clone.
//!
//! The right-hand side is written once, generic over [`Scalar`]. Instantiated
//! with `f64` it is the production kernel; instantiated with [`CStep`] it is the
//! complex-step oracle used to check the hand-written linearization.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
    + AddAssign
    + SubAssign
{
    fn from_f64(v: f64) -> Self;
    fn re(self) -> f64;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
}

/// Complex number for complex-step differentiation.
///
/// Division uses Smith's algorithm so that a purely real operand pair yields
/// bitwise the same real part as plain `f64` division.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct CStep {
    pub re: f64,
    pub im: f64,
}

impl CStep {
    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }
}

impl Scalar for CStep {
    #[inline]
    fn from_f64(v: f64) -> Self {
        CStep::new(v, 0.0)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
}

impl Add for CStep {
    type Output = CStep;
    #[inline]
    fn add(self, o: CStep) -> CStep {
        CStep::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for CStep {
    type Output = CStep;
    #[inline]
    fn sub(self, o: CStep) -> CStep {
        CStep::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for CStep {
    type Output = CStep;
    #[inline]
    fn mul(self, o: CStep) -> CStep {
        CStep::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

impl Mul<f64> for CStep {
    type Output = CStep;
    #[inline]
    fn mul(self, o: f64) -> CStep {
        CStep::new(self.re * o, self.im * o)
    }
}

impl Div for CStep {
    type Output = CStep;
    #[inline]
    fn div(self, o: CStep) -> CStep {
        let (a, b, c, d) = (self.re, self.im, o.re, o.im);
        if d.abs() <= c.abs() {
            let r = d / c;
            let den = c + d * r;
            CStep::new((a + b * r) / den, (b - a * r) / den)
        } else {
            let r = c / d;
            let den = c * r + d;
            CStep::new((a * r + b) / den, (b * r - a) / den)
        }
    }
}

impl Neg for CStep {
    type Output = CStep;
    #[inline]
    fn neg(self) -> CStep {
        CStep::new(-self.re, -self.im)
    }
}

impl AddAssign for CStep {
    #[inline]
    fn add_assign(&mut self, o: CStep) {
        self.re += o.re;
        self.im += o.im;
    }
}

impl SubAssign for CStep {
    #[inline]
    fn sub_assign(&mut self, o: CStep) {
        self.re -= o.re;
        self.im -= o.im;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative_is_exact() {
        let h = 1e-20;
        let x = CStep::new(3.0, h);
        let y = x * x;
        assert_eq!(y.im / h, 6.0);
    }

    #[test]
    fn real_division_is_bitwise_f64() {
        for (a, b) in [(1.0, 3.0), (0.7, -1.3e-5), (2.5e10, 7.0)] {
            let q = CStep::from_f64(a) / CStep::from_f64(b);
            assert_eq!(q.re, a / b);
            assert_eq!(q.im, 0.0);
        }
    }

    #[test]
    fn reciprocal_derivative() {
        let h = 1e-30;
        let x = CStep::new(2.0, h);
        let y = CStep::from_f64(1.0) / x;
        assert!((y.im / h + 0.25).abs() < 1e-16);
    }
}
