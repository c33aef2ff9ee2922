//! Forward-mode automatic differentiation with dual numbers.
//!
//! Every physics kernel in this crate is written against the [`Real`] trait so
//! that the same code path evaluates plain `f64` forces and their directional
//! derivatives. Evaluating a residual at `v + ε p` with [`Dual`] scalars yields
//! the Jacobian-vector product `J p` in the tangent parts, which is what the
//! matrix-free Krylov solver consumes.
//!
//! Branches in kernels must compare real parts only (see [`Real::re`]); this
//! keeps dual evaluation on the same branch as the real evaluation.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar type accepted by the physics kernels.
pub trait Real:
    Copy
    + Debug
    + Default
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + Sum
    + 'static
{
    fn from_f64(x: f64) -> Self;
    /// Real (primal) part.
    fn re(self) -> f64;
    fn sqrt(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    /// Drops any derivative information, keeping the real part.
    fn detach(self) -> Self {
        Self::from_f64(self.re())
    }
    fn abs(self) -> Self {
        if self.re() < 0.0 {
            -self
        } else {
            self
        }
    }
    /// Maximum by real part; ties go to `self`.
    fn max(self, other: Self) -> Self {
        if self.re() >= other.re() {
            self
        } else {
            other
        }
    }
    /// Minimum by real part; ties go to `self`.
    fn min(self, other: Self) -> Self {
        if self.re() <= other.re() {
            self
        } else {
            other
        }
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// A dual number `re + eps·ε` with `ε² = 0`.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    #[inline]
    pub const fn new(re: f64, eps: f64) -> Self {
        Dual { re, eps }
    }
    #[inline]
    pub const fn constant(re: f64) -> Self {
        Dual { re, eps: 0.0 }
    }
    #[inline]
    pub const fn variable(re: f64) -> Self {
        Dual { re, eps: 1.0 }
    }
}

impl Real for Dual {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Dual::constant(x)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        // At the origin the derivative only exists along a zero tangent.
        let eps = if s == 0.0 {
            if self.eps == 0.0 {
                0.0
            } else {
                f64::INFINITY * self.eps.signum()
            }
        } else {
            self.eps / (2.0 * s)
        };
        Dual::new(s, eps)
    }
    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        Dual::new(self.re.ln_1p(), self.eps / (1.0 + self.re))
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Dual::constant(1.0);
        }
        Dual::new(
            self.re.powi(n),
            n as f64 * self.re.powi(n - 1) * self.eps,
        )
    }
    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.re.cos() * self.eps)
    }
    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.re.sin() * self.eps)
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}
impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}
impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}
impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.re;
        Dual::new(self.re * inv, (self.eps * o.re - self.re * o.eps) * inv * inv)
    }
}
impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}
impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: f64) -> Dual {
        Dual::new(self.re + o, self.eps)
    }
}
impl Sub<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: f64) -> Dual {
        Dual::new(self.re - o, self.eps)
    }
}
impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: f64) -> Dual {
        Dual::new(self.re * o, self.eps * o)
    }
}
impl Div<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: f64) -> Dual {
        Dual::new(self.re / o, self.eps / o)
    }
}
impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, o: Dual) {
        *self = *self + o;
    }
}
impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, o: Dual) {
        *self = *self - o;
    }
}
impl MulAssign for Dual {
    #[inline]
    fn mul_assign(&mut self, o: Dual) {
        *self = *self * o;
    }
}
impl DivAssign for Dual {
    #[inline]
    fn div_assign(&mut self, o: Dual) {
        *self = *self / o;
    }
}
impl Sum for Dual {
    fn sum<I: Iterator<Item = Dual>>(iter: I) -> Dual {
        iter.fold(Dual::constant(0.0), |a, b| a + b)
    }
}

/// Seeds `v + ε·p` as a dual vector.
pub fn seed(v: &[f64], p: &[f64]) -> Vec<Dual> {
    assert_eq!(v.len(), p.len(), "seed: value and direction lengths differ");
    v.iter().zip(p).map(|(&a, &b)| Dual::new(a, b)).collect()
}

/// Tangent parts of a dual vector.
pub fn tangents(x: &[Dual]) -> Vec<f64> {
    x.iter().map(|d| d.eps).collect()
}

/// Jacobian-vector product `∂f/∂v · p` of a vector function written over dual scalars.
pub fn jvp<F>(f: F, v: &[f64], p: &[f64]) -> Vec<f64>
where
    F: FnOnce(&[Dual]) -> Vec<Dual>,
{
    tangents(&f(&seed(v, p)))
}

/// Fallible variant of [`jvp`].
pub fn try_jvp<F, E>(f: F, v: &[f64], p: &[f64]) -> Result<Vec<f64>, E>
where
    F: FnOnce(&[Dual]) -> Result<Vec<Dual>, E>,
{
    Ok(tangents(&f(&seed(v, p))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let a = Dual::new(2.0, 3.0);
        let b = Dual::new(5.0, 7.0);
        let c = a * b;
        assert_eq!(c.re, 10.0);
        assert_eq!(c.eps, 2.0 * 7.0 + 3.0 * 5.0);
    }

    #[test]
    fn square_jvp() {
        let out = jvp(|v| v.iter().map(|&x| x * x).collect(), &[3.0], &[1.0]);
        assert_eq!(out, vec![6.0]);
    }

    #[test]
    fn elementary_functions() {
        let x = Dual::variable(0.7);
        let h = 1e-6;
        let fd = |f: fn(f64) -> f64| (f(0.7 + h) - f(0.7 - h)) / (2.0 * h);
        assert!((x.sqrt().eps - fd(f64::sqrt)).abs() < 1e-8);
        assert!((x.ln().eps - fd(f64::ln)).abs() < 1e-8);
        assert!((x.ln_1p().eps - fd(f64::ln_1p)).abs() < 1e-8);
        assert!((x.sin().eps - fd(f64::sin)).abs() < 1e-8);
        assert!((x.cos().eps - fd(f64::cos)).abs() < 1e-8);
        assert!((x.powi(3).eps - 3.0 * 0.49).abs() < 1e-12);
        assert!(((x / Dual::constant(2.0)).eps - 0.5).abs() < 1e-15);
        assert!(((Dual::constant(1.0) / x).eps + 1.0 / 0.49).abs() < 1e-12);
    }

    #[test]
    fn sqrt_at_origin_with_zero_tangent() {
        let z = Dual::new(0.0, 0.0).sqrt();
        assert_eq!(z, Dual::new(0.0, 0.0));
    }

    #[test]
    fn min_max_ties_go_to_first_argument() {
        let a = Dual::new(1.0, 2.0);
        let b = Dual::new(1.0, -5.0);
        assert_eq!(a.max(b).eps, 2.0);
        assert_eq!(a.min(b).eps, 2.0);
        assert_eq!(b.max(a).eps, -5.0);
    }

    #[test]
    fn zero_direction_gives_zero() {
        let f = |v: &[Dual]| v.iter().map(|&x| x.powi(3) + x.sqrt()).collect::<Vec<_>>();
        assert_eq!(jvp(f, &[1.0, 2.0], &[0.0, 0.0]), vec![0.0, 0.0]);
    }
}
