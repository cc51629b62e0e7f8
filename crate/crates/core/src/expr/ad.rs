//! Number types for forward-mode differentiation.
//!
//! Every elementary function is applied through [`Scalar::chain`], which takes
//! the function value and its first two derivatives at the primal point. `f64`
//! ignores the derivatives, [`Dual`] propagates one tangent and [`HyperDual`]
//! propagates two tangents plus their mixed second-order term, which is what
//! second directional derivatives and Hessian-vector products need.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    /// Applies a unary function given `f(v)`, `f'(v)` and `f''(v)`.
    fn chain(self, f: f64, d1: f64, d2: f64) -> Self;

    fn powi(self, n: i32) -> Self {
        let v = self.value();
        match n {
            0 => Self::constant(1.0),
            1 => self,
            _ => {
                let nf = n as f64;
                self.chain(v.powi(n), nf * v.powi(n - 1), nf * (nf - 1.0) * v.powi(n - 2))
            }
        }
    }

    fn powf(self, c: f64) -> Self {
        let v = self.value();
        self.chain(v.powf(c), c * v.powf(c - 1.0), c * (c - 1.0) * v.powf(c - 2.0))
    }

    fn exp(self) -> Self {
        let e = self.value().exp();
        self.chain(e, e, e)
    }

    fn ln(self) -> Self {
        let v = self.value();
        self.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
    }

    fn sin(self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.chain(s, c, -s)
    }

    fn cos(self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.chain(c, -s, -c)
    }

    fn sqrt(self) -> Self {
        let v = self.value();
        let r = v.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * v))
    }

    /// Subgradient 0 at the kink.
    fn abs(self) -> Self {
        let v = self.value();
        let s = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else if v.is_nan() {
            f64::NAN
        } else {
            0.0
        };
        self.chain(v.abs(), s, 0.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn chain(self, f: f64, _d1: f64, _d2: f64) -> Self {
        f
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Value plus one tangent component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.v * o.v, self.v * o.d + self.d * o.v)
    }
}

impl Div for Dual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Dual::new(q, (self.d - q * o.d) / o.v)
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.v, -self.d)
    }
}

impl Scalar for Dual {
    #[inline]
    fn constant(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    #[inline]
    fn chain(self, f: f64, d1: f64, _d2: f64) -> Self {
        // Skip the product when the tangent is zero so an infinite d1 at a
        // constant argument does not poison the result.
        let d = if self.d == 0.0 { 0.0 } else { d1 * self.d };
        Dual::new(f, d)
    }
}

/// Value, two independent tangents `a` and `b`, and the mixed term `ab`.
///
/// Seeding `a = h`, `b = k` yields `ab = hᵀ H k` for the Hessian `H` of the
/// evaluated function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperDual {
    pub v: f64,
    pub a: f64,
    pub b: f64,
    pub ab: f64,
}

impl HyperDual {
    pub fn new(v: f64, a: f64, b: f64, ab: f64) -> Self {
        Self { v, a, b, ab }
    }
}

impl Add for HyperDual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        HyperDual::new(self.v + o.v, self.a + o.a, self.b + o.b, self.ab + o.ab)
    }
}

impl Sub for HyperDual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        HyperDual::new(self.v - o.v, self.a - o.a, self.b - o.b, self.ab - o.ab)
    }
}

impl Mul for HyperDual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        HyperDual::new(
            self.v * o.v,
            self.v * o.a + self.a * o.v,
            self.v * o.b + self.b * o.v,
            self.v * o.ab + self.a * o.b + self.b * o.a + self.ab * o.v,
        )
    }
}

impl Div for HyperDual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let v = o.v;
        self * o.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }
}

impl Neg for HyperDual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        HyperDual::new(-self.v, -self.a, -self.b, -self.ab)
    }
}

impl Scalar for HyperDual {
    #[inline]
    fn constant(v: f64) -> Self {
        HyperDual::new(v, 0.0, 0.0, 0.0)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    #[inline]
    fn chain(self, f: f64, d1: f64, d2: f64) -> Self {
        if self.a == 0.0 && self.b == 0.0 && self.ab == 0.0 {
            return HyperDual::constant(f);
        }
        let ab = d1 * self.ab
            + if self.a == 0.0 || self.b == 0.0 {
                0.0
            } else {
                d2 * self.a * self.b
            };
        HyperDual::new(f, d1 * self.a, d1 * self.b, ab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_product_rule() {
        let x = Dual::new(2.0, 1.0);
        let y = Dual::new(5.0, 0.0);
        let p = x * y;
        assert_eq!(p, Dual::new(10.0, 5.0));
    }

    #[test]
    fn hyperdual_second_derivative_of_cube() {
        let x = HyperDual::new(2.0, 1.0, 1.0, 0.0);
        let y = x.powi(3);
        assert_eq!(y.v, 8.0);
        assert_eq!(y.a, 12.0);
        assert_eq!(y.ab, 12.0);
    }

    #[test]
    fn abs_has_zero_subgradient_at_kink() {
        let x = Dual::new(0.0, 1.0);
        assert_eq!(x.abs().d, 0.0);
    }

    #[test]
    fn division_second_order() {
        // f = 1/x at x = 2: f'' = 2/x^3 = 0.25
        let x = HyperDual::new(2.0, 1.0, 1.0, 0.0);
        let f = HyperDual::constant(1.0) / x;
        assert!((f.ab - 0.25).abs() < 1e-15);
        assert!((f.a + 0.25).abs() < 1e-15);
    }
}
