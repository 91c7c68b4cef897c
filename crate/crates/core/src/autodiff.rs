//! Forward-mode dual numbers used by the element kernels.
//!
//! Element forces are written once, generically over [`Real`]. Evaluating
//! them with `f64` gives forces, with `Dual<f64, N>` gives a local Jacobian,
//! and with the nested `Dual<Dual<f64, M>, 1>` gives the parameter and
//! position gradients of a Jacobian-vector product, which is what the
//! reverse sweep through the implicit solve needs.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar interface shared by `f64` and the dual types.
pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign<f64>
{
    /// A constant (zero tangent).
    fn cst(v: f64) -> Self;
    /// Primal value.
    fn re(&self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// `self.atan2(x)` is the angle of the point `(x, self)`.
    fn atan2(self, x: Self) -> Self;
    /// Drops the outermost tangent, keeping the value (and, for nested
    /// duals, the inner derivatives of the value).
    fn detach(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Real for f64 {
    #[inline(always)]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn re(&self) -> f64 {
        *self
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline(always)]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline(always)]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    #[inline(always)]
    fn detach(self) -> Self {
        self
    }
}

/// Dual number with `N` tangent directions over the scalar `T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T, const N: usize> {
    pub re: T,
    pub eps: [T; N],
}

impl<T: Real, const N: usize> Dual<T, N> {
    #[inline(always)]
    pub fn new(re: T, eps: [T; N]) -> Self {
        Self { re, eps }
    }

    /// Independent variable seeded along direction `dir`.
    #[inline(always)]
    pub fn var(re: T, dir: usize) -> Self {
        let mut eps = [T::zero(); N];
        eps[dir] = T::cst(1.0);
        Self { re, eps }
    }

    /// Value with an explicit tangent in the first direction only.
    #[inline(always)]
    pub fn with_tangent(re: T, tangent: T) -> Self {
        let mut eps = [T::zero(); N];
        if N > 0 {
            eps[0] = tangent;
        }
        Self { re, eps }
    }

    #[inline(always)]
    fn chain(self, re: T, deriv: T) -> Self {
        Self {
            re,
            eps: self.eps.map(|e| e * deriv),
        }
    }
}

impl<T: Real, const N: usize> Real for Dual<T, N> {
    #[inline(always)]
    fn cst(v: f64) -> Self {
        Self {
            re: T::cst(v),
            eps: [T::zero(); N],
        }
    }
    #[inline(always)]
    fn re(&self) -> f64 {
        self.re.re()
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        let d = T::cst(0.5) / r;
        self.chain(r, d)
    }
    #[inline(always)]
    fn sin(self) -> Self {
        let (s, c) = (self.re.sin(), self.re.cos());
        self.chain(s, c)
    }
    #[inline(always)]
    fn cos(self) -> Self {
        let (s, c) = (self.re.sin(), self.re.cos());
        self.chain(c, -s)
    }
    #[inline(always)]
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        let d = T::cst(1.0) / self.re;
        self.chain(self.re.ln(), d)
    }
    #[inline(always)]
    fn atan2(self, x: Self) -> Self {
        let re = self.re.atan2(x.re);
        let inv = T::cst(1.0) / (x.re * x.re + self.re * self.re);
        let (a, b) = (x.re * inv, self.re * inv);
        let mut eps = [T::zero(); N];
        for i in 0..N {
            eps[i] = a * self.eps[i] - b * x.eps[i];
        }
        Self { re, eps }
    }
    #[inline(always)]
    fn detach(self) -> Self {
        Self {
            re: self.re,
            eps: [T::zero(); N],
        }
    }
}

impl<T: Real, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline(always)]
    fn add(self, o: Self) -> Self {
        let mut eps = self.eps;
        for i in 0..N {
            eps[i] += o.eps[i];
        }
        Self {
            re: self.re + o.re,
            eps,
        }
    }
}

impl<T: Real, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline(always)]
    fn sub(self, o: Self) -> Self {
        let mut eps = self.eps;
        for i in 0..N {
            eps[i] -= o.eps[i];
        }
        Self {
            re: self.re - o.re,
            eps,
        }
    }
}

impl<T: Real, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline(always)]
    fn mul(self, o: Self) -> Self {
        let mut eps = [T::zero(); N];
        for i in 0..N {
            eps[i] = self.re * o.eps[i] + self.eps[i] * o.re;
        }
        Self {
            re: self.re * o.re,
            eps,
        }
    }
}

impl<T: Real, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline(always)]
    fn div(self, o: Self) -> Self {
        let inv = T::cst(1.0) / o.re;
        let re = self.re * inv;
        let mut eps = [T::zero(); N];
        for i in 0..N {
            eps[i] = (self.eps[i] - re * o.eps[i]) * inv;
        }
        Self { re, eps }
    }
}

impl<T: Real, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline(always)]
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            eps: self.eps.map(|e| -e),
        }
    }
}

impl<T: Real, const N: usize> Add<f64> for Dual<T, N> {
    type Output = Self;
    #[inline(always)]
    fn add(self, o: f64) -> Self {
        Self {
            re: self.re + o,
            eps: self.eps,
        }
    }
}

impl<T: Real, const N: usize> Sub<f64> for Dual<T, N> {
    type Output = Self;
    #[inline(always)]
    fn sub(self, o: f64) -> Self {
        Self {
            re: self.re - o,
            eps: self.eps,
        }
    }
}

impl<T: Real, const N: usize> Mul<f64> for Dual<T, N> {
    type Output = Self;
    #[inline(always)]
    fn mul(self, o: f64) -> Self {
        Self {
            re: self.re * o,
            eps: self.eps.map(|e| e * o),
        }
    }
}

impl<T: Real, const N: usize> Div<f64> for Dual<T, N> {
    type Output = Self;
    #[inline(always)]
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl<T: Real, const N: usize> AddAssign for Dual<T, N> {
    #[inline(always)]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real, const N: usize> SubAssign for Dual<T, N> {
    #[inline(always)]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real, const N: usize> MulAssign<f64> for Dual<T, N> {
    #[inline(always)]
    fn mul_assign(&mut self, o: f64) {
        *self = *self * o;
    }
}

/// Small fixed-size vector helpers over any [`Real`].
pub mod vec3 {
    use super::Real;

    pub type V3<S> = [S; 3];

    #[inline(always)]
    pub fn lift<S: Real>(v: [f64; 3]) -> V3<S> {
        [S::cst(v[0]), S::cst(v[1]), S::cst(v[2])]
    }
    #[inline(always)]
    pub fn add<S: Real>(a: V3<S>, b: V3<S>) -> V3<S> {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }
    #[inline(always)]
    pub fn sub<S: Real>(a: V3<S>, b: V3<S>) -> V3<S> {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }
    #[inline(always)]
    pub fn scale<S: Real>(a: V3<S>, s: S) -> V3<S> {
        [a[0] * s, a[1] * s, a[2] * s]
    }
    #[inline(always)]
    pub fn dot<S: Real>(a: V3<S>, b: V3<S>) -> S {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }
    #[inline(always)]
    pub fn cross<S: Real>(a: V3<S>, b: V3<S>) -> V3<S> {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }
    #[inline(always)]
    pub fn norm<S: Real>(a: V3<S>) -> S {
        dot(a, a).sqrt()
    }
}
