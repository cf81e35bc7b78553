//! Forward-mode automatic differentiation used by the observability module.
//!
//! Two number types are provided on top of the [`Scalar`] trait:
//!
//! * [`Dual`] carries a value and a dense gradient with respect to `N` seeds.
//! * [`Taylor`] carries the first `K` Taylor coefficients of a function of time.
//!
//! Nesting them (`Taylor<Dual<N>, K>`) propagates the time expansion of a flow
//! together with its gradient with respect to the initial state, which is how
//! Lie derivatives and their state gradients are obtained without nested finite
//! differences.

use std::ops::{Add, Mul, Neg, Sub};

/// Ring operations needed by polynomial vector fields and output maps.
pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    /// Embeds a constant.
    fn cst(v: f64) -> Self;
    /// Multiplies by a plain constant.
    fn scale(self, k: f64) -> Self;
    /// Primal value (the order-0, value part).
    fn primal(&self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
    #[inline]
    fn primal(&self) -> f64 {
        *self
    }
}

/// Value with a gradient over `N` seed directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, g: [0.0; N] }
    }

    /// Seeds variable `i` (gradient is the unit vector `e_i`).
    pub fn variable(v: f64, i: usize) -> Self {
        let mut g = [0.0; N];
        g[i] = 1.0;
        Self { v, g }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut g = self.g;
        for (a, b) in g.iter_mut().zip(o.g.iter()) {
            *a += b;
        }
        Self { v: self.v + o.v, g }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut g = self.g;
        for (a, b) in g.iter_mut().zip(o.g.iter()) {
            *a -= b;
        }
        Self { v: self.v - o.v, g }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut g = [0.0; N];
        for i in 0..N {
            g[i] = self.g[i] * o.v + self.v * o.g[i];
        }
        Self { v: self.v * o.v, g }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut g = self.g;
        g.iter_mut().for_each(|a| *a = -*a);
        Self { v: -self.v, g }
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        let mut g = self.g;
        g.iter_mut().for_each(|a| *a *= k);
        Self { v: self.v * k, g }
    }
    #[inline]
    fn primal(&self) -> f64 {
        self.v
    }
}

/// Truncated Taylor series `Σ_{k<K} c_k t^k` with coefficients in `T`.
#[derive(Clone, Copy, Debug)]
pub struct Taylor<T: Scalar, const K: usize> {
    pub c: [T; K],
}

impl<T: Scalar, const K: usize> Taylor<T, K> {
    pub fn constant(v: T) -> Self {
        let mut c = [T::cst(0.0); K];
        c[0] = v;
        Self { c }
    }
}

impl<T: Scalar, const K: usize> Add for Taylor<T, K> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self {
            c: std::array::from_fn(|k| self.c[k] + o.c[k]),
        }
    }
}

impl<T: Scalar, const K: usize> Sub for Taylor<T, K> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self {
            c: std::array::from_fn(|k| self.c[k] - o.c[k]),
        }
    }
}

impl<T: Scalar, const K: usize> Mul for Taylor<T, K> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        // Cauchy product truncated at order K-1.
        Self {
            c: std::array::from_fn(|k| {
                let mut acc = self.c[0] * o.c[k];
                for i in 1..=k {
                    acc = acc + self.c[i] * o.c[k - i];
                }
                acc
            }),
        }
    }
}

impl<T: Scalar, const K: usize> Neg for Taylor<T, K> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            c: std::array::from_fn(|k| -self.c[k]),
        }
    }
}

impl<T: Scalar, const K: usize> Scalar for Taylor<T, K> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        Self {
            c: std::array::from_fn(|i| self.c[i].scale(k)),
        }
    }
    #[inline]
    fn primal(&self) -> f64 {
        self.c[0].primal()
    }
}
