//! Second-order forward-mode derivatives over a small, fixed set of
//! variables.
//!
//! Contact kernels work on stencils of at most three 2D points (six scalar
//! coordinates); carrying the full gradient and Hessian through the few
//! arithmetic operations of a distance or tangent computation is cheaper and
//! far less error-prone than hand-expanding every chain rule.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            g: [0.0; N],
            h: [[0.0; N]; N],
        }
    }

    /// The `i`-th independent variable with value `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut j = Self::constant(v);
        j.g[i] = 1.0;
        j
    }

    /// Applies a scalar function given its value and first two derivatives at `self.v`.
    pub fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        let mut out = Self::constant(f);
        for a in 0..N {
            out.g[a] = df * self.g[a];
            for b in 0..N {
                out.h[a][b] = df * self.h[a][b] + d2f * self.g[a] * self.g[b];
            }
        }
        out
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn ln(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(self.v.ln(), r, -r * r)
    }

    pub fn scale(self, s: f64) -> Self {
        let mut out = self;
        out.v *= s;
        for a in 0..N {
            out.g[a] *= s;
            for b in 0..N {
                out.h[a][b] *= s;
            }
        }
        out
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut out = self;
        out.v += o.v;
        for a in 0..N {
            out.g[a] += o.g[a];
            for b in 0..N {
                out.h[a][b] += o.h[a][b];
            }
        }
        out
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = Self::constant(self.v * o.v);
        for a in 0..N {
            out.g[a] = self.g[a] * o.v + o.g[a] * self.v;
            for b in 0..N {
                out.h[a][b] = self.h[a][b] * o.v
                    + o.h[a][b] * self.v
                    + self.g[a] * o.g[b]
                    + o.g[a] * self.g[b];
            }
        }
        out
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        self.scale(s)
    }
}

/// A 2D point whose coordinates are jets.
#[derive(Clone, Copy, Debug)]
pub struct JetVec2<const N: usize> {
    pub x: Jet<N>,
    pub y: Jet<N>,
}

impl<const N: usize> JetVec2<N> {
    /// Point whose coordinates are variables `2 * slot` and `2 * slot + 1`.
    pub fn var(p: [f64; 2], slot: usize) -> Self {
        Self {
            x: Jet::var(p[0], 2 * slot),
            y: Jet::var(p[1], 2 * slot + 1),
        }
    }

    pub fn dot(self, o: Self) -> Jet<N> {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> Jet<N> {
        self.x * o.y - self.y * o.x
    }

    pub fn scale(self, s: Jet<N>) -> Self {
        Self {
            x: self.x * s,
            y: self.y * s,
        }
    }

    pub fn perp(self) -> Self {
        Self {
            x: -self.y,
            y: self.x,
        }
    }
}

impl<const N: usize> Sub for JetVec2<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            x: self.x - o.x,
            y: self.y - o.y,
        }
    }
}
