//! Second-order forward-mode differentiation in four variables.
//!
//! The local energy density depends on (alpha, beta, alpha', beta') only, so a
//! fixed-size jet gives the exact cell gradient and Hessian in one pass.

use std::ops::{Add, Mul, Neg, Sub};

pub(crate) const N: usize = 4;

pub(crate) trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
    + Add<f64, Output = Self>
{
    fn sin_cos(self) -> (Self, Self);
    fn sqr(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn sin_cos(self) -> (Self, Self) {
        f64::sin_cos(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Jet {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl Jet {
    pub fn var(v: f64, i: usize) -> Jet {
        let mut g = [0.0; N];
        g[i] = 1.0;
        Jet {
            v,
            g,
            h: [[0.0; N]; N],
        }
    }

    /// Chain rule for a scalar function with derivatives `d1`, `d2` at `self.v`.
    fn apply(self, f: f64, d1: f64, d2: f64) -> Jet {
        let mut g = [0.0; N];
        let mut h = [[0.0; N]; N];
        for i in 0..N {
            g[i] = d1 * self.g[i];
            for j in 0..N {
                h[i][j] = d1 * self.h[i][j] + d2 * self.g[i] * self.g[j];
            }
        }
        Jet { v: f, g, h }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        self.v += o.v;
        for i in 0..N {
            self.g[i] += o.g[i];
            for j in 0..N {
                self.h[i][j] += o.h[i][j];
            }
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self * -1.0
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut g = [0.0; N];
        let mut h = [[0.0; N]; N];
        for i in 0..N {
            g[i] = self.v * o.g[i] + o.v * self.g[i];
            for j in 0..N {
                h[i][j] = self.v * o.h[i][j]
                    + o.v * self.h[i][j]
                    + self.g[i] * o.g[j]
                    + o.g[i] * self.g[j];
            }
        }
        Jet {
            v: self.v * o.v,
            g,
            h,
        }
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, c: f64) -> Jet {
        self.v *= c;
        for i in 0..N {
            self.g[i] *= c;
            for j in 0..N {
                self.h[i][j] *= c;
            }
        }
        self
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, c: f64) -> Jet {
        self.v += c;
        self
    }
}

impl Real for Jet {
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.v.sin_cos();
        (self.apply(s, c, -s), self.apply(c, -s, -c))
    }
}
