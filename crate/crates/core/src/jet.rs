//! Forward-mode first derivatives with respect to the real chart coordinates
//! (log|z_1|², …, log|z_n|², θ_1, …, θ_n).
//!
//! Gradients live in a fixed-size array so jets are `Copy`; this caps the
//! fibre dimension at `MAXD / 2`.

use num_complex::Complex64;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub const MAXD: usize = 8;

/// Largest supported fibre dimension.
pub const MAX_N: usize = MAXD / 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; MAXD],
}

impl Jet {
    pub const fn cst(v: f64) -> Self {
        Jet { v, g: [0.0; MAXD] }
    }

    pub fn var(v: f64, i: usize) -> Self {
        let mut g = [0.0; MAXD];
        g[i] = 1.0;
        Jet { v, g }
    }

    pub fn scale(self, a: f64) -> Self {
        let mut g = self.g;
        g.iter_mut().for_each(|x| *x *= a);
        Jet { v: self.v * a, g }
    }

    fn chain(self, v: f64, d: f64) -> Self {
        let mut g = self.g;
        g.iter_mut().for_each(|x| *x *= d);
        Jet { v, g }
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }

    pub fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r)
    }

    pub fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r)
    }

    pub fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }

    pub fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }

    /// Gradient restricted to the first `d` slots.
    pub fn grad(&self, d: usize) -> &[f64] {
        &self.g[..d]
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        self.v += o.v;
        for (a, b) in self.g.iter_mut().zip(o.g.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, o: Jet) -> Jet {
        self.v -= o.v;
        for (a, b) in self.g.iter_mut().zip(o.g.iter()) {
            *a -= b;
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut g = [0.0; MAXD];
        for i in 0..MAXD {
            g[i] = self.g[i] * o.v + self.v * o.g[i];
        }
        Jet { v: self.v * o.v, g }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, o: f64) -> Jet {
        self.v += o;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, o: f64) -> Jet {
        self.v -= o;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, o: f64) -> Jet {
        self.scale(o)
    }
}

/// Complex-valued jet: real and imaginary parts carry real gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CJet {
    pub re: Jet,
    pub im: Jet,
}

impl CJet {
    pub const fn cst(z: Complex64) -> Self {
        CJet {
            re: Jet::cst(z.re),
            im: Jet::cst(z.im),
        }
    }

    pub fn new(re: Jet, im: Jet) -> Self {
        CJet { re, im }
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.v, self.im.v)
    }

    /// Derivative along coordinate `i` as a complex number.
    pub fn d(&self, i: usize) -> Complex64 {
        Complex64::new(self.re.g[i], self.im.g[i])
    }

    pub fn from_parts(v: Complex64, g: &[Complex64]) -> Self {
        let mut re = Jet::cst(v.re);
        let mut im = Jet::cst(v.im);
        for (i, gi) in g.iter().enumerate() {
            re.g[i] = gi.re;
            im.g[i] = gi.im;
        }
        CJet { re, im }
    }

    pub fn scale(self, a: Complex64) -> Self {
        CJet {
            re: self.re * a.re - self.im * a.im,
            im: self.re * a.im + self.im * a.re,
        }
    }

    /// exp(a + ib) = e^a (cos b + i sin b).
    pub fn exp(self) -> Self {
        let e = self.re.exp();
        CJet {
            re: e * self.im.cos(),
            im: e * self.im.sin(),
        }
    }

    /// Principal logarithm; the gradient is dz/z and ignores the branch.
    pub fn ln(self) -> Self {
        let z = self.value();
        let l = z.ln();
        let inv = 1.0 / z;
        let mut out = CJet::cst(l);
        for i in 0..MAXD {
            let d = self.d(i) * inv;
            out.re.g[i] = d.re;
            out.im.g[i] = d.im;
        }
        out
    }

    pub fn norm_sqr(self) -> Jet {
        self.re * self.re + self.im * self.im
    }
}

impl Add for CJet {
    type Output = CJet;
    fn add(self, o: CJet) -> CJet {
        CJet {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }
}

impl Sub for CJet {
    type Output = CJet;
    fn sub(self, o: CJet) -> CJet {
        CJet {
            re: self.re - o.re,
            im: self.im - o.im,
        }
    }
}

impl Mul for CJet {
    type Output = CJet;
    fn mul(self, o: CJet) -> CJet {
        CJet {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

impl Div for CJet {
    type Output = CJet;
    fn div(self, o: CJet) -> CJet {
        let den = o.norm_sqr().recip();
        CJet {
            re: (self.re * o.re + self.im * o.im) * den,
            im: (self.im * o.re - self.re * o.im) * den,
        }
    }
}
