//! Uniform periodic grids on T^n, Fourier differentiation, projection and
//! trigonometric interpolation.
//!
//! Nodes are stored row-major with axis 0 slowest. For even N the Nyquist
//! mode has no well-defined odd derivative; first derivatives zero it and
//! interpolation treats it as a cosine.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{param, Result};

#[derive(Clone)]
pub struct Grid {
    shape: Vec<usize>,
    strides: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid").field("shape", &self.shape).finish()
    }
}

/// Signed wavenumber of DFT bin `m` on an `n`-point grid.
pub fn wavenumber(m: usize, n: usize) -> f64 {
    if m <= n / 2 {
        m as f64
    } else {
        m as f64 - n as f64
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn is_nyquist(m: usize, n: usize) -> bool {
    n % 2 == 0 && m == n / 2
}

impl Grid {
    pub fn new(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&n| n < 2) {
            return param(format!("grid shape {shape:?} needs every axis >= 2"));
        }
        let mut strides = vec![1; shape.len()];
        for a in (0..shape.len() - 1).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        let mut planner = FftPlanner::new();
        let fwd = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Ok(Grid {
            shape: shape.to_vec(),
            strides,
            fwd,
            inv,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.shape
            .iter()
            .zip(&self.strides)
            .map(|(&n, &s)| (flat / s) % n)
            .collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(m, s)| m * s).sum()
    }

    /// Angular coordinates of node `flat`.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.shape)
            .map(|(&m, &n)| 2.0 * PI * m as f64 / n as f64)
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    fn for_each_line(&self, data: &mut [Complex64], axis: usize, mut f: impl FnMut(&mut [Complex64])) {
        let n = self.shape[axis];
        let stride = self.strides[axis];
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for start in 0..self.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (m, v) in line.iter_mut().enumerate() {
                *v = data[start + m * stride];
            }
            f(&mut line);
            for (m, v) in line.iter().enumerate() {
                data[start + m * stride] = *v;
            }
        }
    }

    /// Unnormalized forward transform along every axis.
    pub fn fft(&self, f: &[Complex64]) -> Vec<Complex64> {
        let mut d = f.to_vec();
        for a in 0..self.dim() {
            let plan = self.fwd[a].clone();
            self.for_each_line(&mut d, a, |l| plan.process(l));
        }
        d
    }

    /// Normalized inverse of [`Grid::fft`].
    pub fn ifft(&self, f: &[Complex64]) -> Vec<Complex64> {
        let mut d = f.to_vec();
        for a in 0..self.dim() {
            let plan = self.inv[a].clone();
            self.for_each_line(&mut d, a, |l| plan.process(l));
        }
        let s = 1.0 / self.len() as f64;
        d.iter_mut().for_each(|v| *v *= s);
        d
    }

    /// Spectral derivative along `axis` of complex periodic data.
    pub fn diff_complex(&self, f: &[Complex64], axis: usize) -> Vec<Complex64> {
        let n = self.shape[axis];
        let mut d = f.to_vec();
        let fwd = self.fwd[axis].clone();
        let inv = self.inv[axis].clone();
        let scale = 1.0 / n as f64;
        self.for_each_line(&mut d, axis, |l| {
            fwd.process(l);
            for (m, v) in l.iter_mut().enumerate() {
                if is_nyquist(m, n) {
                    *v = Complex64::new(0.0, 0.0);
                } else {
                    *v *= Complex64::new(0.0, wavenumber(m, n) * scale);
                }
            }
            inv.process(l);
        });
        d
    }

    pub fn diff(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let c: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.diff_complex(&c, axis).iter().map(|v| v.re).collect()
    }

    pub fn gradient(&self, f: &[f64]) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|a| self.diff(f, a)).collect()
    }

    fn resolved_mode(&self, multi: &[usize]) -> bool {
        let zero = multi.iter().all(|&m| m == 0);
        let nyq = multi.iter().zip(&self.shape).any(|(&m, &n)| is_nyquist(m, n));
        !zero && !nyq
    }

    /// Removes the mean and every Nyquist mode.
    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        let c: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut s = self.fft(&c);
        for (i, v) in s.iter_mut().enumerate() {
            if !self.resolved_mode(&self.multi_index(i)) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        self.ifft(&s).iter().map(|v| v.re).collect()
    }

    /// Orthonormal real basis (columns) of the modes removed by `project`.
    pub fn unresolved_basis(&self) -> Vec<Vec<f64>> {
        let len = self.len();
        let mut seen = vec![false; len];
        let mut out = Vec::new();
        for i in 0..len {
            let mi = self.multi_index(i);
            if self.resolved_mode(&mi) || seen[i] {
                continue;
            }
            let conj: Vec<usize> = mi.iter().zip(&self.shape).map(|(&m, &n)| (n - m) % n).collect();
            let j = self.flat_index(&conj);
            seen[i] = true;
            seen[j] = true;
            let k: Vec<f64> = mi.iter().zip(&self.shape).map(|(&m, &n)| wavenumber(m, n)).collect();
            let phase = |node: usize| -> f64 { self.node(node).iter().zip(&k).map(|(x, k)| x * k).sum() };
            let mut c: Vec<f64> = (0..len).map(|q| phase(q).cos()).collect();
            normalize(&mut c);
            out.push(c);
            if j != i {
                let mut sv: Vec<f64> = (0..len).map(|q| phase(q).sin()).collect();
                normalize(&mut sv);
                out.push(sv);
            }
        }
        out
    }

    /// Fraction of (non-mean) spectral energy in modes with |k_j| > N_j/3
    /// along some axis.
    pub fn tail_fraction(&self, f: &[f64]) -> f64 {
        let c: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let s = self.fft(&c);
        let (mut tot, mut tail) = (0.0, 0.0);
        for (i, v) in s.iter().enumerate() {
            let mi = self.multi_index(i);
            if mi.iter().all(|&m| m == 0) {
                continue;
            }
            let e = v.norm_sqr();
            tot += e;
            let high = mi
                .iter()
                .zip(&self.shape)
                .any(|(&m, &n)| wavenumber(m, n).abs() > n as f64 / 3.0);
            if high {
                tail += e;
            }
        }
        if tot == 0.0 {
            0.0
        } else {
            tail / tot
        }
    }

    /// Dense one-dimensional first-derivative matrix on `n` points.
    pub fn diff_matrix_1d(n: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; n]; n];
        for (p, row) in m.iter_mut().enumerate() {
            for (q, v) in row.iter_mut().enumerate() {
                let mut s = 0.0;
                for k in 0..n {
                    if is_nyquist(k, n) {
                        continue;
                    }
                    let w = wavenumber(k, n);
                    let ph = 2.0 * PI * w * (p as f64 - q as f64) / n as f64;
                    s += -w * ph.sin();
                }
                *v = s / n as f64;
            }
        }
        m
    }

    pub fn interpolant(&self, f: &[Complex64]) -> Interpolant {
        Interpolant {
            shape: self.shape.clone(),
            coeffs: self.fft(f),
            grid: self.clone(),
        }
    }
}

/// Trigonometric interpolant of complex grid data.
#[derive(Clone, Debug)]
pub struct Interpolant {
    shape: Vec<usize>,
    coeffs: Vec<Complex64>,
    grid: Grid,
}

impl Interpolant {
    /// Value and gradient at an arbitrary point of T^n.
    pub fn eval(&self, x: &[f64]) -> (Complex64, Vec<Complex64>) {
        let dim = self.shape.len();
        // per-axis basis values and derivatives
        let basis: Vec<Vec<(Complex64, Complex64)>> = (0..dim)
            .map(|a| {
                let n = self.shape[a];
                (0..n)
                    .map(|m| {
                        let k = wavenumber(m, n);
                        if is_nyquist(m, n) {
                            let c = (k * x[a]).cos();
                            let s = (k * x[a]).sin();
                            (Complex64::new(c, 0.0), Complex64::new(-k * s, 0.0))
                        } else {
                            let e = Complex64::from_polar(1.0, k * x[a]);
                            (e, Complex64::new(0.0, k) * e)
                        }
                    })
                    .collect()
            })
            .collect();
        let norm = 1.0 / self.grid.len() as f64;
        let mut val = Complex64::new(0.0, 0.0);
        let mut grad = vec![Complex64::new(0.0, 0.0); dim];
        let mut d = vec![Complex64::new(0.0, 0.0); dim];
        for (i, c) in self.coeffs.iter().enumerate() {
            let mi = self.grid.multi_index(i);
            let mut b = Complex64::new(1.0, 0.0);
            for a in 0..dim {
                b *= basis[a][mi[a]].0;
            }
            val += c * b;
            for a in 0..dim {
                let mut t = Complex64::new(1.0, 0.0);
                for (bb, &m) in mi.iter().enumerate() {
                    t *= if bb == a { basis[bb][m].1 } else { basis[bb][m].0 };
                }
                d[a] = t;
            }
            for a in 0..dim {
                grad[a] += c * d[a];
            }
        }
        (val * norm, grad.into_iter().map(|g| g * norm).collect())
    }
}
