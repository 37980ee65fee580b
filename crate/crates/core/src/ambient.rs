//! Ambient chart C^{n+1}: index partition, toric Kähler potential, defining
//! polynomial, the hypersurface family X_{t,s} and the normal-region classifier.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{param, Result};
use crate::jet::{CJet, Jet, MAX_N};

/// Split {0,…,n} = I'' ∪ I' with 0 ∈ I''.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionedIndex {
    n: usize,
    inner: Vec<usize>,
    outer: Vec<usize>,
}

impl PartitionedIndex {
    /// `inner` is I''; I' is its complement.
    pub fn new(n: usize, inner: &[usize]) -> Result<Self> {
        if n == 0 || n > MAX_N {
            return param(format!("n = {n} must lie in 1..={MAX_N}"));
        }
        let mut seen = vec![false; n + 1];
        let mut prev = None;
        for &k in inner {
            if k > n {
                return param(format!("index {k} exceeds n = {n}"));
            }
            if let Some(p) = prev {
                if k <= p {
                    return param("I'' must be strictly increasing");
                }
            }
            prev = Some(k);
            seen[k] = true;
        }
        if inner.first() != Some(&0) {
            return param("I'' must contain 0");
        }
        let outer = (0..=n).filter(|&k| !seen[k]).collect();
        Ok(PartitionedIndex {
            n,
            inner: inner.to_vec(),
            outer,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// l with l + 1 = |I''|.
    pub fn l(&self) -> usize {
        self.inner.len() - 1
    }

    /// I''.
    pub fn inner(&self) -> &[usize] {
        &self.inner
    }

    /// I'.
    pub fn outer(&self) -> &[usize] {
        &self.outer
    }

    pub fn is_inner(&self, k: usize) -> bool {
        self.inner.contains(&k)
    }
}

/// ρ(z̃) = Σ_I ρ^I ∏_k |z_k|^{2 I_k}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToricPotential {
    dim: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl ToricPotential {
    pub fn new(dim: usize, terms: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        if terms.iter().any(|(e, _)| e.len() != dim) {
            return param("potential exponent length must equal n + 1");
        }
        let mut merged: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (e, c) in terms {
            *merged.entry(e).or_insert(0.0) += c;
        }
        Ok(ToricPotential {
            dim,
            terms: merged.into_iter().filter(|(_, c)| *c != 0.0).collect(),
        })
    }

    /// Σ_k |z_k|².
    pub fn flat(n: usize) -> Self {
        let terms = (0..=n)
            .map(|k| {
                let mut e = vec![0; n + 1];
                e[k] = 1;
                (e, 1.0)
            })
            .collect();
        ToricPotential { dim: n + 1, terms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Vec<u32>, f64)] {
        &self.terms
    }

    fn map_terms(&self, f: impl Fn(&[u32], f64) -> Option<(Vec<u32>, f64)>) -> Self {
        let mut merged: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (e, c) in &self.terms {
            if let Some((e2, c2)) = f(e, *c) {
                *merged.entry(e2).or_insert(0.0) += c2;
            }
        }
        ToricPotential {
            dim: self.dim,
            terms: merged.into_iter().filter(|(_, c)| *c != 0.0).collect(),
        }
    }

    /// Value at squared moduli X_k = |z_k|².
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product::<f64>())
            .sum()
    }

    /// Value as a jet given jets of u_k = log|z_k|².
    pub fn eval_jet(&self, u: &[Jet]) -> Jet {
        let mut acc = Jet::cst(0.0);
        for (e, c) in &self.terms {
            let mut s = Jet::cst(0.0);
            for (k, &p) in e.iter().enumerate() {
                if p != 0 {
                    s = s + u[k] * p as f64;
                }
            }
            acc = acc + s.exp() * *c;
        }
        acc
    }

    /// ∂/∂u_j with u_j = log|z_j|².
    pub fn log_derivative(&self, j: usize) -> Self {
        self.map_terms(|e, c| (e[j] != 0).then(|| (e.to_vec(), c * e[j] as f64)))
    }

    /// Value of ∂ρ/∂u_k for every k.
    pub fn log_gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|j| self.log_derivative(j).eval(x)).collect()
    }

    /// Coefficient λ_k(z') of |z_k|² (k ∈ I''), as a polynomial in the I' moduli.
    pub fn lambda(&self, k: usize, part: &PartitionedIndex) -> Self {
        self.map_terms(|e, c| {
            let ok = part.inner().iter().all(|&i| if i == k { e[i] == 1 } else { e[i] == 0 });
            ok.then(|| {
                let mut e2 = e.to_vec();
                e2[k] = 0;
                (e2, c)
            })
        })
    }

    /// ρ(0, z').
    pub fn base(&self, part: &PartitionedIndex) -> Self {
        self.map_terms(|e, c| part.inner().iter().all(|&i| e[i] == 0).then(|| (e.to_vec(), c)))
    }

    fn inner_degree(e: &[u32], part: &PartitionedIndex) -> u32 {
        part.inner().iter().map(|&i| e[i]).sum()
    }

    /// Toric part of ρ(0,z') + s^{-2}(ρ(s z̃'', z') − ρ(0,z')).
    pub fn interpolated(&self, s: f64, part: &PartitionedIndex) -> Self {
        self.map_terms(|e, c| {
            let d = Self::inner_degree(e, part);
            let f = if d <= 1 { 1.0 } else { s.powi(2 * d as i32 - 2) };
            Some((e.to_vec(), c * f))
        })
    }

    /// s-derivative of [`ToricPotential::interpolated`] (the higher-order term v_s).
    pub fn interpolated_ds(&self, s: f64, part: &PartitionedIndex) -> Self {
        self.map_terms(|e, c| {
            let d = Self::inner_degree(e, part);
            (d >= 2).then(|| {
                let p = 2 * d as i32 - 2;
                (e.to_vec(), c * p as f64 * s.powi(p - 1))
            })
        })
    }

    /// True when no term has total I''-degree ≥ 2.
    pub fn has_higher_terms(&self, part: &PartitionedIndex) -> bool {
        self.terms.iter().any(|(e, _)| Self::inner_degree(e, part) >= 2)
    }

    /// ∂ρ/∂X_j and ∂²ρ/∂X_j∂X_k.
    fn x_derivatives(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim;
        let mut g = vec![0.0; d];
        let mut h = vec![vec![0.0; d]; d];
        let powi = |v: f64, p: i64| if p == 0 { 1.0 } else { v.powi(p as i32) };
        for (e, c) in &self.terms {
            for j in 0..d {
                if e[j] == 0 {
                    continue;
                }
                let mut ej: Vec<i64> = e.iter().map(|&v| v as i64).collect();
                let cj = c * e[j] as f64;
                ej[j] -= 1;
                g[j] += cj * ej.iter().zip(x).map(|(&p, &v)| powi(v, p)).product::<f64>();
                for k in 0..d {
                    if ej[k] == 0 {
                        continue;
                    }
                    let ck = cj * ej[k] as f64;
                    let mut ejk = ej.clone();
                    ejk[k] -= 1;
                    h[j][k] += ck * ejk.iter().zip(x).map(|(&p, &v)| powi(v, p)).product::<f64>();
                }
            }
        }
        (g, h)
    }
}

/// Laurent polynomial p(z̃) = Σ_m a_m z̃^m.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefiningPolynomial {
    dim: usize,
    terms: Vec<(Vec<i32>, Complex64)>,
}

impl DefiningPolynomial {
    pub fn new(dim: usize, terms: Vec<(Vec<i32>, Complex64)>) -> Result<Self> {
        if terms.iter().any(|(e, _)| e.len() != dim) {
            return param("polynomial exponent length must equal n + 1");
        }
        let mut merged: BTreeMap<Vec<i32>, Complex64> = BTreeMap::new();
        for (e, c) in terms {
            *merged.entry(e).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        let terms: Vec<_> = merged.into_iter().filter(|(_, c)| c.norm() != 0.0).collect();
        if terms.is_empty() {
            return param("defining polynomial is identically zero");
        }
        Ok(DefiningPolynomial { dim, terms })
    }

    pub fn constant(n: usize, a: f64) -> Self {
        DefiningPolynomial {
            dim: n + 1,
            terms: vec![(vec![0; n + 1], Complex64::new(a, 0.0))],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Vec<i32>, Complex64)] {
        &self.terms
    }

    fn monomial(e: &[i32], z: &[Complex64]) -> Complex64 {
        e.iter()
            .zip(z)
            .filter(|(&p, _)| p != 0)
            .map(|(&p, v)| v.powi(p))
            .product()
    }

    pub fn eval(&self, z: &[Complex64]) -> Complex64 {
        self.terms.iter().map(|(e, c)| c * Self::monomial(e, z)).sum()
    }

    /// p_k = z_k ∂p/∂z_k.
    pub fn log_derivatives_raw(&self, z: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        for (e, c) in &self.terms {
            let m = c * Self::monomial(e, z);
            for k in 0..self.dim {
                out[k] += m * e[k] as f64;
            }
        }
        out
    }

    /// p̌_k = z_k ∂(log p)/∂z_k.
    pub fn log_derivatives(&self, z: &[Complex64]) -> Vec<Complex64> {
        let p = self.eval(z);
        self.log_derivatives_raw(z).into_iter().map(|v| v / p).collect()
    }

    /// Value as a complex jet given jets of w_k = log z_k.
    pub fn eval_jet(&self, w: &[CJet]) -> CJet {
        let mut acc = CJet::cst(Complex64::new(0.0, 0.0));
        for (e, c) in &self.terms {
            let mut s = CJet::cst(Complex64::new(0.0, 0.0));
            for (k, &p) in e.iter().enumerate() {
                if p != 0 {
                    s = s + w[k].scale(Complex64::new(p as f64, 0.0));
                }
            }
            acc = acc + s.exp().scale(*c);
        }
        acc
    }

    /// True if some monomial has a non-zero exponent at index k.
    pub fn depends_on(&self, k: usize) -> bool {
        self.terms.iter().any(|(e, _)| e[k] != 0)
    }

    fn inner_degree(e: &[i32], part: &PartitionedIndex) -> i32 {
        part.inner().iter().map(|&i| e[i]).sum()
    }

    /// Rejects negative exponents on I'' variables (p(s z̃'', z') must stay finite at s = 0).
    pub fn check_partition(&self, part: &PartitionedIndex) -> Result<()> {
        for (e, _) in &self.terms {
            if part.inner().iter().any(|&i| e[i] < 0) {
                return param(format!("monomial {e:?} has a negative exponent on an I'' variable"));
            }
        }
        Ok(())
    }

    /// p(0, z'): monomials free of I'' variables.
    pub fn model(&self, part: &PartitionedIndex) -> Self {
        let terms: Vec<_> = self
            .terms
            .iter()
            .filter(|(e, _)| part.inner().iter().all(|&i| e[i] == 0))
            .cloned()
            .collect();
        DefiningPolynomial { dim: self.dim, terms }
    }

    /// z̃ ↦ p(s z̃'', z').
    pub fn scaled(&self, s: f64, part: &PartitionedIndex) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(e, c)| {
                let d = Self::inner_degree(e, part);
                (e.clone(), c * if d == 0 { 1.0 } else { s.powi(d) })
            })
            .filter(|(_, c)| c.norm() != 0.0)
            .collect();
        DefiningPolynomial { dim: self.dim, terms }
    }

    /// z̃ ↦ ∂/∂s p(s z̃'', z').
    pub fn scaled_ds(&self, s: f64, part: &PartitionedIndex) -> Self {
        let terms = self
            .terms
            .iter()
            .filter_map(|(e, c)| {
                let d = Self::inner_degree(e, part);
                (d >= 1).then(|| (e.clone(), c * d as f64 * if d == 1 { 1.0 } else { s.powi(d - 1) }))
            })
            .filter(|(_, c)| c.norm() != 0.0)
            .collect();
        DefiningPolynomial { dim: self.dim, terms }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Family data: |t|, the interpolation parameter s, and the coefficient scale τ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    pub t: f64,
    pub s: f64,
    pub tau: f64,
}

impl FamilyParams {
    pub fn new(t: f64, s: f64, tau: f64) -> Result<Self> {
        if !(t > 0.0) {
            return param(format!("t = {t} must be positive"));
        }
        if !(0.0..=1.0).contains(&s) {
            return param(format!("s = {s} must lie in [0, 1]"));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return param(format!("tau = {tau} must lie in (0, 1)"));
        }
        Ok(FamilyParams { t, s, tau })
    }
}

/// a_m = τ^{w_m} e^{i·phase_m}.
pub fn make_coefficients<K: Ord + Clone + std::fmt::Debug>(
    weights: &BTreeMap<K, f64>,
    tau: f64,
    phases: &BTreeMap<K, f64>,
) -> Result<BTreeMap<K, Complex64>> {
    if !(tau > 0.0 && tau < 1.0) {
        return param(format!("tau = {tau} must lie in (0, 1)"));
    }
    let mut out = BTreeMap::new();
    for (m, &w) in weights {
        if !(w > 0.0) {
            return param(format!("weight of {m:?} must be positive, got {w}"));
        }
        let ph = phases.get(m).copied().unwrap_or(0.0);
        out.insert(m.clone(), Complex64::from_polar(tau.powf(w), ph));
    }
    Ok(out)
}

/// z_0⋯z_n − t·p(s z̃'', z').
pub fn hypersurface_residual(
    z: &[Complex64],
    family: &FamilyParams,
    p: &DefiningPolynomial,
    part: &PartitionedIndex,
) -> Complex64 {
    let prod: Complex64 = z.iter().product();
    prod - family.t * p.scaled(family.s, part).eval(z)
}

/// Constants of the normal-region tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionConstants {
    /// C of the refined scale-separation inequalities.
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    /// lower bound for |p(z')|
    pub c3: f64,
    pub c4: f64,
    pub epsilon_max: f64,
}

impl Default for RegionConstants {
    fn default() -> Self {
        RegionConstants {
            c: 1.0,
            c1: 0.5,
            c2: 2.0,
            c3: 1.0,
            c4: 1.0,
            epsilon_max: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub epsilon: f64,
    pub p_bounded: bool,
    pub epsilon_small: bool,
    /// ε test passed only because I' is empty.
    pub epsilon_vacuous: bool,
    pub refined_small_coords: bool,
    pub refined_large_coords: bool,
    pub in_region: bool,
    pub normal: bool,
}

pub fn classify_region(
    z: &[Complex64],
    part: &PartitionedIndex,
    p: &DefiningPolynomial,
    consts: &RegionConstants,
) -> RegionReport {
    let abs: Vec<f64> = z.iter().map(|v| v.norm()).collect();
    let pz = p.model(part).eval(z).norm();
    let p_bounded = pz >= consts.c3;
    let outer = part.outer();
    let epsilon = outer.iter().map(|&j| abs[0] / abs[j]).fold(0.0, f64::max);
    let epsilon_vacuous = outer.is_empty();
    let epsilon_small = epsilon_vacuous || epsilon <= consts.epsilon_max;
    let inner = part.inner();
    let refined_small_coords = inner[1..]
        .iter()
        .all(|&i| abs[i].powf(1.5) <= consts.c * abs[inner.get(1).copied().unwrap_or(0)]);
    let refined_large_coords = outer.iter().all(|&j| abs[j].powf(1.5) >= consts.c * abs[0]);

    let mut small: Vec<f64> = inner.iter().map(|&i| abs[i]).collect();
    small.sort_by(|a, b| a.total_cmp(b));
    let nu0 = small[0];
    let nu1 = if small.len() > 1 { small[1] } else { small[0] };
    let norm = abs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let max_inner = inner.iter().map(|&i| abs[i]).fold(0.0, f64::max);
    let min_outer = outer.iter().map(|&j| abs[j]).fold(f64::INFINITY, f64::min);
    let in_region = norm < consts.c2
        && p_bounded
        && max_inner <= min_outer
        && max_inner <= consts.c4 * nu1.powf(2.0 / 3.0)
        && min_outer >= consts.c4 * nu0.powf(2.0 / 3.0);
    RegionReport {
        epsilon,
        p_bounded,
        epsilon_small,
        epsilon_vacuous,
        refined_small_coords,
        refined_large_coords,
        in_region,
        normal: p_bounded && epsilon_small && refined_small_coords && refined_large_coords && in_region,
    }
}

/// g_{jk̄} = ∂²ρ/∂z_j∂z̄_k.
pub fn kahler_matrix(pot: &ToricPotential, z: &[Complex64]) -> DMatrix<Complex64> {
    let x: Vec<f64> = z.iter().map(|v| v.norm_sqr()).collect();
    let (g, h) = pot.x_derivatives(&x);
    let d = pot.dim();
    DMatrix::from_fn(d, d, |j, k| {
        let diag = if j == k { g[j] } else { 0.0 };
        Complex64::new(diag, 0.0) + z[j].conj() * z[k] * h[j][k]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn kahler_matrix_of_mixed_term() {
        let pot = ToricPotential::new(3, vec![(vec![1, 0, 0], 1.0), (vec![1, 1, 0], 1.0)]).unwrap();
        let g = kahler_matrix(&pot, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)]);
        assert!((g[(0, 0)] - c(2.0, 0.0)).norm() < 1e-14);
        assert!((g[(0, 1)] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((g[(1, 1)] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn partition_rejects_bad_sets() {
        assert!(PartitionedIndex::new(2, &[1, 2]).is_err());
        assert!(PartitionedIndex::new(2, &[0, 0]).is_err());
        let p = PartitionedIndex::new(2, &[0, 1]).unwrap();
        assert_eq!(p.outer(), &[2]);
        assert_eq!(p.l(), 1);
    }

    #[test]
    fn scaled_polynomial_drops_inner_terms_at_zero() {
        let part = PartitionedIndex::new(2, &[0, 1]).unwrap();
        let p = DefiningPolynomial::new(
            3,
            vec![(vec![0, 0, 0], c(2.0, 0.0)), (vec![0, 1, 0], c(1.0, 0.0)), (vec![0, 0, 1], c(1.0, 0.0))],
        )
        .unwrap();
        let z = [c(0.1, 0.0), c(0.3, 0.2), c(1.0, 0.5)];
        let p0 = p.scaled(0.0, &part).eval(&z);
        assert!((p0 - p.model(&part).eval(&z)).norm() < 1e-15);
        let h = 1e-6;
        let ds = (p.scaled(0.5 + h, &part).eval(&z) - p.scaled(0.5 - h, &part).eval(&z)) / (2.0 * h);
        assert!((ds - p.scaled_ds(0.5, &part).eval(&z)).norm() < 1e-9);
    }
}
