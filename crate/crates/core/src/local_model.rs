//! The η-equation, the explicit model tori S_{r,c} ∩ Y_t, and the numerical
//! Lagrangian / constant-phase checks on embedded tori.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::ambient::{kahler_matrix, DefiningPolynomial, PartitionedIndex, ToricPotential};
use crate::error::{param, Error, Result};
use crate::jet::{CJet, Jet};
use crate::spectral::Grid;

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Positive root of ∏_k (c_k + η) = κ.
pub fn solve_eta(c: &[f64], kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return param(format!("kappa = {kappa} must be positive"));
    }
    if c.is_empty() || c.iter().any(|&v| !(v >= 0.0)) {
        return param("c must be a non-empty vector of non-negative reals");
    }
    let m = c.len() as f64;
    let lk = kappa.ln();
    let f = |l: f64| -> (f64, f64) {
        let e = l.exp();
        let mut v = -lk;
        let mut d = 0.0;
        for &ck in c {
            v += (ck + e).ln();
            d += e / (ck + e);
        }
        (v, d)
    };
    let a = kappa.powf(1.0 / m);
    let mut hi = a.ln();
    let lo_guess = a / c.iter().map(|&ck| 1.0 + ck / a).product::<f64>();
    let mut lo = lo_guess.ln().min(hi - 1e-3);
    let mut tries = 0;
    while f(lo).0 > 0.0 {
        lo -= 1.0 + (hi - lo);
        tries += 1;
        if tries > 200 || lo < -1400.0 {
            return Err(Error::InvalidParameter(format!(
                "no positive root: prod c = {} >= kappa = {kappa}",
                c.iter().product::<f64>()
            )));
        }
    }
    let mut l = hi;
    for _ in 0..200 {
        let (v, d) = f(l);
        if v == 0.0 {
            break;
        }
        if v > 0.0 {
            hi = l;
        } else {
            lo = l;
        }
        let mut next = l - v / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - l).abs() <= 4.0 * f64::EPSILON * l.abs().max(1.0) {
            l = next;
            break;
        }
        l = next;
    }
    let resid = |e: f64| c.iter().map(|&ck| ck + e).product::<f64>() / kappa - 1.0;
    let mut eta = l.exp();
    let mut best = resid(eta).abs();
    for _ in 0..3 {
        let r = resid(eta);
        let cand = eta - r / ((1.0 + r) * c.iter().map(|&ck| 1.0 / (ck + eta)).sum::<f64>());
        let rc = resid(cand).abs();
        if !(cand > 0.0) || rc >= best {
            break;
        }
        eta = cand;
        best = rc;
    }
    Ok(eta)
}

/// ζ = (Σ_k η/(c_k+η))^{-1}.
pub fn zeta_of(c: &[f64], eta: f64) -> f64 {
    1.0 / c.iter().map(|&ck| eta / (ck + eta)).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MuValue {
    pub mu: f64,
    /// ∂μ/∂c_k at fixed κ.
    pub dmu_dc: Vec<f64>,
    /// ∂η/∂c_k at fixed κ.
    pub deta_dc: Vec<f64>,
}

/// μ = (l+1)η − Σ c_k log(c_k+η) + Σ c_k.
///
/// The trailing Σ c_k is a c-only normalisation (invisible to ∂∂̄) that makes
/// ∂μ/∂c_k = −log(c_k+η) hold exactly at fixed κ.
pub fn mu_of(c: &[f64], eta: f64, _kappa: f64) -> MuValue {
    let m = c.len() as f64;
    let zeta = zeta_of(c, eta);
    let mu = m * eta - c.iter().map(|&ck| ck * (ck + eta).ln()).sum::<f64>() + c.iter().sum::<f64>();
    MuValue {
        mu,
        dmu_dc: c.iter().map(|&ck| -(ck + eta).ln()).collect(),
        deta_dc: c.iter().map(|&ck| -zeta * eta / (ck + eta)).collect(),
    }
}

/// (r, c, t) for one local-model torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub part: PartitionedIndex,
    /// Radii indexed like `part.outer()`.
    pub r: Vec<f64>,
    /// Offsets indexed like `part.inner()`, with c[0] = 0.
    pub c: Vec<f64>,
    pub t: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.r.len() != self.part.outer().len() {
            return param("r must have one entry per I' index");
        }
        if self.c.len() != self.part.inner().len() {
            return param("c must have one entry per I'' index");
        }
        if self.c[0] != 0.0 {
            return param("c_0 must be 0");
        }
        if self.c.windows(2).any(|w| w[1] < w[0]) {
            return param("c must be non-decreasing");
        }
        if self.r.iter().any(|&v| !(v > 0.0)) {
            return param("all r_j must be positive");
        }
        if !(self.t > 0.0) {
            return param("t must be positive");
        }
        Ok(())
    }
}

/// The hypersurface z_0⋯z_n = t·P(z̃) used to eliminate z_0.
#[derive(Clone, Debug)]
pub struct Hypersurface {
    pub poly: DefiningPolynomial,
    log_t: f64,
    implicit: bool,
}

impl Hypersurface {
    pub fn new(poly: DefiningPolynomial, t: f64) -> Self {
        let implicit = poly.depends_on(0);
        Hypersurface {
            poly,
            log_t: t.ln(),
            implicit,
        }
    }

    /// log z_0 and P at the point with log z_k = w[k-1] (k = 1..n).
    pub fn solve_w0(&self, w: &[Complex64]) -> Result<(Complex64, Complex64)> {
        let sum: Complex64 = w.iter().sum();
        let mut z: Vec<Complex64> = std::iter::once(C0).chain(w.iter().map(|v| v.exp())).collect();
        let mut p = self.poly.eval(&z);
        let mut w0 = self.log_t + p.ln() - sum;
        if self.implicit {
            let mut ok = false;
            for _ in 0..100 {
                z[0] = w0.exp();
                p = self.poly.eval(&z);
                let next = self.log_t + p.ln() - sum;
                let step = (next - w0).norm();
                w0 = next;
                if step <= 1e-15 * (1.0 + w0.norm()) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::FlowStep("fixed-point projection for z_0 did not converge".into()));
            }
            z[0] = w0.exp();
            p = self.poly.eval(&z);
        }
        if p.norm() == 0.0 {
            return Err(Error::Degenerate("p vanishes on the torus".into()));
        }
        Ok((w0, p))
    }

    /// Jets of log z_k (k = 0..n) over the chart coordinates.
    pub fn point(&self, xi: &[f64]) -> Result<PointJets> {
        let n = xi.len() / 2;
        let mut w = Vec::with_capacity(n + 1);
        w.push(CJet::cst(C0));
        for k in 0..n {
            w.push(CJet::new(Jet::var(xi[k], k).scale(0.5), Jet::var(xi[n + k], n + k)));
        }
        let wv: Vec<Complex64> = w[1..].iter().map(|j| j.value()).collect();
        let (w0, p) = self.solve_w0(&wv)?;
        let z: Vec<Complex64> = std::iter::once(w0.exp()).chain(wv.iter().map(|v| v.exp())).collect();
        let pl = self.poly.log_derivatives_raw(&z);
        let q0 = 1.0 - pl[0] / p;
        let mut g = [C0; crate::jet::MAXD];
        for k in 1..=n {
            let coef = (pl[k] / p - 1.0) / q0;
            for (i, gi) in g.iter_mut().enumerate().take(2 * n) {
                *gi += coef * w[k].d(i);
            }
        }
        w[0] = CJet::from_parts(w0, &g[..2 * n]);
        let u: Vec<Jet> = w.iter().map(|wk| wk.re.scale(2.0)).collect();
        let qk = (0..=n).map(|k| 1.0 - pl[k] / p).collect();
        Ok(PointJets { w, u, z, p, q: qk })
    }
}

/// Point of a hypersurface with first derivatives over the chart coordinates.
#[derive(Clone, Debug)]
pub struct PointJets {
    /// log z_k, k = 0..n.
    pub w: Vec<CJet>,
    /// log|z_k|², k = 0..n.
    pub u: Vec<Jet>,
    pub z: Vec<Complex64>,
    /// P at the point.
    pub p: Complex64,
    /// q_k = 1 − ∂log P/∂log z_k.
    pub q: Vec<Complex64>,
}

impl PointJets {
    /// dz_k along the chart coordinate directions: column a is ∂z̃/∂ξ_a.
    pub fn tangent_matrix(&self) -> DMatrix<Complex64> {
        let d = 2 * (self.z.len() - 1);
        DMatrix::from_fn(self.z.len(), d, |k, a| self.z[k] * self.w[k].d(a))
    }
}

/// Derived local-model quantities at a point of Y_t.
#[derive(Clone, Debug)]
pub struct ModelJets {
    pub kappa: Jet,
    pub eta: Jet,
    pub zeta: f64,
    /// D = λ_0|z_0|² − η.
    pub defect: Jet,
    /// Arg(t·p(z')).
    pub arg: Jet,
    /// Darboux y_k, k = 1..n (stored at k−1).
    pub y: Vec<Jet>,
}

/// A local model: parameters plus the potential and polynomial it is built from.
#[derive(Clone, Debug)]
pub struct LocalModel {
    pub params: ModelParams,
    pub pot: ToricPotential,
    pub poly: DefiningPolynomial,
    p_model: DefiningPolynomial,
    model_pot: ToricPotential,
    lambda: Vec<ToricPotential>,
    lambda_d: Vec<Vec<ToricPotential>>,
    lambda_dd: Vec<Vec<Vec<ToricPotential>>>,
    base_d: Vec<ToricPotential>,
    calib: Vec<f64>,
    eta_check: f64,
}

impl LocalModel {
    pub fn new(params: ModelParams, pot: ToricPotential, poly: DefiningPolynomial) -> Result<Self> {
        params.validate()?;
        let part = &params.part;
        let n = part.n();
        if pot.dim() != n + 1 || poly.dim() != n + 1 {
            return param("potential and polynomial must live on C^{n+1}");
        }
        poly.check_partition(part)?;
        let p_model = poly.model(part);
        if p_model.is_empty() {
            return param("p(0, z') vanishes identically");
        }
        let lambda: Vec<ToricPotential> = part.inner().iter().map(|&k| pot.lambda(k, part)).collect();
        let lambda_d: Vec<Vec<ToricPotential>> = lambda
            .iter()
            .map(|l| part.outer().iter().map(|&j| l.log_derivative(j)).collect())
            .collect();
        let lambda_dd = lambda_d
            .iter()
            .map(|row| {
                row.iter()
                    .map(|l| part.outer().iter().map(|&j| l.log_derivative(j)).collect())
                    .collect()
            })
            .collect();
        let base = pot.base(part);
        let base_d = part.outer().iter().map(|&j| base.log_derivative(j)).collect();
        let mut m = LocalModel {
            model_pot: pot.interpolated(0.0, part),
            params,
            pot,
            poly,
            p_model,
            lambda,
            lambda_d,
            lambda_dd,
            base_d,
            calib: vec![],
            eta_check: 0.0,
        };
        let x = m.reference_moduli();
        for (i, l) in m.lambda.iter().enumerate() {
            if !(l.eval(&x) > 0.0) {
                return param(format!("lambda_{} <= 0 at the model radii", m.params.part.inner()[i]));
            }
        }
        m.calib = (0..m.params.part.outer().len())
            .map(|jj| {
                let mut v = m.base_d[jj].eval(&x);
                for (kk, &ck) in m.params.c.iter().enumerate() {
                    v += m.lambda_d[kk][jj].eval(&x) / m.lambda[kk].eval(&x) * ck;
                }
                v
            })
            .collect();
        let lam: f64 = m.lambda.iter().map(|l| l.eval(&x)).product();
        let rr: f64 = m.params.r.iter().map(|r| r * r).product();
        m.eta_check = solve_eta(&m.params.c, lam / rr * m.params.t * m.params.t)?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.params.part.n()
    }

    pub fn part(&self) -> &PartitionedIndex {
        &self.params.part
    }

    pub fn t(&self) -> f64 {
        self.params.t
    }

    /// p(0, z').
    pub fn p_model(&self) -> &DefiningPolynomial {
        &self.p_model
    }

    /// ρ restricted to its I''-degree ≤ 1 part.
    pub fn model_potential(&self) -> &ToricPotential {
        &self.model_pot
    }

    /// Squared moduli with |z_j| = r_j on I' and zero elsewhere.
    fn reference_moduli(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n() + 1];
        for (jj, &j) in self.params.part.outer().iter().enumerate() {
            x[j] = self.params.r[jj] * self.params.r[jj];
        }
        x
    }

    /// η̌, the solution with p ≡ 1.
    pub fn eta_check(&self) -> f64 {
        self.eta_check
    }

    /// ν_k for k = 1..n (stored at k−1).
    pub fn nu(&self) -> Vec<f64> {
        let part = &self.params.part;
        (1..=self.n())
            .map(|k| {
                if let Some(i) = part.inner().iter().position(|&v| v == k) {
                    (self.eta_check + self.params.c[i]).sqrt()
                } else {
                    let j = part.outer().iter().position(|&v| v == k).unwrap();
                    self.params.r[j]
                }
            })
            .collect()
    }

    pub fn calibration(&self) -> &[f64] {
        &self.calib
    }

    /// The local model hypersurface Y_t.
    pub fn y_t(&self) -> Hypersurface {
        Hypersurface::new(self.p_model.clone(), self.params.t)
    }

    /// X_{t,s}: z_0⋯z_n = t·p(s z̃'', z').
    pub fn family(&self, s: f64) -> Hypersurface {
        Hypersurface::new(self.poly.scaled(s, &self.params.part), self.params.t)
    }

    /// Chart coordinates (log|z_k|², arg z_k)_{k=1..n} of an ambient point.
    pub fn xi_of(z: &[Complex64]) -> Vec<f64> {
        let n = z.len() - 1;
        let mut xi = vec![0.0; 2 * n];
        for k in 1..=n {
            xi[k - 1] = z[k].norm_sqr().ln();
            xi[n + k - 1] = z[k].arg();
        }
        xi
    }

    /// κ(z') = Λ(z') |t p(0,z')|² / ∏_{j∈I'} |z_j|².
    pub fn kappa(&self, z: &[Complex64]) -> f64 {
        let x: Vec<f64> = z.iter().map(|v| v.norm_sqr()).collect();
        let lam: f64 = self.lambda.iter().map(|l| l.eval(&x)).product();
        let rr: f64 = self.params.part.outer().iter().map(|&j| x[j]).product();
        lam / rr * (self.params.t * self.p_model.eval(z)).norm_sqr()
    }

    pub fn eta(&self, z: &[Complex64]) -> Result<f64> {
        solve_eta(&self.params.c, self.kappa(z))
    }

    /// Local-model quantities with jets, evaluated on the point `pt`.
    pub fn quantities(&self, pt: &PointJets) -> Result<ModelJets> {
        let part = &self.params.part;
        let n = self.n();
        let u = &pt.u;
        let x: Vec<Jet> = u.iter().map(|v| v.exp()).collect();
        let lam: Vec<Jet> = self.lambda.iter().map(|l| l.eval_jet(u)).collect();
        if lam.iter().any(|l| !(l.v > 0.0)) {
            return Err(Error::Degenerate("lambda_k <= 0".into()));
        }
        let logp = self.p_model.eval_jet(&pt.w).ln();
        let mut log_kappa = logp.re.scale(2.0) + 2.0 * self.params.t.ln();
        for l in &lam {
            log_kappa = log_kappa + l.ln();
        }
        for &j in part.outer() {
            log_kappa = log_kappa - u[j];
        }
        let kappa = log_kappa.exp();
        let eta_v = solve_eta(&self.params.c, kappa.v)?;
        let zeta = zeta_of(&self.params.c, eta_v);
        let mut eta = log_kappa.scale(zeta * eta_v);
        eta.v = eta_v;
        let defect = lam[0] * x[0] - eta;
        let mut y = vec![Jet::cst(0.0); n];
        for (kk, &k) in part.inner().iter().enumerate().skip(1) {
            y[k - 1] = lam[kk] * x[k] - lam[0] * x[0] - self.params.c[kk];
        }
        for (jj, &j) in part.outer().iter().enumerate() {
            let mut v = self.base_d[jj].eval_jet(u) - defect - self.calib[jj];
            for (kk, &k) in part.inner().iter().enumerate() {
                let ratio = self.lambda_d[kk][jj].eval_jet(u) / lam[kk];
                v = v + ratio * (lam[kk] * x[k] - eta);
            }
            y[j - 1] = v;
        }
        Ok(ModelJets {
            kappa,
            eta,
            zeta,
            defect,
            arg: logp.im,
            y,
        })
    }

    /// (log Λ)_{u_j} and (log Λ)_{u_j u_i} over j, i ∈ I'.
    fn log_lambda_derivs(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let no = self.params.part.outer().len();
        let mut g = vec![0.0; no];
        let mut h = vec![vec![0.0; no]; no];
        for kk in 0..self.lambda.len() {
            let l = self.lambda[kk].eval(x);
            let d: Vec<f64> = self.lambda_d[kk].iter().map(|p| p.eval(x)).collect();
            for a in 0..no {
                g[a] += d[a] / l;
                for b in 0..no {
                    h[a][b] += self.lambda_dd[kk][a][b].eval(x) / l - d[a] * d[b] / (l * l);
                }
            }
        }
        (g, h)
    }

    /// Coefficients of the real 1-form Im ∂ log κ: (dθ_j coefficient for j ∈ I', and
    /// the weight of dArg p(0,z')).
    pub fn im_dlog_kappa(&self, z: &[Complex64]) -> Vec<f64> {
        let x: Vec<f64> = z.iter().map(|v| v.norm_sqr()).collect();
        let (g, _) = self.log_lambda_derivs(&x);
        g.iter().map(|v| v - 1.0).collect()
    }

    /// ∂∂̄μ = η(∂∂̄ log Λ + ζ ∂log κ ⊗ ∂̄ log κ) as an (n+1)×(n+1) Hermitian matrix.
    pub fn mu_hessian(&self, z: &[Complex64]) -> Result<DMatrix<Complex64>> {
        let d = self.n() + 1;
        let x: Vec<f64> = z.iter().map(|v| v.norm_sqr()).collect();
        let eta = self.eta(z)?;
        let zeta = zeta_of(&self.params.c, eta);
        let (g, h) = self.log_lambda_derivs(&x);
        let outer = self.params.part.outer();
        let pl = self.p_model.log_derivatives(z);
        let mut a = vec![C0; d];
        for (jj, &j) in outer.iter().enumerate() {
            a[j] = (g[jj] - 1.0 + pl[j]) / z[j];
        }
        let mut m = DMatrix::from_fn(d, d, |j, k| eta * zeta * a[j] * a[k].conj());
        for (jj, &j) in outer.iter().enumerate() {
            for (kk, &k) in outer.iter().enumerate() {
                m[(j, k)] += eta * h[jj][kk] / (z[j] * z[k].conj());
            }
        }
        Ok(m)
    }

    /// Metric matrix of ω̌ = i∂∂̄(ρ_model − μ) on C^{n+1}.
    pub fn model_metric(&self, z: &[Complex64]) -> Result<DMatrix<Complex64>> {
        Ok(kahler_matrix(&self.model_pot, z) - self.mu_hessian(z)?)
    }

    /// Metric matrix of ω̃_s = i∂∂̄ρ̃_s on C^{n+1}.
    pub fn interpolated_metric(&self, z: &[Complex64], s: f64) -> Result<DMatrix<Complex64>> {
        let tor = kahler_matrix(&self.pot.interpolated(s, &self.params.part), z);
        if s >= 1.0 {
            return Ok(tor);
        }
        Ok(tor - self.mu_hessian(z)? * Complex64::new(1.0 - s, 0.0))
    }

    /// Chart coordinates of the model-torus node at angle x.
    pub fn model_xi(&self, x: &[f64]) -> Result<Vec<f64>> {
        let part = &self.params.part;
        let n = self.n();
        let mut xi = vec![0.0; 2 * n];
        xi[n..].copy_from_slice(x);
        let mut z = vec![C0; n + 1];
        for (jj, &j) in part.outer().iter().enumerate() {
            let r = self.params.r[jj];
            xi[j - 1] = (r * r).ln();
            z[j] = Complex64::from_polar(r, x[j - 1]);
        }
        let xs: Vec<f64> = z.iter().map(|v| v.norm_sqr()).collect();
        let eta = self.eta(&z)?;
        for (kk, &k) in part.inner().iter().enumerate().skip(1) {
            let l = self.lambda[kk].eval(&xs);
            if !(l > 0.0) {
                return Err(Error::Degenerate(format!("lambda_{k} <= 0 at a node")));
            }
            xi[k - 1] = ((self.params.c[kk] + eta) / l).ln();
        }
        Ok(xi)
    }

    pub fn model_torus(&self, shape: &[usize]) -> Result<FibreEmbedding> {
        if shape.len() != self.n() {
            return param("grid dimension must equal n");
        }
        let grid = Grid::new(shape)?;
        let xis = grid
            .nodes()
            .iter()
            .map(|x| self.model_xi(x))
            .collect::<Result<Vec<_>>>()?;
        FibreEmbedding::from_chart(&grid, &xis, &self.y_t())
    }
}

/// Discrete torus in C^{n+1}: per-node logarithms log z_k with a continuous
/// branch, plus the integer winding of each log z_k over the grid axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FibreEmbedding {
    pub grid_shape: Vec<usize>,
    /// logs[node][k] = log z_k.
    pub logs: Vec<Vec<Complex64>>,
    /// winding[j][k]: log z_k(x) = i Σ_j winding[j][k] x_j + periodic.
    pub winding: Vec<Vec<i64>>,
}

fn wrap(a: f64) -> f64 {
    a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor()
}

/// Predecessor of a node in row-major sweep order (None for node 0).
fn predecessor(grid: &Grid, i: usize) -> Option<(usize, usize)> {
    let m = grid.multi_index(i);
    let a = (0..m.len()).rev().find(|&a| m[a] > 0)?;
    let mut p = m.clone();
    p[a] -= 1;
    Some((grid.flat_index(&p), a))
}

/// Continuous lift of a phase field after removing a linear winding term.
pub fn unwrap_on_grid(grid: &Grid, phase: &[f64], winding: &[f64]) -> Vec<f64> {
    let lin = |i: usize| -> f64 {
        grid.node(i).iter().zip(winding).map(|(x, w)| x * w).sum()
    };
    let mut out = vec![0.0; phase.len()];
    for i in 0..phase.len() {
        let raw = phase[i] - lin(i);
        out[i] = match predecessor(grid, i) {
            None => wrap(raw),
            Some((p, _)) => out[p] + wrap(raw - out[p]),
        };
    }
    out
}

/// Integer winding of a phase field along each axis (through node 0).
pub fn phase_winding(grid: &Grid, phase: &[f64]) -> Vec<i64> {
    let d = grid.dim();
    (0..d)
        .map(|a| {
            let n = grid.shape()[a];
            let mut m = vec![0; d];
            let mut total = 0.0;
            for i in 0..n {
                let cur = grid.flat_index(&m);
                m[a] = (i + 1) % n;
                let nxt = grid.flat_index(&m);
                total += wrap(phase[nxt] - phase[cur]);
            }
            (total / (2.0 * PI)).round() as i64
        })
        .collect()
}

impl FibreEmbedding {
    /// Builds the embedding from chart coordinates; θ_k (k ≥ 1) are taken as
    /// continuous lifts of the grid angles and log z_0 comes from the hypersurface.
    pub fn from_chart(grid: &Grid, xis: &[Vec<f64>], hyp: &Hypersurface) -> Result<Self> {
        let n = grid.dim();
        let mut logs = Vec::with_capacity(xis.len());
        let mut argp = Vec::with_capacity(xis.len());
        for xi in xis {
            let w: Vec<Complex64> = (0..n).map(|k| Complex64::new(0.5 * xi[k], xi[n + k])).collect();
            let (w0, p) = hyp.solve_w0(&w)?;
            argp.push(p.arg());
            let mut row = vec![w0];
            row.extend(w);
            logs.push(row);
        }
        let wp = phase_winding(grid, &argp);
        let wpf: Vec<f64> = wp.iter().map(|&v| v as f64).collect();
        let lifted = unwrap_on_grid(grid, &argp, &wpf);
        let mut winding = vec![vec![0i64; n + 1]; n];
        for j in 0..n {
            winding[j][0] = wp[j] - 1;
            winding[j][j + 1] = 1;
        }
        for (i, row) in logs.iter_mut().enumerate() {
            // arg z_0 = Arg P − Σ θ_k with the continuous lift of Arg P
            let x = grid.node(i);
            let argp_cont = lifted[i] + x.iter().zip(&wpf).map(|(a, b)| a * b).sum::<f64>();
            let theta_sum: f64 = row[1..].iter().map(|v| v.im).sum();
            row[0].im = argp_cont - theta_sum;
        }
        Ok(FibreEmbedding {
            grid_shape: grid.shape().to_vec(),
            logs,
            winding,
        })
    }

    pub fn n(&self) -> usize {
        self.grid_shape.len()
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(&self.grid_shape)
    }

    pub fn points(&self) -> Vec<Vec<Complex64>> {
        self.logs.iter().map(|r| r.iter().map(|w| w.exp()).collect()).collect()
    }

    /// Chart coordinates (log|z_k|², θ_k) per node.
    pub fn chart_coords(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        self.logs
            .iter()
            .map(|r| {
                let mut xi = vec![0.0; 2 * n];
                for k in 1..=n {
                    xi[k - 1] = 2.0 * r[k].re;
                    xi[n + k - 1] = r[k].im;
                }
                xi
            })
            .collect()
    }

    /// Periodic part of log z_k over the grid.
    pub fn periodic_part(&self, grid: &Grid, k: usize) -> Vec<Complex64> {
        (0..self.logs.len())
            .map(|i| {
                let x = grid.node(i);
                let lin: f64 = (0..self.n()).map(|j| self.winding[j][k] as f64 * x[j]).sum();
                self.logs[i][k] - Complex64::new(0.0, lin)
            })
            .collect()
    }

    /// d[j][node][k] = ∂ log z_k / ∂x_j by spectral differentiation plus winding.
    pub fn log_derivatives(&self) -> Result<Vec<Vec<Vec<Complex64>>>> {
        let grid = self.grid()?;
        let n = self.n();
        let per: Vec<Vec<Complex64>> = (0..=n).map(|k| self.periodic_part(&grid, k)).collect();
        let mut out = vec![vec![vec![C0; n + 1]; self.logs.len()]; n];
        for j in 0..n {
            for (k, pk) in per.iter().enumerate() {
                let d = grid.diff_complex(pk, j);
                for (i, v) in d.iter().enumerate() {
                    out[j][i][k] = v + Complex64::new(0.0, self.winding[j][k] as f64);
                }
            }
        }
        Ok(out)
    }

    /// Largest jump (mod nothing) of the periodic parts between grid neighbours.
    pub fn max_periodic_jump(&self) -> Result<f64> {
        let grid = self.grid()?;
        let mut worst: f64 = 0.0;
        for k in 0..=self.n() {
            let p = self.periodic_part(&grid, k);
            for i in 0..p.len() {
                if let Some((q, _)) = predecessor(&grid, i) {
                    worst = worst.max((p[i].im - p[q].im).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// A real 2-form on C^{n+1} evaluated on pairs of ambient tangent vectors
/// (given by their dz components).
pub trait TwoForm: Sync {
    fn eval(&self, z: &[Complex64], u: &[Complex64], v: &[Complex64]) -> Result<f64>;
}

/// ω(u,v) = −2 Im(uᵀ G v̄) for ω = i Σ g_{jk̄} dz_j ∧ dz̄_k.
pub fn hermitian_pairing(g: &DMatrix<Complex64>, u: &[Complex64], v: &[Complex64]) -> f64 {
    let mut a = C0;
    for j in 0..u.len() {
        for k in 0..v.len() {
            a += g[(j, k)] * u[j] * v[k].conj();
        }
    }
    -2.0 * a.im
}

/// i∂∂̄ρ for a toric potential.
pub struct PotentialForm<'a>(pub &'a ToricPotential);

impl TwoForm for PotentialForm<'_> {
    fn eval(&self, z: &[Complex64], u: &[Complex64], v: &[Complex64]) -> Result<f64> {
        Ok(hermitian_pairing(&kahler_matrix(self.0, z), u, v))
    }
}

/// ω̌ = i∂∂̄(ρ_model − μ).
pub struct ModelForm<'a>(pub &'a LocalModel);

impl TwoForm for ModelForm<'_> {
    fn eval(&self, z: &[Complex64], u: &[Complex64], v: &[Complex64]) -> Result<f64> {
        Ok(hermitian_pairing(&self.0.model_metric(z)?, u, v))
    }
}

/// Tangent vectors ∂z̃/∂x_j at every node (j-major).
pub fn tangent_vectors(emb: &FibreEmbedding) -> Result<Vec<Vec<Vec<Complex64>>>> {
    let d = emb.log_derivatives()?;
    let pts = emb.points();
    Ok((0..emb.logs.len())
        .map(|i| {
            (0..emb.n())
                .map(|j| pts[i].iter().enumerate().map(|(k, z)| z * d[j][i][k]).collect())
                .collect()
        })
        .collect())
}

/// sup over nodes and coordinate pairs of |form(e_i, e_j)|.
pub fn lagrangian_residual(emb: &FibreEmbedding, form: &dyn TwoForm) -> Result<f64> {
    let tv = tangent_vectors(emb)?;
    let pts = emb.points();
    let n = emb.n();
    let mut worst: f64 = 0.0;
    for (i, e) in tv.iter().enumerate() {
        for a in 0..n {
            for b in a + 1..n {
                worst = worst.max(form.eval(&pts[i], &e[a], &e[b])?.abs());
            }
        }
    }
    Ok(worst)
}

/// Continuous phase of −det[∂log z_k/∂x_j]/q_0 at every node, q_0 computed from `poly`.
pub fn phase_field(emb: &FibreEmbedding, poly: &DefiningPolynomial) -> Result<Vec<f64>> {
    let grid = emb.grid()?;
    let n = emb.n();
    let d = emb.log_derivatives()?;
    let pts = emb.points();
    let mut raw = Vec::with_capacity(emb.logs.len());
    for i in 0..emb.logs.len() {
        let j = DMatrix::from_fn(n, n, |k, jj| d[jj][i][k + 1]);
        let det = j.determinant();
        if det.norm() < 1e-12 {
            return Err(Error::Degenerate(format!("frame determinant {:e} at node {i}", det.norm())));
        }
        let p = poly.eval(&pts[i]);
        let q0 = 1.0 - poly.log_derivatives_raw(&pts[i])[0] / p;
        raw.push((-det / q0).arg());
    }
    Ok(unwrap_on_grid(&grid, &raw, &vec![0.0; n]))
}

/// sup − inf of the phase of Ω restricted to the torus.
pub fn phase_residual(emb: &FibreEmbedding, poly: &DefiningPolynomial) -> Result<f64> {
    let ph = phase_field(emb, poly)?;
    let max = ph.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ph.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::hypersurface_residual;
    use crate::ambient::FamilyParams;

    fn desk(c1: f64, p: DefiningPolynomial) -> LocalModel {
        let part = PartitionedIndex::new(2, &[0, 1]).unwrap();
        let params = ModelParams {
            part,
            r: vec![1.0],
            c: vec![0.0, c1],
            t: 0.01,
        };
        LocalModel::new(params, ToricPotential::flat(2), p).unwrap()
    }

    fn p_desk() -> DefiningPolynomial {
        DefiningPolynomial::new(
            3,
            vec![(vec![0, 0, 0], Complex64::new(2.0, 0.0)), (vec![0, 0, 1], Complex64::new(1.0, 0.0))],
        )
        .unwrap()
    }

    fn bisect(c: &[f64], kappa: f64) -> f64 {
        let m = c.len() as f64;
        let (mut lo, mut hi) = (0.0, kappa.powf(1.0 / m));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if c.iter().map(|ck| ck + mid).product::<f64>() > kappa {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn eta_closed_forms() {
        assert!((solve_eta(&[0.0, 0.0], 9e-4).unwrap() - 0.03).abs() < 1e-15);
        let q = (-0.05 + 0.0061f64.sqrt()) / 2.0;
        assert!((solve_eta(&[0.0, 0.05], 9e-4).unwrap() - q).abs() < 1e-16);
        assert!((solve_eta(&[0.0, 0.0, 0.0], 8e-6).unwrap() - 0.02).abs() < 1e-15);
        let c = [0.0, 0.1, 0.3];
        let e = solve_eta(&c, 1e-3).unwrap();
        assert!((e - bisect(&c, 1e-3)).abs() < 1e-15);
        assert!(solve_eta(&c, 0.0).is_err());
        assert!(solve_eta(&c, -1.0).is_err());
    }

    #[test]
    fn zeta_and_mu_values() {
        assert_eq!(zeta_of(&[0.0, 0.0], 0.7), 0.5);
        assert!((zeta_of(&[0.0, 0.05], 0.0140512) - 0.820093).abs() < 1e-6);
        assert!((zeta_of(&[0.0, 10.0], 9e-5) - 0.999991).abs() < 1e-6);
        let m = mu_of(&[0.0, 0.0], 0.03, 9e-4);
        assert!((m.mu - 0.06).abs() < 1e-15);
        assert!((m.dmu_dc[0] + 0.03f64.ln()).abs() < 1e-15);
        let m = mu_of(&[0.0, 0.05], 0.0140512, 9e-4);
        assert!((m.mu - 0.215506).abs() < 1e-6);
        assert!((m.dmu_dc[1] - 2.74807).abs() < 1e-5);
    }

    #[test]
    fn mu_gradient_matches_central_differences() {
        let c = vec![0.0, 0.02, 0.07];
        let kappa = 3e-5;
        let eta = solve_eta(&c, kappa).unwrap();
        let m = mu_of(&c, eta, kappa);
        let h = 1e-6;
        for k in 1..3 {
            let mut cp = c.clone();
            let mut cm = c.clone();
            cp[k] += h;
            cm[k] -= h;
            let ep = solve_eta(&cp, kappa).unwrap();
            let em = solve_eta(&cm, kappa).unwrap();
            let fd = (mu_of(&cp, ep, kappa).mu - mu_of(&cm, em, kappa).mu) / (2.0 * h);
            assert!((fd - m.dmu_dc[k]).abs() < 1e-6, "{fd} {}", m.dmu_dc[k]);
            assert!(((ep - em) / (2.0 * h) - m.deta_dc[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_p_torus_is_flat_and_exact() {
        let m = desk(0.0, DefiningPolynomial::constant(2, 2.0));
        let emb = m.model_torus(&[8, 8]).unwrap();
        for z in emb.points() {
            assert!((z[0].norm_sqr() - 0.02).abs() < 1e-15);
            assert!((z[1].norm_sqr() - 0.02).abs() < 1e-15);
        }
        assert!(lagrangian_residual(&emb, &ModelForm(&m)).unwrap() < 1e-10);
        assert!(phase_residual(&emb, &m.poly).unwrap() < 1e-10);
        assert_eq!(emb.winding, vec![vec![-1, 1, 0], vec![-1, 0, 1]]);
    }

    #[test]
    fn model_torus_tracks_per_node_eta() {
        let m = desk(0.0, p_desk());
        let grid = Grid::new(&[4, 16]).unwrap();
        let emb = m.model_torus(grid.shape()).unwrap();
        let fam = FamilyParams::new(0.01, 0.0, 0.5).unwrap();
        for (i, z) in emb.points().iter().enumerate() {
            let x2 = grid.node(i)[1];
            let pv = Complex64::new(2.0, 0.0) + Complex64::from_polar(1.0, x2);
            let eta = bisect(&[0.0, 0.0], 1e-4 * pv.norm_sqr());
            assert!((z[1].norm_sqr() - eta).abs() < 1e-14);
            assert!((z[2].norm() - 1.0).abs() < 1e-15);
            let r = hypersurface_residual(z, &fam, &m.poly, m.part());
            assert!(r.norm() <= 1e-10 * 0.01 * 3.0);
        }
        let sh = m.model_torus(&[4, 16]).unwrap();
        assert!(sh.max_periodic_jump().unwrap() < PI);
    }

    #[test]
    fn offsets_subtract() {
        let m = desk(0.05, p_desk());
        let emb = m.model_torus(&[4, 8]).unwrap();
        for z in emb.points() {
            assert!((z[1].norm_sqr() - z[0].norm_sqr() - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn model_torus_is_lagrangian_and_special() {
        let m = desk(0.01, p_desk());
        let coarse = m.model_torus(&[8, 16]).unwrap();
        let fine = m.model_torus(&[8, 32]).unwrap();
        let rc = lagrangian_residual(&coarse, &ModelForm(&m)).unwrap();
        let rf = lagrangian_residual(&fine, &ModelForm(&m)).unwrap();
        assert!(rf < 1e-6 && rf * 10.0 < rc, "{rc} {rf}");
        let pc = phase_residual(&coarse, &m.poly).unwrap();
        let pf = phase_residual(&fine, &m.poly).unwrap();
        // θ_1..θ_n are the grid angles, so the phase is exact at any resolution
        assert!(pc < 1e-13 && pf < 1e-13, "{pc} {pf}");
    }

    #[test]
    fn full_form_is_not_lagrangian_on_model_torus() {
        let part = PartitionedIndex::new(2, &[0]).unwrap();
        let params = ModelParams {
            part,
            r: vec![0.8, 1.0],
            c: vec![0.0],
            t: 0.01,
        };
        let m = LocalModel::new(params, ToricPotential::flat(2), p_desk()).unwrap();
        let emb = m.model_torus(&[16, 16]).unwrap();
        let model = lagrangian_residual(&emb, &ModelForm(&m)).unwrap();
        let full = lagrangian_residual(&emb, &PotentialForm(&m.pot)).unwrap();
        assert!(full > 100.0 * model, "{full:e} {model:e}");
    }

    #[test]
    fn perturbed_torus_has_phase_defect() {
        let m = desk(0.0, p_desk());
        let mut emb = m.model_torus(&[8, 16]).unwrap();
        let grid = emb.grid().unwrap();
        for i in 0..emb.logs.len() {
            let x2 = grid.node(i)[1];
            emb.logs[i][2].re += (1.0 + 0.01 * x2.cos()).ln();
        }
        assert!(phase_residual(&emb, &m.poly).unwrap() > 1e-3);
    }

    #[test]
    fn darboux_coordinates_vanish_on_model_torus() {
        let m = desk(0.03, p_desk());
        let grid = Grid::new(&[4, 8]).unwrap();
        for x in grid.nodes() {
            let xi = m.model_xi(&x).unwrap();
            let q = m.quantities(&m.y_t().point(&xi).unwrap()).unwrap();
            for y in &q.y {
                assert!(y.v.abs() < 1e-15);
            }
            assert!(q.defect.v.abs() < 1e-15);
        }
    }

    #[test]
    fn mu_hessian_matches_finite_differences() {
        let m = desk(0.02, p_desk());
        let z = vec![
            Complex64::new(0.0, 0.0),
            Complex64::from_polar(0.2, 0.4),
            Complex64::from_polar(0.9, 1.1),
        ];
        let mu = |z: &[Complex64]| {
            let e = m.eta(z).unwrap();
            mu_of(&m.params.c, e, 0.0).mu
        };
        let g = m.mu_hessian(&z).unwrap();
        let h = 1e-4;
        let dirs = |j: usize, imag: bool| {
            let mut v = vec![Complex64::new(0.0, 0.0); 3];
            v[j] = if imag { Complex64::new(0.0, h) } else { Complex64::new(h, 0.0) };
            v
        };
        let shift = |a: &[Complex64], b: &[Complex64]| -> Vec<Complex64> {
            z.iter().zip(a).zip(b).map(|((z, a), b)| z + a + b).collect()
        };
        let neg = |a: &[Complex64]| -> Vec<Complex64> { a.iter().map(|v| -v).collect() };
        let second = |a: &[Complex64], b: &[Complex64]| {
            (mu(&shift(a, b)) - mu(&shift(a, &neg(b))) - mu(&shift(&neg(a), b)) + mu(&shift(&neg(a), &neg(b))))
                / (4.0 * h * h)
        };
        for j in 1..3 {
            for k in 1..3 {
                let xx = second(&dirs(j, false), &dirs(k, false));
                let yy = second(&dirs(j, true), &dirs(k, true));
                let xy = second(&dirs(j, false), &dirs(k, true));
                let yx = second(&dirs(j, true), &dirs(k, false));
                let fd = Complex64::new(xx + yy, xy - yx) * 0.25;
                assert!((fd - g[(j, k)]).norm() < 1e-5 * (1.0 + g[(j, k)].norm()), "{j}{k} {fd} {}", g[(j, k)]);
            }
        }
    }
}
