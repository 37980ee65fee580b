//! The special-Lagrangian defect F(h, s) of graph tori y = σ + dh over the
//! Darboux chart, its linearisation a^{ij}∂_i∂_j + b^i∂_i, Newton continuation
//! in s and the deformation 1-forms dx_k − df_k.

use nalgebra::{DMatrix, DVector, LU};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::ambient::{classify_region, RegionConstants};
use crate::darboux::DarbouxChart;
use crate::error::{Error, Result};
use crate::flows::{psi, FlowConfig};
use crate::local_model::{lagrangian_residual, phase_field, phase_residual, FibreEmbedding, LocalModel, PotentialForm};
use crate::spectral::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_newton: usize,
    /// Number of uniform s-steps from 0 to 1.
    pub s_steps: usize,
    pub min_ds: f64,
    pub flow: FlowConfig,
    pub ellipticity_floor: f64,
    pub tail_guard: f64,
    pub gmres_restart: usize,
    pub gmres_max_iter: usize,
    /// Relative σ-step of the finite differences that build the operator.
    pub fd_rel_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-9,
            max_newton: 8,
            s_steps: 10,
            min_ds: 1.0 / 160.0,
            flow: FlowConfig::default(),
            ellipticity_floor: 0.05,
            tail_guard: 0.1,
            gmres_restart: 30,
            gmres_max_iter: 90,
            fd_rel_step: 1e-5,
        }
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn wrap(a: f64) -> f64 {
    a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor()
}

/// Frozen linearisation of F at one graph.
pub struct LinearOperator {
    /// a[i][j][node].
    pub a: Vec<Vec<Vec<f64>>>,
    /// b[i][node] = ∂F/∂σ_i.
    pub b: Vec<Vec<f64>>,
    /// min over nodes of the smallest eigenvalue of −ν_iν_j a^{ij}.
    pub ellipticity: f64,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl std::fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearOperator").field("ellipticity", &self.ellipticity).finish()
    }
}

/// One accepted continuation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStep {
    pub s: f64,
    pub newton_steps: usize,
    pub residual: f64,
    pub sup_h: f64,
    pub krylov_fallback: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FibreSolution {
    pub grid_shape: Vec<usize>,
    pub sigma: Vec<f64>,
    pub s: f64,
    /// h at the grid nodes (zero mean).
    pub h: Vec<f64>,
    pub residual: f64,
    pub history: Vec<ContinuationStep>,
    pub ellipticity: f64,
    #[serde(skip)]
    pub embedding: FibreEmbedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub phase_residual: f64,
    pub lagrangian_residual: f64,
    pub tail_fraction: f64,
    pub sup_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationBasis {
    /// f[k][node].
    pub f: Vec<Vec<f64>>,
    pub min_diag: Vec<f64>,
    /// sup of the plug-back residual of each linear problem.
    pub residual: Vec<f64>,
}

/// Everything needed to evaluate F and solve for one fibre.
pub struct FibreContext {
    pub chart: DarbouxChart,
    pub grid: Grid,
    pub cfg: SolverConfig,
    basis: Vec<Vec<f64>>,
    d1: Vec<DMatrix<f64>>,
}

/// Restarted GMRES with right preconditioning.
pub fn gmres(
    apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = b.len();
    let bnorm = DVector::from_column_slice(b).norm();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0.0));
    }
    let mut iters = 0;
    let mut rel = 1.0;
    while iters < max_iter {
        let ax = apply(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = DVector::from_column_slice(&r).norm();
        rel = beta / bnorm;
        if rel <= rel_tol {
            break;
        }
        let m = restart.min(max_iter - iters);
        let mut v: Vec<DVector<f64>> = vec![DVector::from_column_slice(&r) / beta];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut hm = DMatrix::<f64>::zeros(m + 1, m);
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let zk = precond(v[k].as_slice());
            let mut w = DVector::from_vec(apply(&zk)?);
            z.push(zk);
            for (i, vi) in v.iter().enumerate() {
                hm[(i, k)] = w.dot(vi);
                w -= vi * hm[(i, k)];
            }
            let wnorm = w.norm();
            hm[(k + 1, k)] = wnorm;
            for i in 0..k {
                let t = cs[i] * hm[(i, k)] + sn[i] * hm[(i + 1, k)];
                hm[(i + 1, k)] = -sn[i] * hm[(i, k)] + cs[i] * hm[(i + 1, k)];
                hm[(i, k)] = t;
            }
            let den = hm[(k, k)].hypot(hm[(k + 1, k)]);
            cs[k] = hm[(k, k)] / den;
            sn[k] = hm[(k + 1, k)] / den;
            hm[(k, k)] = den;
            hm[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            iters += 1;
            let happy = wnorm <= 1e-14 * bnorm;
            if g[k + 1].abs() / bnorm <= rel_tol || happy {
                break;
            }
            v.push(w / wnorm);
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hm[(i, j)] * y[j];
            }
            y[i] = s / hm[(i, i)];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[j]) {
                *xi += yj * zi;
            }
        }
    }
    Ok((x, rel))
}

impl FibreContext {
    pub fn new(model: LocalModel, shape: &[usize], cfg: SolverConfig, region: &RegionConstants) -> Result<Self> {
        if shape.len() != model.n() {
            return Err(Error::InvalidParameter("grid dimension must equal n".into()));
        }
        let grid = Grid::new(shape)?;
        let emb = model.model_torus(shape)?;
        for z in emb.points() {
            let rep = classify_region(&z, model.part(), &model.poly, region);
            if !rep.normal {
                return Err(Error::RegionExit(format!("model fibre is not in a normal region: {rep:?}")));
            }
        }
        let d1 = shape
            .iter()
            .map(|&n| {
                let m = Grid::diff_matrix_1d(n);
                DMatrix::from_fn(n, n, |i, j| m[i][j])
            })
            .collect();
        Ok(FibreContext {
            chart: DarbouxChart::new(model),
            basis: grid.unresolved_basis(),
            grid,
            cfg,
            d1,
        })
    }

    pub fn model(&self) -> &LocalModel {
        &self.chart.model
    }

    pub fn n(&self) -> usize {
        self.grid.dim()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn nu(&self) -> Vec<f64> {
        self.chart.model.nu()
    }

    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        self.grid.project(f)
    }

    /// y = σ + ∇h at every node.
    pub fn graph_y(&self, h: &[f64], sigma: &[f64]) -> Vec<Vec<f64>> {
        let g = self.grid.gradient(h);
        (0..self.len())
            .map(|i| (0..self.n()).map(|k| sigma[k] + g[k][i]).collect())
            .collect()
    }

    /// Chart coordinates of the graph before any flow.
    pub fn graph_xis(&self, h: &[f64], sigma: &[f64]) -> Result<Vec<Vec<f64>>> {
        let ys = self.graph_y(h, sigma);
        let nodes = self.grid.nodes();
        nodes
            .par_iter()
            .zip(ys.par_iter())
            .map(|(x, y)| self.chart.inverse_xi(x, y))
            .collect()
    }

    /// L_{t,s} = ψ_s(graph of σ + dh).
    pub fn embed(&self, h: &[f64], sigma: &[f64], s: f64) -> Result<FibreEmbedding> {
        let base = self.graph_xis(h, sigma)?;
        let xis = base
            .par_iter()
            .map(|xi| psi(&self.chart, xi, s, &self.cfg.flow))
            .collect::<Result<Vec<_>>>()?;
        FibreEmbedding::from_chart(&self.grid, &xis, &self.chart.model.family(s))
    }

    /// Continuous phase of Ω_{t,s} on the embedded torus (no gauge fixing).
    pub fn raw_phase(&self, emb: &FibreEmbedding, s: f64) -> Result<Vec<f64>> {
        phase_field(emb, &self.chart.model.family(s).poly)
    }

    /// F(h, s) with mean and Nyquist modes removed.
    pub fn eval_f(&self, h: &[f64], sigma: &[f64], s: f64) -> Result<Vec<f64>> {
        let emb = self.embed(h, sigma, s)?;
        Ok(self.project(&self.raw_phase(&emb, s)?))
    }

    fn embedding_logs(&self, emb: &FibreEmbedding) -> Vec<Vec<Complex64>> {
        emb.logs.iter().map(|r| r[1..].to_vec()).collect()
    }

    /// Linearisation of F at (h, σ, s).
    pub fn operator(&self, h: &[f64], sigma: &[f64], s: f64) -> Result<LinearOperator> {
        let n = self.n();
        let len = self.len();
        let emb = self.embed(h, sigma, s)?;
        let d = emb.log_derivatives()?;
        let nu = self.nu();
        let mut m = vec![vec![vec![Complex64::new(0.0, 0.0); n]; n]; len];
        let mut b = vec![vec![0.0; len]; n];
        for i in 0..n {
            let eps = self.cfg.fd_rel_step * nu[i] * nu[i];
            let mut sp = sigma.to_vec();
            let mut sm = sigma.to_vec();
            sp[i] += eps;
            sm[i] -= eps;
            let ep = self.embed(h, &sp, s)?;
            let em = self.embed(h, &sm, s)?;
            let (lp, lm) = (self.embedding_logs(&ep), self.embedding_logs(&em));
            let (pp, pm) = (self.raw_phase(&ep, s)?, self.raw_phase(&em, s)?);
            for node in 0..len {
                for k in 0..n {
                    m[node][k][i] = (lp[node][k] - lm[node][k]) / (2.0 * eps);
                }
                b[i][node] = wrap(pp[node] - pm[node]) / (2.0 * eps);
            }
        }
        let mut a = vec![vec![vec![0.0; len]; n]; n];
        let mut ellipticity = f64::INFINITY;
        for node in 0..len {
            let j = DMatrix::from_fn(n, n, |k, jj| d[jj][node][k + 1]);
            let jinv = j
                .try_inverse()
                .ok_or_else(|| Error::Degenerate(format!("singular frame at node {node}")))?;
            let mm = DMatrix::from_fn(n, n, |k, i| m[node][k][i]);
            let prod = jinv * mm;
            let local = DMatrix::from_fn(n, n, |i, jj| 0.5 * (prod[(jj, i)].im + prod[(i, jj)].im));
            for i in 0..n {
                for jj in 0..n {
                    a[i][jj][node] = local[(i, jj)];
                }
            }
            let scaled = DMatrix::from_fn(n, n, |i, jj| -nu[i] * nu[jj] * local[(i, jj)]);
            let ev = scaled.symmetric_eigenvalues().min();
            ellipticity = ellipticity.min(ev);
        }
        let lu = self.assemble(&a, &b).lu();
        Ok(LinearOperator { a, b, ellipticity, lu })
    }

    /// Dense L − Q(QᵀL) + QQᵀ, with Q spanning the modes removed by `project`.
    fn assemble(&self, a: &[Vec<Vec<f64>>], b: &[Vec<f64>]) -> DMatrix<f64> {
        let n = self.n();
        let len = self.len();
        let shape = self.grid.shape().to_vec();
        let d2: Vec<DMatrix<f64>> = self.d1.iter().map(|d| d * d).collect();
        let multi: Vec<Vec<usize>> = (0..len).map(|i| self.grid.multi_index(i)).collect();
        let factor = |ax: usize, order: usize, p: usize, q: usize| -> f64 {
            match order {
                0 => (p == q) as u8 as f64,
                1 => self.d1[ax][(p, q)],
                _ => d2[ax][(p, q)],
            }
        };
        let entry = |orders: &[usize], p: usize, q: usize| -> f64 {
            let mut v = 1.0;
            for ax in 0..shape.len() {
                v *= factor(ax, orders[ax], multi[p][ax], multi[q][ax]);
                if v == 0.0 {
                    return 0.0;
                }
            }
            v
        };
        let mut l = DMatrix::<f64>::zeros(len, len);
        let mut orders = vec![0usize; n];
        for p in 0..len {
            for q in 0..len {
                let mut v = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        orders.iter_mut().for_each(|o| *o = 0);
                        orders[i] += 1;
                        orders[j] += 1;
                        let e = entry(&orders, p, q);
                        if e != 0.0 {
                            v += a[i][j][p] * e;
                        }
                    }
                    orders.iter_mut().for_each(|o| *o = 0);
                    orders[i] = 1;
                    let e = entry(&orders, p, q);
                    if e != 0.0 {
                        v += b[i][p] * e;
                    }
                }
                l[(p, q)] = v;
            }
        }
        let qm = DMatrix::from_fn(len, self.basis.len(), |i, k| self.basis[k][i]);
        let qtl = qm.transpose() * &l;
        l - &qm * qtl + &qm * qm.transpose()
    }

    /// L v by spectral differentiation.
    pub fn apply_operator(&self, op: &LinearOperator, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let g = self.grid.gradient(v);
        let mut out = vec![0.0; v.len()];
        for i in 0..n {
            for (o, (b, gi)) in out.iter_mut().zip(op.b[i].iter().zip(&g[i])) {
                *o += b * gi;
            }
            for j in 0..n {
                let gij = self.grid.diff(&g[i], j);
                for (node, o) in out.iter_mut().enumerate() {
                    *o += op.a[i][j][node] * gij[node];
                }
            }
        }
        out
    }

    fn solve_with(&self, op: &LinearOperator, r: &[f64]) -> Vec<f64> {
        let x = op
            .lu
            .solve(&DVector::from_column_slice(r))
            .unwrap_or_else(|| DVector::zeros(r.len()));
        x.iter().cloned().collect()
    }

    /// Newton iteration at fixed s; returns (steps, residual, used Krylov fallback).
    fn newton(
        &self,
        h: &mut Vec<f64>,
        sigma: &[f64],
        s: f64,
        op: &mut LinearOperator,
    ) -> Result<(usize, f64, bool)> {
        let mut f = self.eval_f(h, sigma, s)?;
        let mut r = sup(&f);
        let mut steps = 0;
        let mut krylov = false;
        while r > self.cfg.tol {
            if steps >= self.cfg.max_newton {
                return Err(Error::Convergence(format!(
                    "Newton did not reach {:e} in {} steps at s = {s} (residual {r:e})",
                    self.cfg.tol, self.cfg.max_newton
                )));
            }
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            let delta = self.solve_with(op, &rhs);
            let mut accepted = self.line_search(h, &delta, sigma, s, r)?;
            if accepted.is_none() {
                krylov = true;
                let base = f.clone();
                let hh = h.clone();
                let apply = |v: &[f64]| -> Result<Vec<f64>> {
                    let nv = sup(v).max(1e-300);
                    let eps = 1e-6 / nv;
                    let hp: Vec<f64> = hh.iter().zip(v).map(|(a, b)| a + eps * b).collect();
                    let fp = self.eval_f(&hp, sigma, s)?;
                    Ok(fp.iter().zip(&base).map(|(a, b)| (a - b) / eps).collect())
                };
                let pre = |v: &[f64]| self.project(&self.solve_with(op, v));
                let (delta, _) = gmres(&apply, &pre, &rhs, 1e-6, self.cfg.gmres_restart, self.cfg.gmres_max_iter)?;
                accepted = self.line_search(h, &delta, sigma, s, r)?;
            }
            let (hn, fn_) = accepted.ok_or_else(|| {
                Error::Convergence(format!("no descent direction at s = {s} (residual {r:e})"))
            })?;
            let rn = sup(&fn_);
            let contraction = rn / r;
            *h = hn;
            f = fn_;
            r = rn;
            steps += 1;
            if sup(h) > 1e-12 && self.grid.tail_fraction(h) > self.cfg.tail_guard {
                return Err(Error::Convergence("h is under-resolved on this grid".into()));
            }
            if r > self.cfg.tol && contraction > 0.1 {
                *op = self.operator(h, sigma, s)?;
            }
        }
        Ok((steps, r, krylov))
    }

    fn line_search(
        &self,
        h: &[f64],
        delta: &[f64],
        sigma: &[f64],
        s: f64,
        r: f64,
    ) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let mut lam = 1.0;
        for _ in 0..4 {
            let trial = self.project(&h.iter().zip(delta).map(|(a, b)| a + lam * b).collect::<Vec<_>>());
            match self.eval_f(&trial, sigma, s) {
                Ok(f) if sup(&f) < r => return Ok(Some((trial, f))),
                Ok(_) => {}
                Err(Error::ChartDomain(_)) | Err(Error::FlowStep(_)) | Err(Error::Degenerate(_)) => {}
                Err(e) => return Err(e),
            }
            lam *= 0.5;
        }
        Ok(None)
    }

    /// Newton continuation from s = 0 to s = 1 for the moduli offset σ.
    pub fn solve(&self, sigma: &[f64]) -> Result<FibreSolution> {
        self.solve_from(sigma, None)
    }

    /// As `solve`, optionally warm-started from h at s = 0.
    pub fn solve_from(&self, sigma: &[f64], h0: Option<&[f64]>) -> Result<FibreSolution> {
        if sigma.len() != self.n() {
            return Err(Error::InvalidParameter("sigma must have n entries".into()));
        }
        let mut h = match h0 {
            Some(v) => self.project(v),
            None => vec![0.0; self.len()],
        };
        let mut op = self.operator(&h, sigma, 0.0)?;
        let ellipticity = op.ellipticity;
        if !(ellipticity >= self.cfg.ellipticity_floor) {
            return Err(Error::Verification(format!(
                "linear operator ellipticity {ellipticity:e} below floor {:e}",
                self.cfg.ellipticity_floor
            )));
        }
        let mut history = Vec::new();
        let (k, r, kr) = self.newton(&mut h, sigma, 0.0, &mut op)?;
        history.push(ContinuationStep {
            s: 0.0,
            newton_steps: k,
            residual: r,
            sup_h: sup(&h),
            krylov_fallback: kr,
        });
        let mut s = 0.0;
        let mut ds = 1.0 / self.cfg.s_steps.max(1) as f64;
        let mut prev: Option<(f64, Vec<f64>)> = None;
        let mut residual = r;
        while s < 1.0 - 1e-14 {
            let s_next = (s + ds).min(1.0);
            let mut trial = match &prev {
                Some((sp, hp)) => {
                    let w = (s_next - s) / (s - sp);
                    h.iter().zip(hp).map(|(a, b)| a + w * (a - b)).collect()
                }
                None => h.clone(),
            };
            let attempt = self
                .operator(&trial, sigma, s_next)
                .and_then(|mut op| self.newton(&mut trial, sigma, s_next, &mut op));
            match attempt {
                Ok((k, r, kr)) => {
                    prev = Some((s, std::mem::replace(&mut h, trial)));
                    s = s_next;
                    residual = r;
                    history.push(ContinuationStep {
                        s,
                        newton_steps: k,
                        residual: r,
                        sup_h: sup(&h),
                        krylov_fallback: kr,
                    });
                }
                Err(e @ Error::InvalidParameter(_)) | Err(e @ Error::Io { .. }) => return Err(e),
                Err(e) => {
                    ds *= 0.5;
                    if ds < self.cfg.min_ds {
                        return Err(Error::Convergence(format!(
                            "continuation stalled after s = {s}: {e}"
                        )));
                    }
                }
            }
        }
        let embedding = self.embed(&h, sigma, 1.0)?;
        Ok(FibreSolution {
            grid_shape: self.grid.shape().to_vec(),
            sigma: sigma.to_vec(),
            s: 1.0,
            h,
            residual,
            history,
            ellipticity,
            embedding,
        })
    }

    pub fn verify(&self, sol: &FibreSolution) -> Result<Verification> {
        let m = self.model();
        Ok(Verification {
            phase_residual: phase_residual(&sol.embedding, &m.family(sol.s).poly)?,
            lagrangian_residual: lagrangian_residual(&sol.embedding, &PotentialForm(&m.pot))?,
            tail_fraction: self.grid.tail_fraction(&sol.h),
            sup_h: sup(&sol.h),
        })
    }

    /// f_k solving L f_k = ∂F/∂σ_k at the solved fibre.
    pub fn deformation_one_forms(&self, sol: &FibreSolution) -> Result<DeformationBasis> {
        let op = self.operator(&sol.h, &sol.sigma, sol.s)?;
        let mut f = Vec::new();
        let mut min_diag = Vec::new();
        let mut residual = Vec::new();
        for k in 0..self.n() {
            let rhs = self.project(&op.b[k]);
            let fk = self.project(&self.solve_with(&op, &rhs));
            let lf = self.project(&self.apply_operator(&op, &fk));
            residual.push(lf.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            let dk = self.grid.diff(&fk, k);
            min_diag.push(dk.iter().map(|d| (1.0 - d).abs()).fold(f64::INFINITY, f64::min));
            f.push(fk);
        }
        Ok(DeformationBasis { f, min_diag, residual })
    }

    /// Normalised periods mean(y_k)/ν_k².
    pub fn moduli(&self, sigma: &[f64]) -> Vec<f64> {
        self.nu().iter().zip(sigma).map(|(nu, s)| s / (nu * nu)).collect()
    }

    /// sup |(F(ε δh) − F(0))/ε − P L δh| at (h, σ, s) = (0, 0, 0).
    pub fn linearization_error(&self, op: &LinearOperator, dh: &[f64], eps: f64) -> Result<f64> {
        let zero = vec![0.0; self.n()];
        let f0 = self.eval_f(&vec![0.0; self.len()], &zero, 0.0)?;
        let he: Vec<f64> = dh.iter().map(|v| eps * v).collect();
        let fe = self.eval_f(&he, &zero, 0.0)?;
        let l = self.project(&self.apply_operator(op, dh));
        Ok((0..dh.len()).map(|i| ((fe[i] - f0[i]) / eps - l[i]).abs()).fold(0.0, f64::max))
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use crate::ambient::{DefiningPolynomial, PartitionedIndex, ToricPotential};
    use crate::local_model::ModelParams;

    pub fn desk(c1: f64, t: f64) -> LocalModel {
        let params = ModelParams {
            part: PartitionedIndex::new(2, &[0, 1]).unwrap(),
            r: vec![1.0],
            c: vec![0.0, c1],
            t,
        };
        let p = DefiningPolynomial::new(
            3,
            vec![(vec![0, 0, 0], Complex64::new(2.0, 0.0)), (vec![0, 0, 1], Complex64::new(1.0, 0.0))],
        )
        .unwrap();
        LocalModel::new(params, ToricPotential::flat(2), p).unwrap()
    }

    pub fn region() -> RegionConstants {
        RegionConstants { epsilon_max: 0.25, ..RegionConstants::default() }
    }

    pub fn ctx(shape: &[usize], t: f64) -> FibreContext {
        FibreContext::new(desk(0.01, t), shape, SolverConfig::default(), &region()).unwrap()
    }

}
