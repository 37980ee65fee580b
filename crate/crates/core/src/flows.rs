//! The two deformation flows in chart coordinates ξ = (log|z_k|², θ_k):
//! varphi on Y_t pulling Σdy∧dx + s·dD∧dA back to Σdy∧dx, and phi moving
//! X_{t,0} = Y_t to X_{t,s} along V − H_{α_s}.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::darboux::{pullback, DarbouxChart};
use crate::error::{Error, Result};
use crate::local_model::{Hypersurface, LocalModel, PointJets};

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// A time-dependent vector field on chart coordinates with a conserved 2-form.
pub trait FlowField: Sync {
    fn field(&self, xi: &[f64], s: f64) -> Result<Vec<f64>>;
    /// Matrix of the symplectic form at time s on the chart basis.
    fn form(&self, xi: &[f64], s: f64) -> Result<DMatrix<f64>>;
    fn hypersurface(&self, s: f64) -> Hypersurface;
}

fn solve_transposed(omega: &DMatrix<f64>, beta: &[f64]) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(beta);
    let x = omega
        .transpose()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Degenerate("symplectic form matrix is singular".into()))?;
    Ok(x.iter().cloned().collect())
}

/// Generator of varphi: ι_X ω̂_s = −D dA.
pub struct VarphiField<'a> {
    pub chart: &'a DarbouxChart,
}

impl VarphiField<'_> {
    /// H_α for α = −D dA at time s (the flow generator is −H_α).
    pub fn h_alpha(&self, xi: &[f64], s: f64) -> Result<Vec<f64>> {
        Ok(self.field(xi, s)?.iter().map(|v| -v).collect())
    }
}

impl FlowField for VarphiField<'_> {
    fn field(&self, xi: &[f64], s: f64) -> Result<Vec<f64>> {
        let d = xi.len();
        let (_, q) = self.chart.eval(xi)?;
        let omega = self.chart.interpolated_form(&q, s);
        let beta: Vec<f64> = (0..d).map(|a| -q.defect.v * q.arg.g[a]).collect();
        solve_transposed(&omega, &beta)
    }

    fn form(&self, xi: &[f64], s: f64) -> Result<DMatrix<f64>> {
        let (_, q) = self.chart.eval(xi)?;
        Ok(self.chart.interpolated_form(&q, s))
    }

    fn hypersurface(&self, _s: f64) -> Hypersurface {
        self.chart.hypersurface().clone()
    }
}

/// Generator of phi on X_{t,s}: dξ(V) − H with ι_H ω̃_s = α_s.
pub struct PhiField<'a> {
    pub model: &'a LocalModel,
}

/// Pieces of the phi generator at one point, exposed for verification.
#[derive(Clone, Debug)]
pub struct PhiParts {
    pub point: PointJets,
    /// V as dz components (k = 0..n).
    pub v: Vec<Complex64>,
    /// dξ(V).
    pub v_xi: Vec<f64>,
    /// H_{α_s} in chart coordinates.
    pub h: Vec<f64>,
    /// α_s on the chart basis.
    pub alpha: Vec<f64>,
    pub omega: DMatrix<f64>,
    /// ∂_s log P_s at the point.
    pub dlogp_ds: Complex64,
}

impl PhiField<'_> {
    pub fn parts(&self, xi: &[f64], s: f64) -> Result<PhiParts> {
        let m = self.model;
        let n = m.n();
        let d = 2 * n;
        let part = m.part();
        let hyp = m.family(s);
        let pt = hyp.point(xi)?;
        let z = &pt.z;
        let g = m.interpolated_metric(z, s)?;
        let omega = pullback(&g, &pt.tangent_matrix());

        // α_s = Im ∂(v_s + μ)
        let vs = m.pot.interpolated_ds(s, part);
        let x: Vec<f64> = z.iter().map(|v| v.norm_sqr()).collect();
        let mut alpha = vec![0.0; d];
        for k in 0..=n {
            let c = vs.log_derivative(k).eval(&x);
            if c != 0.0 {
                for (a, al) in alpha.iter_mut().enumerate() {
                    *al += c * pt.w[k].im.g[a];
                }
            }
        }
        {
            let eta = m.eta(z)?;
            let coef = m.im_dlog_kappa(z);
            let darg = m.p_model().eval_jet(&pt.w).ln().im;
            for (a, al) in alpha.iter_mut().enumerate() {
                let mut v = darg.g[a];
                for (jj, &j) in part.outer().iter().enumerate() {
                    v += coef[jj] * pt.w[j].im.g[a];
                }
                *al += eta * v;
            }
        }
        let h = solve_transposed(&omega, &alpha)?;

        // V = −∂_s f ∇f / |df|² with f = z_0⋯z_n − t P_s
        let pds = m.poly.scaled_ds(s, part).eval(z);
        let dlogp_ds = pds / pt.p;
        let mut v = vec![C0; n + 1];
        let mut v_xi = vec![0.0; d];
        if pds.norm() > 0.0 {
            let t = m.t();
            let prod: Complex64 = z.iter().product();
            let pl = hyp.poly.log_derivatives_raw(z);
            let f: Vec<Complex64> = (0..=n).map(|k| (prod - t * pl[k]) / z[k]).collect();
            let gi = g
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Degenerate("ambient metric is singular".into()))?;
            let fv = DVector::from_vec(f.clone());
            let grad: Vec<Complex64> = (gi * fv).iter().map(|c| c.conj()).collect();
            let norm2: f64 = f.iter().zip(&grad).map(|(a, b)| (a * b).re).sum();
            if norm2 < 1e-24 {
                return Err(Error::Degenerate("defining function has vanishing gradient".into()));
            }
            let dsf = -t * pds;
            for k in 0..=n {
                v[k] = -dsf * grad[k] / norm2;
            }
            for k in 1..=n {
                let dw = v[k] / z[k];
                v_xi[k - 1] = 2.0 * dw.re;
                v_xi[n + k - 1] = dw.im;
            }
        }
        Ok(PhiParts {
            point: pt,
            v,
            v_xi,
            h,
            alpha,
            omega,
            dlogp_ds,
        })
    }

    /// γ_k = dlog z_k(V) / ∂_s log P_s, which satisfy Σ q_k γ_k = 1.
    pub fn gammas(&self, xi: &[f64], s: f64) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let p = self.parts(xi, s)?;
        if p.dlogp_ds.norm() == 0.0 {
            return Err(Error::Degenerate("P_s does not depend on s here".into()));
        }
        let g = (0..p.v.len()).map(|k| p.v[k] / p.point.z[k] / p.dlogp_ds).collect();
        Ok((g, p.point.q.clone()))
    }
}

impl FlowField for PhiField<'_> {
    fn field(&self, xi: &[f64], s: f64) -> Result<Vec<f64>> {
        let p = self.parts(xi, s)?;
        Ok(p.v_xi.iter().zip(&p.h).map(|(a, b)| a - b).collect())
    }

    fn form(&self, xi: &[f64], s: f64) -> Result<DMatrix<f64>> {
        let pt = self.model.family(s).point(xi)?;
        let g = self.model.interpolated_metric(&pt.z, s)?;
        Ok(pullback(&g, &pt.tangent_matrix()))
    }

    fn hypersurface(&self, s: f64) -> Hypersurface {
        self.model.family(s)
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(y, x)| y + a * x).collect()
}

/// Classical RK4 from s0 to s1 (either direction) in `steps` equal steps.
pub fn integrate(f: &dyn FlowField, xi0: &[f64], s0: f64, s1: f64, steps: usize) -> Result<Vec<f64>> {
    let h = (s1 - s0) / steps as f64;
    let mut xi = xi0.to_vec();
    for i in 0..steps {
        let s = s0 + h * i as f64;
        let k1 = f.field(&xi, s)?;
        let k2 = f.field(&axpy(&xi, 0.5 * h, &k1), s + 0.5 * h)?;
        let k3 = f.field(&axpy(&xi, 0.5 * h, &k2), s + 0.5 * h)?;
        let k4 = f.field(&axpy(&xi, h, &k3), s + h)?;
        for a in 0..xi.len() {
            xi[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::FlowStep(format!("non-finite state at s = {s}")));
        }
    }
    Ok(xi)
}

/// Directional derivative of the field by central differences.
fn field_jvp(f: &dyn FlowField, xi: &[f64], s: f64, dir: &[f64]) -> Result<Vec<f64>> {
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(vec![0.0; xi.len()]);
    }
    let eps = 1e-5 / norm;
    let fp = f.field(&axpy(xi, eps, dir), s)?;
    let fm = f.field(&axpy(xi, -eps, dir), s)?;
    Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
}

/// RK4 on the state together with its variational equations.
pub fn integrate_with_tangents(
    f: &dyn FlowField,
    xi0: &[f64],
    tangents: &[Vec<f64>],
    s0: f64,
    s1: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let h = (s1 - s0) / steps as f64;
    let mut xi = xi0.to_vec();
    let mut tv: Vec<Vec<f64>> = tangents.to_vec();
    let rhs = |xi: &[f64], tv: &[Vec<f64>], s: f64| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let k = f.field(xi, s)?;
        let kt = tv.iter().map(|d| field_jvp(f, xi, s, d)).collect::<Result<Vec<_>>>()?;
        Ok((k, kt))
    };
    for i in 0..steps {
        let s = s0 + h * i as f64;
        let (k1, t1) = rhs(&xi, &tv, s)?;
        let tv2: Vec<Vec<f64>> = tv.iter().zip(&t1).map(|(a, b)| axpy(a, 0.5 * h, b)).collect();
        let (k2, t2) = rhs(&axpy(&xi, 0.5 * h, &k1), &tv2, s + 0.5 * h)?;
        let tv3: Vec<Vec<f64>> = tv.iter().zip(&t2).map(|(a, b)| axpy(a, 0.5 * h, b)).collect();
        let (k3, t3) = rhs(&axpy(&xi, 0.5 * h, &k2), &tv3, s + 0.5 * h)?;
        let tv4: Vec<Vec<f64>> = tv.iter().zip(&t3).map(|(a, b)| axpy(a, h, b)).collect();
        let (k4, t4) = rhs(&axpy(&xi, h, &k3), &tv4, s + h)?;
        for a in 0..xi.len() {
            xi[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        for (j, t) in tv.iter_mut().enumerate() {
            for a in 0..t.len() {
                t[a] += h / 6.0 * (t1[j][a] + 2.0 * t2[j][a] + 2.0 * t3[j][a] + t4[j][a]);
            }
        }
    }
    Ok((xi, tv))
}

/// |ω_{s1}(φ_* u, φ_* v) − ω_{s0}(u, v)| for one transported pair.
pub fn pair_drift(
    f: &dyn FlowField,
    xi0: &[f64],
    u: &[f64],
    v: &[f64],
    s0: f64,
    s1: f64,
    steps: usize,
) -> Result<f64> {
    let before = {
        let m = f.form(xi0, s0)?;
        DVector::from_column_slice(u).dot(&(m * DVector::from_column_slice(v)))
    };
    let (xi1, tv) = integrate_with_tangents(f, xi0, &[u.to_vec(), v.to_vec()], s0, s1, steps)?;
    let m = f.form(&xi1, s1)?;
    let after = DVector::from_column_slice(&tv[0]).dot(&(m * DVector::from_column_slice(&tv[1])));
    Ok((after - before).abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Varphi,
    Phi,
}

/// Sampled flow of a point set.
#[derive(Clone, Debug, Serialize)]
pub struct FlowTrace {
    pub s_samples: Vec<f64>,
    /// states[sample][node] = z̃.
    pub states: Vec<Vec<Vec<Complex64>>>,
    pub residual_max: Vec<f64>,
}

fn residual(hyp: &Hypersurface, t: f64, z: &[Complex64]) -> f64 {
    let lhs: Complex64 = z.iter().product();
    (lhs - t * hyp.poly.eval(z)).norm()
}

/// Flow every node from s = 0 to s_target, recording `samples` intermediate states.
pub fn flow_trace(
    f: &dyn FlowField,
    t: f64,
    xis: &[Vec<f64>],
    s_target: f64,
    steps: usize,
    samples: usize,
) -> Result<FlowTrace> {
    let samples = samples.max(1);
    let per = (steps / samples).max(1);
    let mut cur: Vec<Vec<f64>> = xis.to_vec();
    let mut trace = FlowTrace {
        s_samples: vec![],
        states: vec![],
        residual_max: vec![],
    };
    let record = |trace: &mut FlowTrace, cur: &[Vec<f64>], s: f64| -> Result<()> {
        let hyp = f.hypersurface(s);
        let zs = cur
            .iter()
            .map(|xi| hyp.point(xi).map(|p| p.z))
            .collect::<Result<Vec<_>>>()?;
        trace.residual_max.push(zs.iter().map(|z| residual(&hyp, t, z)).fold(0.0, f64::max));
        trace.states.push(zs);
        trace.s_samples.push(s);
        Ok(())
    };
    record(&mut trace, &cur, 0.0)?;
    for i in 0..samples {
        let (a, b) = (s_target * i as f64 / samples as f64, s_target * (i + 1) as f64 / samples as f64);
        cur = cur
            .par_iter()
            .map(|xi| integrate(f, xi, a, b, per))
            .collect::<Result<Vec<_>>>()?;
        record(&mut trace, &cur, b)?;
    }
    Ok(trace)
}

/// ψ_s = phi_s ∘ varphi_1, and its inverse, on chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// RK4 steps per unit of s.
    pub steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { steps: 64 }
    }
}

pub fn psi(chart: &DarbouxChart, xi: &[f64], s: f64, cfg: &FlowConfig) -> Result<Vec<f64>> {
    let v = integrate(&VarphiField { chart }, xi, 0.0, 1.0, cfg.steps)?;
    if s == 0.0 {
        return Ok(v);
    }
    let k = ((cfg.steps as f64 * s).ceil() as usize).max(1);
    integrate(&PhiField { model: &chart.model }, &v, 0.0, s, k)
}

pub fn psi_inverse(chart: &DarbouxChart, xi: &[f64], s: f64, cfg: &FlowConfig) -> Result<Vec<f64>> {
    let mut v = xi.to_vec();
    if s != 0.0 {
        let k = ((cfg.steps as f64 * s).ceil() as usize).max(1);
        v = integrate(&PhiField { model: &chart.model }, &v, s, 0.0, k)?;
    }
    integrate(&VarphiField { chart }, &v, 1.0, 0.0, cfg.steps)
}
