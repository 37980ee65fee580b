//! Darboux coordinates (x, y) on the local model Y_t: x_k = θ_k and y built
//! from λ_k|z_k|², ρ' and η so that the model torus is {y = 0}.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::local_model::{hermitian_pairing, Hypersurface, LocalModel, ModelJets, PointJets, TwoForm};

/// αβᵀ − βαᵀ: the matrix of α∧β on a coordinate basis.
pub fn wedge_matrix(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let d = alpha.len();
    DMatrix::from_fn(d, d, |a, b| alpha[a] * beta[b] - beta[a] * alpha[b])
}

/// Chart-coordinate components of ambient tangent vectors on the hypersurface.
pub fn xi_components(z: &[Complex64], v: &[Complex64]) -> Vec<f64> {
    let n = z.len() - 1;
    let mut out = vec![0.0; 2 * n];
    for k in 1..=n {
        let dw = v[k] / z[k];
        out[k - 1] = 2.0 * dw.re;
        out[n + k - 1] = dw.im;
    }
    out
}

#[derive(Clone, Debug)]
pub struct DarbouxChart {
    pub model: LocalModel,
    hyp: Hypersurface,
}

/// The four blocks of ∂(y, x)/∂(log|z|², θ) and the inverse Jacobian.
#[derive(Clone, Debug, Serialize)]
pub struct DarbouxJacobian {
    pub y_u: DMatrix<f64>,
    pub y_theta: DMatrix<f64>,
    pub x_u: DMatrix<f64>,
    pub x_theta: DMatrix<f64>,
    /// ∂(u, θ)/∂(y, x).
    pub inverse: DMatrix<f64>,
}

impl DarbouxChart {
    pub fn new(model: LocalModel) -> Self {
        let hyp = model.y_t();
        DarbouxChart { model, hyp }
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn hypersurface(&self) -> &Hypersurface {
        &self.hyp
    }

    pub fn point(&self, xi: &[f64]) -> Result<PointJets> {
        self.hyp.point(xi)
    }

    pub fn eval(&self, xi: &[f64]) -> Result<(PointJets, ModelJets)> {
        let pt = self.hyp.point(xi)?;
        let q = self.model.quantities(&pt)?;
        Ok((pt, q))
    }

    /// y at chart coordinates ξ = (log|z_k|², θ_k).
    pub fn y_of(&self, xi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(xi)?.1.y.iter().map(|j| j.v).collect())
    }

    pub fn forward(&self, z: &[Complex64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        if z.len() != n + 1 {
            return Err(Error::InvalidParameter("point has wrong dimension".into()));
        }
        let p = self.hyp.poly.eval(z);
        let lhs: Complex64 = z.iter().product();
        let rhs = p * self.model.t();
        if (lhs - rhs).norm() > 1e-8 * rhs.norm() {
            return Err(Error::ChartDomain(format!(
                "point is off Y_t by {:e}",
                (lhs - rhs).norm() / rhs.norm()
            )));
        }
        let xi = LocalModel::xi_of(z);
        Ok((xi[n..].to_vec(), self.y_of(&xi)?))
    }

    /// |y_k| ≤ 0.5 ν_k².
    pub fn in_box(&self, y: &[f64]) -> bool {
        self.model.nu().iter().zip(y).all(|(nu, y)| y.abs() <= 0.5 * nu * nu)
    }

    /// Chart coordinates of the point with Darboux coordinates (x, y).
    pub fn inverse_xi(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if !self.in_box(y) {
            return Err(Error::ChartDomain("y outside the validated box".into()));
        }
        self.solve_u(x, y)
    }

    /// Newton on log|z|² at fixed θ = x, without the box check.
    pub fn solve_u(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let mut xi = self.model.model_xi(x)?;
        let scale: f64 = self.model.nu().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
        for _ in 0..50 {
            let (_, q) = self.eval(&xi)?;
            let r = DVector::from_fn(n, |k, _| q.y[k].v - y[k]);
            let err = (0..n)
                .map(|k| r[k].abs() / (1e-300 + self.model.nu()[k].powi(2)))
                .fold(0.0, f64::max);
            let j = DMatrix::from_fn(n, n, |k, a| q.y[k].g[a]);
            let lu = j.lu();
            let step = lu
                .solve(&r)
                .ok_or_else(|| Error::ChartDomain("singular dy/dlog|z|^2 block".into()))?;
            let mut t = 1.0;
            let max_step = step.amax();
            if max_step > 0.5 {
                t = 0.5 / max_step;
            }
            for k in 0..n {
                xi[k] -= t * step[k];
            }
            if err < 1e-15 || (t == 1.0 && max_step < 1e-14) {
                let (_, q) = self.eval(&xi)?;
                let ok = (0..n).all(|k| (q.y[k].v - y[k]).abs() <= 1e-12 * scale.max(1e-300) + 1e-15);
                if ok {
                    return Ok(xi);
                }
            }
        }
        Err(Error::ChartDomain(
            "Darboux inverse did not converge in 50 Newton steps".into(),
        ))
    }

    pub fn inverse(&self, x: &[f64], y: &[f64]) -> Result<Vec<Complex64>> {
        let xi = self.inverse_xi(x, y)?;
        Ok(self.hyp.point(&xi)?.z)
    }

    pub fn jacobian(&self, xi: &[f64]) -> Result<DarbouxJacobian> {
        let n = self.n();
        let (_, q) = self.eval(xi)?;
        let y_u = DMatrix::from_fn(n, n, |k, a| q.y[k].g[a]);
        let y_theta = DMatrix::from_fn(n, n, |k, a| q.y[k].g[n + a]);
        let inv_yu = y_u
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular dy/dlog|z|^2 block".into()))?;
        // ∂(u,θ)/∂(y,x) = [[Y_u⁻¹, −Y_u⁻¹Y_θ], [0, I]]
        let mut inverse = DMatrix::zeros(2 * n, 2 * n);
        inverse.view_mut((0, 0), (n, n)).copy_from(&inv_yu);
        inverse.view_mut((0, n), (n, n)).copy_from(&(-&inv_yu * &y_theta));
        inverse.view_mut((n, n), (n, n)).fill_with_identity();
        Ok(DarbouxJacobian {
            y_u,
            y_theta,
            x_u: DMatrix::zeros(n, n),
            x_theta: DMatrix::identity(n, n),
            inverse,
        })
    }

    /// Matrix of Σ dy_k∧dx_k + s·dD∧dA on the chart basis.
    pub fn interpolated_form(&self, q: &ModelJets, s: f64) -> DMatrix<f64> {
        let n = self.n();
        let d = 2 * n;
        let mut m = DMatrix::zeros(d, d);
        for k in 0..n {
            let mut dx = vec![0.0; d];
            dx[n + k] = 1.0;
            m += wedge_matrix(q.y[k].grad(d), &dx);
        }
        if s != 0.0 {
            m += wedge_matrix(q.defect.grad(d), q.arg.grad(d)) * s;
        }
        m
    }

    /// ω̌_t pulled back to the chart basis through the tangent map.
    pub fn model_form(&self, pt: &PointJets) -> Result<DMatrix<f64>> {
        let g = self.model.model_metric(&pt.z)?;
        Ok(pullback(&g, &pt.tangent_matrix()))
    }
}

/// Real 2n×2n matrix of a Hermitian form pulled back along the columns of `t`.
pub fn pullback(g: &DMatrix<Complex64>, t: &DMatrix<Complex64>) -> DMatrix<f64> {
    let d = t.ncols();
    let cols: Vec<Vec<Complex64>> = (0..d).map(|a| t.column(a).iter().cloned().collect()).collect();
    let mut m = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a + 1..d {
            let v = hermitian_pairing(g, &cols[a], &cols[b]);
            m[(a, b)] = v;
            m[(b, a)] = -v;
        }
    }
    m
}

/// ω̂_t = Σ dy_k∧dx_k evaluated on ambient tangent vectors of Y_t.
pub struct DarbouxForm<'a>(pub &'a DarbouxChart);

impl TwoForm for DarbouxForm<'_> {
    fn eval(&self, z: &[Complex64], u: &[Complex64], v: &[Complex64]) -> Result<f64> {
        let xi = LocalModel::xi_of(z);
        let (_, q) = self.0.eval(&xi)?;
        let m = self.0.interpolated_form(&q, 0.0);
        let a = DVector::from_vec(xi_components(z, u));
        let b = DVector::from_vec(xi_components(z, v));
        Ok(a.dot(&(m * b)))
    }
}
