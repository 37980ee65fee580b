//! Diagnostics for T-boundedness: conjugated operator norms and envelope
//! fits G_ij ≲ C_T|z_i z_j| + C_E|z_0|²/(|z_i||z_j|).

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::darboux::DarbouxChart;
use crate::error::{param, Result};
use crate::local_model::LocalModel;
use crate::spectral::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TBoundConfig {
    pub bound: f64,
    pub det_floor: f64,
}

impl Default for TBoundConfig {
    fn default() -> Self {
        TBoundConfig {
            bound: 10.0,
            det_floor: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TBoundReport {
    pub norm_g: f64,
    /// ‖Z G Z⁻¹‖.
    pub norm_conj: f64,
    /// ‖Z̄⁻¹ G Z̄‖.
    pub norm_conj_bar: f64,
    /// ‖Z G⁻¹ Z⁻¹‖ when |det G| clears the floor.
    pub norm_inv_conj: Option<f64>,
    pub det_lower: f64,
    pub c_diag: f64,
    pub c_toric: f64,
    pub c_error: f64,
    pub torically_bounded_excess: f64,
    pub strong_correction_norm: f64,
    pub t_bounded: bool,
    pub inverse_t_bounded: bool,
    pub strongly_t_bounded: bool,
}

fn opnorm(m: &DMatrix<Complex64>) -> f64 {
    m.clone().singular_values().max()
}

fn check_z(z: &[Complex64], dim: usize) -> Result<()> {
    if z.len() != dim {
        return param("point and matrix dimensions differ");
    }
    if z.iter().any(|v| v.norm() == 0.0) {
        return param("zero coordinate");
    }
    Ok(())
}

pub fn t_bound_norms(g: &DMatrix<Complex64>, z: &[Complex64], cfg: &TBoundConfig) -> Result<TBoundReport> {
    let d = g.nrows();
    check_z(z, d)?;
    let conj = DMatrix::from_fn(d, d, |i, j| z[i] * g[(i, j)] / z[j]);
    let conj_bar = DMatrix::from_fn(d, d, |i, j| g[(i, j)] * z[j].conj() / z[i].conj());
    let det = g.clone().determinant().norm();
    let norm_inv_conj = if det >= cfg.det_floor {
        g.clone().try_inverse().map(|inv| {
            opnorm(&DMatrix::from_fn(d, d, |i, j| z[i] * inv[(i, j)] / z[j]))
        })
    } else {
        None
    };
    let norm_conj = opnorm(&conj);
    let norm_conj_bar = opnorm(&conj_bar);
    Ok(TBoundReport {
        norm_g: opnorm(g),
        norm_conj,
        norm_conj_bar,
        norm_inv_conj,
        det_lower: det,
        c_diag: (0..d).map(|i| g[(i, i)].norm()).fold(0.0, f64::max),
        t_bounded: norm_conj.max(norm_conj_bar) <= cfg.bound,
        inverse_t_bounded: norm_inv_conj.map_or(false, |v| v <= cfg.bound),
        ..Default::default()
    })
}

/// One constraint |g| ≤ C_T a + C_E b of an envelope fit.
#[derive(Clone, Copy, Debug)]
pub struct EnvelopeSample {
    pub g: f64,
    pub a: f64,
    pub b: f64,
}

/// Smallest C_T + C_E (both ≥ 0) satisfying every sample; ties prefer small C_E.
pub fn fit_envelope(samples: &[EnvelopeSample]) -> (f64, f64) {
    let active: Vec<&EnvelopeSample> = samples.iter().filter(|s| s.g > 0.0).collect();
    if active.is_empty() {
        return (0.0, 0.0);
    }
    let feasible = |ct: f64, ce: f64| {
        active
            .iter()
            .all(|s| s.g <= (ct * s.a + ce * s.b) * (1.0 + 1e-12) + 1e-300)
    };
    let mut cands: Vec<(f64, f64)> = Vec::new();
    if active.iter().all(|s| s.a > 0.0) {
        cands.push((active.iter().map(|s| s.g / s.a).fold(0.0, f64::max), 0.0));
    }
    if active.iter().all(|s| s.b > 0.0) {
        cands.push((0.0, active.iter().map(|s| s.g / s.b).fold(0.0, f64::max)));
    }
    for (i, p) in active.iter().enumerate() {
        if p.b == 0.0 && p.a > 0.0 {
            let ct = p.g / p.a;
            let ce = active
                .iter()
                .filter(|s| s.b > 0.0)
                .map(|s| ((s.g - ct * s.a) / s.b).max(0.0))
                .fold(0.0, f64::max);
            cands.push((ct, ce));
        }
        for q in &active[i + 1..] {
            let det = p.a * q.b - p.b * q.a;
            if det.abs() > 1e-300 {
                let ct = (p.g * q.b - p.b * q.g) / det;
                let ce = (p.a * q.g - p.g * q.a) / det;
                if ct >= 0.0 && ce >= 0.0 {
                    cands.push((ct, ce));
                }
            }
        }
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for (ct, ce) in cands {
        if feasible(ct, ce) {
            let better = ct + ce < best.0 + best.1 - 1e-15 * (ct + ce)
                || ((ct + ce - best.0 - best.1).abs() <= 1e-15 * (ct + ce) && ce < best.1);
            if better {
                best = (ct, ce);
            }
        }
    }
    best
}

/// Envelope samples of the off-diagonal entries of G at one point; `correction`
/// lists the index pairs allowed to carry the |z_0|² term.
pub fn envelope_samples(
    g: &DMatrix<Complex64>,
    z: &[Complex64],
    z0_abs: f64,
    correction: &dyn Fn(usize, usize) -> bool,
) -> Vec<EnvelopeSample> {
    let d = g.nrows();
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let (ri, rj) = (z[i].norm(), z[j].norm());
                out.push(EnvelopeSample {
                    g: g[(i, j)].norm(),
                    a: ri * rj,
                    b: if correction(i, j) { z0_abs * z0_abs / (ri * rj) } else { 0.0 },
                });
            }
        }
    }
    out
}

/// Split G into a diagonal part, a torically bounded part and an (I×J)
/// |z_0|²-correction and report the envelope constants.
pub fn strong_tbound_decompose(
    g: &DMatrix<Complex64>,
    z: &[Complex64],
    z0_abs: f64,
    part: (&[usize], &[usize]),
    cfg: &TBoundConfig,
) -> Result<TBoundReport> {
    let d = g.nrows();
    check_z(z, d)?;
    let zmin = z.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
    if z0_abs > zmin * (1.0 + 1e-12) {
        return param("|z_0| must not exceed min |z_k|");
    }
    let (ii, jj) = part;
    let corr = |i: usize, j: usize| (ii.contains(&i) && jj.contains(&j)) || (ii.contains(&j) && jj.contains(&i));
    let samples = envelope_samples(g, z, z0_abs, &corr);
    let (ct, ce) = fit_envelope(&samples);
    let mut rep = t_bound_norms(g, z, cfg)?;
    rep.torically_bounded_excess = samples
        .iter()
        .map(|s| (s.g - rep.c_diag * s.a).max(0.0))
        .fold(0.0, f64::max);
    rep.c_toric = ct;
    rep.c_error = ce;
    rep.strong_correction_norm = samples.iter().map(|s| ce * s.b).fold(0.0, f64::max);
    rep.strongly_t_bounded = rep.c_diag.max(ct).max(ce) <= cfg.bound;
    Ok(rep)
}

/// Envelope constants of the ω̌_t metric and the Darboux Jacobian at one t.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub t: f64,
    pub metric_diag: f64,
    pub metric_toric: f64,
    pub metric_error: f64,
    pub metric_conj: f64,
    pub jacobian: f64,
    pub jacobian_inverse: f64,
}

/// ω̌_t restricted to Y_t in the coordinates z_1..z_n.
pub fn model_metric_on_hypersurface(model: &LocalModel, z: &[Complex64]) -> Result<DMatrix<Complex64>> {
    let n = model.n();
    let g = model.model_metric(z)?;
    let p = model.p_model();
    let pv = p.eval(z);
    let pl = p.log_derivatives_raw(z);
    let q0 = Complex64::new(1.0, 0.0) - pl[0] / pv;
    let m = DMatrix::from_fn(n + 1, n, |a, k| {
        if a == 0 {
            z[0] / z[k + 1] * (pl[k + 1] / pv - 1.0) / q0
        } else if a == k + 1 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(m.transpose() * g * m.map(|v| v.conj()))
}

/// Envelope constants sampled along the model torus of `model`.
pub fn envelope_row(model: &LocalModel, shape: &[usize], cfg: &TBoundConfig) -> Result<EnvelopeRow> {
    let n = model.n();
    let chart = DarbouxChart::new(model.clone());
    let grid = Grid::new(shape)?;
    let part = model.part();
    // inner indices shifted to the z_1..z_n labelling
    let inner: Vec<usize> = part.inner().iter().filter(|&&k| k > 0).map(|k| k - 1).collect();
    let outer: Vec<usize> = part.outer().iter().map(|k| k - 1).collect();
    let corr = |i: usize, j: usize| {
        (inner.contains(&i) || outer.contains(&i)) && (inner.contains(&j) || outer.contains(&j))
    };
    let mut samples = Vec::new();
    let mut diag: f64 = 0.0;
    let mut conj: f64 = 0.0;
    let mut jac: f64 = 0.0;
    let mut jac_inv: f64 = 0.0;
    for x in grid.nodes() {
        let xi = model.model_xi(&x)?;
        let pt = chart.point(&xi)?;
        let z = &pt.z;
        let g = model_metric_on_hypersurface(model, z)?;
        let zs = &z[1..];
        let rep = t_bound_norms(&g, zs, cfg)?;
        diag = diag.max(rep.c_diag);
        conj = conj.max(rep.norm_conj.max(rep.norm_conj_bar));
        samples.extend(envelope_samples(&g, zs, z[0].norm(), &corr));
        let j = chart.jacobian(&xi)?;
        let inv = j.y_u.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(n, n));
        for a in 0..n {
            for b in 0..n {
                let (xa, xb) = (zs[a].norm_sqr(), zs[b].norm_sqr());
                jac = jac.max(j.y_u[(a, b)].abs() / xa.min(xb));
                jac_inv = jac_inv.max(inv[(a, b)].abs() * xa.max(xb));
            }
        }
    }
    let (ct, ce) = fit_envelope(&samples);
    Ok(EnvelopeRow {
        t: model.t(),
        metric_diag: diag,
        metric_toric: ct,
        metric_error: ce,
        metric_conj: conj,
        jacobian: jac,
        jacobian_inverse: jac_inv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    #[test]
    fn identity_is_t_bounded() {
        let g = DMatrix::<Complex64>::identity(3, 3);
        let z = [c(0.1), Complex64::new(0.0, 2.0), c(5.0)];
        let r = strong_tbound_decompose(&g, &z, 0.05, (&[0], &[1, 2]), &TBoundConfig::default()).unwrap();
        assert!((r.norm_conj - 1.0).abs() < 1e-14);
        assert!((r.norm_conj_bar - 1.0).abs() < 1e-14);
        assert!((r.norm_inv_conj.unwrap() - 1.0).abs() < 1e-14);
        assert_eq!((r.c_diag, r.c_toric, r.c_error), (1.0, 0.0, 0.0));
    }

    #[test]
    fn conjugated_norm_stays_bounded() {
        let mut last = f64::INFINITY;
        for e in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let z = [c(e), c(1.0)];
            let g = DMatrix::from_row_slice(2, 2, &[c(1.0), c(e), c(e), c(1.0)]);
            let r = t_bound_norms(&g, &z, &TBoundConfig::default()).unwrap();
            let direct = DMatrix::from_row_slice(2, 2, &[c(1.0), c(e * e), c(1.0), c(1.0)]);
            assert!((r.norm_conj - opnorm(&direct)).abs() < 1e-14);
            assert!(r.norm_conj <= last + 1e-12 && r.norm_conj < 2.0);
            last = r.norm_conj;
        }
    }

    #[test]
    fn toric_off_diagonal_has_no_excess() {
        let z = [c(0.1), c(0.1)];
        let g = DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.01), c(0.01), c(2.0)]);
        let r = strong_tbound_decompose(&g, &z, 0.01, (&[0], &[1]), &TBoundConfig::default()).unwrap();
        assert_eq!(r.torically_bounded_excess, 0.0);
    }

    #[test]
    fn pure_correction_entry_is_fitted_exactly() {
        let z = [c(0.05), c(0.05)];
        let z0 = 0.04;
        let e = 5.0 * z0 * z0 / (0.05 * 0.05);
        let g = DMatrix::from_row_slice(2, 2, &[c(1.0), c(e), c(0.0), c(1.0)]);
        let r = strong_tbound_decompose(&g, &z, z0, (&[0], &[1]), &TBoundConfig::default()).unwrap();
        assert!((r.c_error - 5.0).abs() < 1e-12 && r.c_toric == 0.0, "{r:?}");
        assert!(strong_tbound_decompose(&g, &z, 0.06, (&[0], &[1]), &TBoundConfig::default()).is_err());
    }

    #[test]
    fn zero_coordinate_is_rejected() {
        let g = DMatrix::<Complex64>::identity(2, 2);
        assert!(t_bound_norms(&g, &[c(0.0), c(1.0)], &TBoundConfig::default()).is_err());
    }

    #[test]
    fn lp_fit_is_optimal_on_a_grid() {
        let samples = [
            EnvelopeSample { g: 1.0, a: 1.0, b: 3.0 },
            EnvelopeSample { g: 2.0, a: 3.0, b: 1.0 },
            EnvelopeSample { g: 0.5, a: 0.2, b: 0.0 },
        ];
        let (ct, ce) = fit_envelope(&samples);
        let mut best = f64::INFINITY;
        for i in 0..=400 {
            for j in 0..=400 {
                let (a, b) = (i as f64 * 0.01, j as f64 * 0.01);
                if samples.iter().all(|s| s.g <= a * s.a + b * s.b + 1e-12) {
                    best = best.min(a + b);
                }
            }
        }
        assert!(ct + ce <= best + 1e-12 && ct + ce > best - 0.02);
    }
}
