//! Families of solved fibres over a parameter grid, their tangent map, the
//! cross-chart coincidence check and a deterministic on-disk export.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::ambient::{DefiningPolynomial, PartitionedIndex, RegionConstants, ToricPotential};
use crate::darboux::DarbouxChart;
use crate::error::{Error, Result};
use crate::flows::{psi_inverse, FlowConfig};
use crate::local_model::{FibreEmbedding, LocalModel, ModelParams};
use crate::solver::{FibreContext, FibreSolution, SolverConfig};
use crate::spectral::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyThresholds {
    pub phase: f64,
    pub lagrangian: f64,
    pub min_diag: f64,
}

impl Default for VerifyThresholds {
    fn default() -> Self {
        VerifyThresholds { phase: 1e-8, lagrangian: 1e-8, min_diag: 0.5 }
    }
}

/// (r, c) of one local model; r follows `part.outer()`, c follows `part.inner()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub r: Vec<f64>,
    pub c: Vec<f64>,
}

/// Everything that fixes a chart except (r, c).
#[derive(Clone, Debug)]
pub struct ChartSpec {
    pub part: PartitionedIndex,
    pub pot: ToricPotential,
    pub poly: DefiningPolynomial,
    pub t: f64,
    pub grid: Vec<usize>,
    pub region: RegionConstants,
    pub solver: SolverConfig,
    pub verify: VerifyThresholds,
}

impl ChartSpec {
    pub fn n(&self) -> usize {
        self.part.n()
    }

    pub fn model(&self, p: &ParamPoint) -> Result<LocalModel> {
        LocalModel::new(
            ModelParams { part: self.part.clone(), r: p.r.clone(), c: p.c.clone(), t: self.t },
            self.pot.clone(),
            self.poly.clone(),
        )
    }

    pub fn context(&self, p: &ParamPoint) -> Result<FibreContext> {
        FibreContext::new(self.model(p)?, &self.grid, self.solver.clone(), &self.region)
    }

    /// Moves p by `offsets` in the normalised coordinates
    /// (c_k/ν_k² for the inner indices after 0, then log r_j), with ν taken at `nu`.
    pub fn displaced(&self, p: &ParamPoint, nu: &[f64], offsets: &[f64]) -> ParamPoint {
        let inner = self.part.inner();
        let mut q = p.clone();
        let mut o = offsets.iter();
        for (i, &k) in inner.iter().enumerate().skip(1) {
            q.c[i] += o.next().copied().unwrap_or(0.0) * nu[k - 1] * nu[k - 1];
        }
        for r in q.r.iter_mut() {
            *r *= o.next().copied().unwrap_or(0.0).exp();
        }
        q
    }

    /// Normalised coordinates of p relative to ν.
    pub fn normalized(&self, p: &ParamPoint, nu: &[f64]) -> Vec<f64> {
        let inner = self.part.inner();
        let mut v: Vec<f64> = inner.iter().enumerate().skip(1).map(|(i, &k)| p.c[i] / (nu[k - 1] * nu[k - 1])).collect();
        v.extend(p.r.iter().map(|r| r.ln()));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationBlock {
    pub residual: f64,
    pub phase_residual: f64,
    pub lagrangian_residual: f64,
    pub min_diag: Vec<f64>,
    pub ellipticity: f64,
    pub sup_h: f64,
    pub tail_fraction: f64,
    pub max_newton_steps: usize,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FibreStatus {
    Verified,
    Unverified,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FibreRecord {
    pub index: Vec<usize>,
    pub offsets: Vec<f64>,
    pub params: ParamPoint,
    pub status: FibreStatus,
    pub message: Option<String>,
    /// Normalised periods of the fibre read in the base chart.
    pub moduli: Option<Vec<f64>>,
    pub verification: Option<VerificationBlock>,
    #[serde(skip)]
    pub solution: Option<FibreSolution>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentMap {
    pub delta: f64,
    pub matrix: Vec<Vec<f64>>,
    pub min_singular: f64,
    pub condition: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtlasChart {
    pub inner: Vec<usize>,
    pub base: ParamPoint,
    pub nu_base: Vec<f64>,
    pub steps: Vec<f64>,
    pub points: usize,
    pub fibres: Vec<FibreRecord>,
    pub min_pairwise_distance: Option<f64>,
    pub tangent: Option<TangentMap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapRecord {
    pub inner_a: Vec<usize>,
    pub inner_b: Vec<usize>,
    pub params_a: ParamPoint,
    pub params_b_guess: ParamPoint,
    pub params_b_initial: ParamPoint,
    pub params_b_matched: ParamPoint,
    pub lambda_hat: Vec<f64>,
    pub matching_iterations: usize,
    pub moduli_mismatch_initial: Vec<f64>,
    pub moduli_mismatch_matched: Vec<f64>,
    pub distance: f64,
    pub distance_unmatched: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FibrationAtlas {
    pub t: f64,
    pub grid: Vec<usize>,
    pub charts: Vec<AtlasChart>,
    pub overlaps: Vec<OverlapRecord>,
}

fn wrap(a: f64) -> f64 {
    a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor()
}

/// Normalised periods (1/2πν_k²)∮_{γ_k} Σ_j y_j dx_j of an embedded torus read
/// in the Darboux coordinates of `chart`.
pub fn moduli_in_chart(chart: &DarbouxChart, emb: &FibreEmbedding, flow: &FlowConfig) -> Result<Vec<f64>> {
    let n = chart.n();
    let grid = emb.grid()?;
    let pulled = emb
        .chart_coords()
        .par_iter()
        .map(|xi| {
            let xi0 = psi_inverse(chart, xi, 1.0, flow)?;
            let y = chart.y_of(&xi0)?;
            Ok((xi0[n..].to_vec(), y))
        })
        .collect::<Result<Vec<_>>>()?;
    let nodes = grid.nodes();
    let nu = chart.model.nu();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let per: Vec<f64> = pulled.iter().zip(&nodes).map(|((x, _), phi)| x[j] - phi[j]).collect();
        for (k, o) in out.iter_mut().enumerate() {
            let d = grid.diff(&per, k);
            let mut acc = 0.0;
            for (i, (_, y)) in pulled.iter().enumerate() {
                let dx = d[i] + if j == k { 1.0 } else { 0.0 };
                acc += y[j] * dx;
            }
            *o += acc / pulled.len() as f64;
        }
    }
    Ok(out.iter().zip(&nu).map(|(v, nu)| v / (nu * nu)).collect())
}

/// Trigonometric model of an embedding as a function of the torus parameter.
struct EmbeddingInterp {
    n: usize,
    winding: Vec<Vec<i64>>,
    per: Vec<crate::spectral::Interpolant>,
}

impl EmbeddingInterp {
    fn new(emb: &FibreEmbedding) -> Result<Self> {
        let grid = emb.grid()?;
        let n = emb.n();
        Ok(EmbeddingInterp {
            n,
            winding: emb.winding.clone(),
            per: (0..=n).map(|k| grid.interpolant(&emb.periodic_part(&grid, k))).collect(),
        })
    }

    fn logs(&self, phi: &[f64]) -> (Vec<Complex64>, Vec<Vec<Complex64>>) {
        let mut w = Vec::with_capacity(self.n + 1);
        let mut dw = Vec::with_capacity(self.n + 1);
        for k in 0..=self.n {
            let (v, g) = self.per[k].eval(phi);
            let lin: f64 = (0..self.n).map(|j| self.winding[j][k] as f64 * phi[j]).sum();
            w.push(v + Complex64::new(0.0, lin));
            dw.push(
                g.iter()
                    .enumerate()
                    .map(|(j, d)| d + Complex64::new(0.0, self.winding[j][k] as f64))
                    .collect(),
            );
        }
        (w, dw)
    }

    /// log z at the parameter where (arg z_1, …, arg z_n) = θ.
    fn at_angles(&self, theta: &[f64]) -> Result<Vec<Complex64>> {
        let n = self.n;
        let mut phi = theta.to_vec();
        for _ in 0..50 {
            let (w, dw) = self.logs(&phi);
            let r: Vec<f64> = (0..n).map(|k| wrap(w[k + 1].im - theta[k])).collect();
            if r.iter().all(|v| v.abs() < 1e-14) {
                return Ok(w);
            }
            let jm = DMatrix::from_fn(n, n, |k, j| dw[k + 1][j].im);
            let step = jm
                .lu()
                .solve(&nalgebra::DVector::from_vec(r))
                .ok_or_else(|| Error::Degenerate("angle map is singular".into()))?;
            for (p, s) in phi.iter_mut().zip(step.iter()) {
                *p -= s;
            }
        }
        let (w, _) = self.logs(&phi);
        let r = (0..n).map(|k| wrap(w[k + 1].im - theta[k]).abs()).fold(0.0, f64::max);
        if r < 1e-10 {
            Ok(w)
        } else {
            Err(Error::Convergence(format!("angle inversion stalled at {r:e}")))
        }
    }
}

/// Symmetric sup-distance in log coordinates between two embedded tori, both
/// resampled at a common grid of angles (arg z_1, …, arg z_n).
pub fn embedding_distance(a: &FibreEmbedding, b: &FibreEmbedding) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::InvalidParameter("embeddings of different dimension".into()));
    }
    let shape: Vec<usize> = a.grid_shape.iter().zip(&b.grid_shape).map(|(x, y)| *x.max(y)).collect();
    let common = Grid::new(&shape)?;
    let (ia, ib) = (EmbeddingInterp::new(a)?, EmbeddingInterp::new(b)?);
    let d = common
        .nodes()
        .par_iter()
        .map(|theta| {
            let wa = ia.at_angles(theta)?;
            let wb = ib.at_angles(theta)?;
            Ok(wa
                .iter()
                .zip(&wb)
                .map(|(x, y)| (x.re - y.re).abs().max(wrap(x.im - y.im).abs()))
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

/// Smallest distance between any two nodes of two embeddings, in log coordinates.
pub fn min_node_distance(a: &FibreEmbedding, b: &FibreEmbedding) -> f64 {
    a.logs
        .iter()
        .map(|p| {
            b.logs
                .iter()
                .map(|q| {
                    p[1..]
                        .iter()
                        .zip(&q[1..])
                        .map(|(x, y)| {
                            let re = x.re - y.re;
                            let im = wrap(x.im - y.im);
                            re * re + im * im
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn solve_point(spec: &ChartSpec, p: &ParamPoint, base: &DarbouxChart) -> (FibreStatus, Option<String>, Option<Vec<f64>>, Option<VerificationBlock>, Option<FibreSolution>) {
    let ctx = match spec.context(p) {
        Ok(c) => c,
        Err(e @ Error::RegionExit(_)) => return (FibreStatus::Skipped, Some(e.to_string()), None, None, None),
        Err(e) => return (FibreStatus::Failed, Some(e.to_string()), None, None, None),
    };
    let run = || -> Result<(VerificationBlock, Vec<f64>, FibreSolution)> {
        let sol = ctx.solve(&vec![0.0; spec.n()])?;
        let v = ctx.verify(&sol)?;
        let d = ctx.deformation_one_forms(&sol)?;
        let moduli = moduli_in_chart(base, &sol.embedding, &spec.solver.flow)?;
        let passed = v.phase_residual <= spec.verify.phase
            && v.lagrangian_residual <= spec.verify.lagrangian
            && d.min_diag.iter().all(|&m| m >= spec.verify.min_diag);
        let block = VerificationBlock {
            residual: sol.residual,
            phase_residual: v.phase_residual,
            lagrangian_residual: v.lagrangian_residual,
            min_diag: d.min_diag,
            ellipticity: sol.ellipticity,
            sup_h: v.sup_h,
            tail_fraction: v.tail_fraction,
            max_newton_steps: sol.history.iter().map(|h| h.newton_steps).max().unwrap_or(0),
            passed,
        };
        Ok((block, moduli, sol))
    };
    match run() {
        Ok((block, moduli, sol)) => {
            let status = if block.passed { FibreStatus::Verified } else { FibreStatus::Unverified };
            (status, None, Some(moduli), Some(block), Some(sol))
        }
        Err(e) => (FibreStatus::Failed, Some(e.to_string()), None, None, None),
    }
}

fn grid_offsets(steps: &[f64], points: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let dim = steps.len();
    let total = points.pow(dim as u32);
    let mid = (points as f64 - 1.0) / 2.0;
    (0..total)
        .map(|mut flat| {
            let mut idx = vec![0; dim];
            for a in (0..dim).rev() {
                idx[a] = flat % points;
                flat /= points;
            }
            let off = idx.iter().zip(steps).map(|(&i, s)| s * (i as f64 - mid)).collect();
            (idx, off)
        })
        .collect()
}

/// Solves every point of a `points`^n grid of normalised offsets around `base`.
pub fn sweep(spec: &ChartSpec, base: &ParamPoint, steps: &[f64], points: usize) -> Result<AtlasChart> {
    let n = spec.n();
    if steps.len() != n || points == 0 {
        return Err(Error::InvalidParameter(format!("sweep needs {n} steps and at least one point per axis")));
    }
    let base_model = spec.model(base)?;
    let nu_base = base_model.nu();
    let base_chart = DarbouxChart::new(base_model);
    let pts = grid_offsets(steps, points);
    let fibres: Vec<FibreRecord> = pts
        .par_iter()
        .map(|(idx, off)| {
            let params = spec.displaced(base, &nu_base, off);
            let (status, message, moduli, verification, solution) = solve_point(spec, &params, &base_chart);
            FibreRecord {
                index: idx.clone(),
                offsets: off.clone(),
                params,
                status,
                message,
                moduli,
                verification,
                solution,
            }
        })
        .collect();
    let solved: Vec<&FibreSolution> = fibres.iter().filter_map(|f| f.solution.as_ref()).collect();
    let mut min_pairwise: Option<f64> = None;
    for i in 0..solved.len() {
        for j in i + 1..solved.len() {
            let d = min_node_distance(&solved[i].embedding, &solved[j].embedding);
            min_pairwise = Some(min_pairwise.map_or(d, |m: f64| m.min(d)));
        }
    }
    let tangent = if points % 2 == 1 && points >= 3 {
        central_tangent(&fibres, steps, points)
    } else {
        None
    };
    Ok(AtlasChart {
        inner: spec.part.inner().to_vec(),
        base: base.clone(),
        nu_base,
        steps: steps.to_vec(),
        points,
        fibres,
        min_pairwise_distance: min_pairwise,
        tangent,
    })
}

fn tangent_from_columns(cols: Vec<Vec<f64>>, delta: f64) -> TangentMap {
    let n = cols.len();
    let m = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    TangentMap {
        delta,
        matrix: (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect(),
        min_singular: smin,
        condition: smax / smin,
    }
}

// central differences of the stored moduli around the middle of an odd grid
fn central_tangent(fibres: &[FibreRecord], steps: &[f64], points: usize) -> Option<TangentMap> {
    let n = steps.len();
    let mid = points / 2;
    let find = |idx: &[usize]| fibres.iter().find(|f| f.index == idx).and_then(|f| f.moduli.clone());
    let mut cols = Vec::with_capacity(n);
    for a in 0..n {
        let mut ip = vec![mid; n];
        let mut im = vec![mid; n];
        ip[a] += 1;
        im[a] -= 1;
        let (p, m) = (find(&ip)?, find(&im)?);
        cols.push(p.iter().zip(&m).map(|(x, y)| (x - y) / (2.0 * steps[a])).collect());
    }
    let delta = steps.iter().fold(0.0, |a: f64, b| a.max(b.abs()));
    Some(tangent_from_columns(cols, delta))
}

/// Central-difference derivative of the normalised moduli (read in the base
/// chart) with respect to the normalised parameters, with step δ.
pub fn tangent_map(spec: &ChartSpec, base: &ParamPoint, delta: f64) -> Result<TangentMap> {
    let n = spec.n();
    let base_model = spec.model(base)?;
    let nu = base_model.nu();
    let chart = DarbouxChart::new(base_model);
    let stencil: Vec<(usize, f64)> = (0..n).flat_map(|a| [(a, delta), (a, -delta)]).collect();
    let moduli = stencil
        .par_iter()
        .map(|&(a, d)| {
            let mut off = vec![0.0; n];
            off[a] = d;
            let p = spec.displaced(base, &nu, &off);
            let ctx = spec.context(&p).map_err(|e| name_point(&p, e))?;
            let sol = ctx.solve(&vec![0.0; n]).map_err(|e| name_point(&p, e))?;
            moduli_in_chart(&chart, &sol.embedding, &spec.solver.flow)
        })
        .collect::<Result<Vec<_>>>()?;
    let cols = (0..n)
        .map(|a| {
            moduli[2 * a]
                .iter()
                .zip(&moduli[2 * a + 1])
                .map(|(p, m)| (p - m) / (2.0 * delta))
                .collect()
        })
        .collect();
    Ok(tangent_from_columns(cols, delta))
}

fn name_point(p: &ParamPoint, e: Error) -> Error {
    match e {
        Error::Convergence(m) => Error::Convergence(format!("at r = {:?}, c = {:?}: {m}", p.r, p.c)),
        Error::RegionExit(m) => Error::RegionExit(format!("at r = {:?}, c = {:?}: {m}", p.r, p.c)),
        other => other,
    }
}

/// Solves the fibre of `params_a` in chart A and the matching fibre in the
/// chart with inner indices `spec_b.part.inner()`, then measures their distance.
/// The refinement starts from the standard initial guess moved by `perturbation`
/// (normalised coordinates of chart B); `distance_unmatched` uses that start as is.
pub fn chart_overlap_compare(
    spec_a: &ChartSpec,
    spec_b: &ChartSpec,
    params_a: &ParamPoint,
    perturbation: &[f64],
    max_matching: usize,
    matching_tol: f64,
) -> Result<OverlapRecord> {
    let n = spec_a.n();
    let (ia, ib) = (spec_a.part.inner(), spec_b.part.inner());
    if !ia.iter().all(|k| ib.contains(k)) || ia.len() == ib.len() {
        return Err(Error::InvalidParameter(
            "chart B must have strictly more inner indices than chart A, containing them".into(),
        ));
    }
    let model_a = spec_a.model(params_a)?;
    // λ̂_k at the mean z' of the model fibre of A
    let torus = model_a.model_torus(&spec_a.grid)?;
    let pts = torus.points();
    let mut xs = vec![0.0; n + 1];
    for z in &pts {
        for (x, v) in xs.iter_mut().zip(z) {
            *x += v.norm_sqr() / pts.len() as f64;
        }
    }
    let mut lambda_hat = Vec::new();
    let mut c_b = Vec::with_capacity(ib.len());
    for &k in ib {
        if let Some(i) = ia.iter().position(|&v| v == k) {
            c_b.push(params_a.c[i]);
        } else {
            let j = spec_a.part.outer().iter().position(|&v| v == k).unwrap();
            let mut xb = xs.clone();
            for &i in ib {
                xb[i] = 0.0;
            }
            let lam = spec_b.pot.lambda(k, &spec_b.part).eval(&xb);
            lambda_hat.push(lam);
            c_b.push(lam * params_a.r[j] * params_a.r[j]);
        }
    }
    let r_b: Vec<f64> = spec_b
        .part
        .outer()
        .iter()
        .map(|k| params_a.r[spec_a.part.outer().iter().position(|v| v == k).unwrap()])
        .collect();
    let guess = ParamPoint { r: r_b, c: c_b };
    let nu0 = spec_b.model(&guess)?.nu();
    let initial = spec_b.displaced(&guess, &nu0, perturbation);

    let ctx_a = spec_a.context(params_a)?;
    let sol_a = ctx_a.solve(&vec![0.0; n])?;
    let flow = spec_b.solver.flow;
    let mismatch = |p: &ParamPoint| -> Result<Vec<f64>> {
        moduli_in_chart(&DarbouxChart::new(spec_b.model(p)?), &sol_a.embedding, &flow)
    };
    let m0 = mismatch(&initial)?;
    let mut current = initial.clone();
    let mut m = m0.clone();
    let mut iterations = 0;
    while m.iter().fold(0.0, |a: f64, b| a.max(b.abs())) > matching_tol {
        if iterations >= max_matching {
            return Err(Error::Convergence(format!("moduli matching did not converge: {m:?}")));
        }
        let h = 1e-6;
        let cols = (0..n)
            .into_par_iter()
            .map(|a| {
                let mut e = vec![0.0; n];
                e[a] = h;
                let mp = mismatch(&spec_b.displaced(&current, &nu0, &e))?;
                e[a] = -h;
                let mm = mismatch(&spec_b.displaced(&current, &nu0, &e))?;
                Ok(mp.iter().zip(&mm).map(|(p, q)| (p - q) / (2.0 * h)).collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let jm = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
        let step = jm
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&m))
            .ok_or_else(|| Error::Convergence("singular tangent map during matching".into()))?;
        let off: Vec<f64> = step.iter().map(|v| -v).collect();
        current = spec_b.displaced(&current, &nu0, &off);
        m = mismatch(&current)?;
        iterations += 1;
    }
    let sol_b = spec_b.context(&current)?.solve(&vec![0.0; n])?;
    let distance = embedding_distance(&sol_a.embedding, &sol_b.embedding)?;
    let sol_b0 = spec_b.context(&initial)?.solve(&vec![0.0; n])?;
    let distance_unmatched = embedding_distance(&sol_a.embedding, &sol_b0.embedding)?;
    Ok(OverlapRecord {
        inner_a: ia.to_vec(),
        inner_b: ib.to_vec(),
        params_a: params_a.clone(),
        params_b_guess: guess,
        params_b_initial: initial,
        params_b_matched: current,
        lambda_hat,
        matching_iterations: iterations,
        moduli_mismatch_initial: m0,
        moduli_mismatch_matched: m,
        distance,
        distance_unmatched,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

/// CSV of one fibre: grid angles, then (Re, Im) log z_k for k = 0..n, then h.
pub fn fibre_csv(sol: &FibreSolution) -> Result<String> {
    let grid = Grid::new(&sol.grid_shape)?;
    let n = grid.dim();
    let mut s = String::new();
    let mut head: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    for k in 0..=n {
        head.push(format!("re_log_z{k}"));
        head.push(format!("im_log_z{k}"));
    }
    head.push("h".into());
    s.push_str(&head.join(","));
    s.push('\n');
    for (i, row) in sol.embedding.logs.iter().enumerate() {
        let mut cells: Vec<String> = grid.node(i).iter().map(|v| format!("{v:.16e}")).collect();
        for w in row {
            cells.push(format!("{:.16e}", w.re));
            cells.push(format!("{:.16e}", w.im));
        }
        cells.push(format!("{:.16e}", sol.h[i]));
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    Ok(s)
}

/// Writes `index.json` (sorted keys) and one CSV per solved fibre into `dir`.
pub fn export_atlas(atlas: &FibrationAtlas, dir: &Path, force: bool) -> Result<Vec<std::path::PathBuf>> {
    let index = dir.join("index.json");
    if index.exists() && !force {
        return Err(Error::Exists(index.display().to_string()));
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    let mut value = serde_json::to_value(atlas).map_err(|e| Error::Config(e.to_string()))?;
    for (ci, chart) in atlas.charts.iter().enumerate() {
        for (fi, f) in chart.fibres.iter().enumerate() {
            let Some(sol) = &f.solution else { continue };
            let name = format!("chart{ci}_fibre{fi:03}.csv");
            let path = dir.join(&name);
            std::fs::write(&path, fibre_csv(sol)?).map_err(|e| io_err(&path, e))?;
            value["charts"][ci]["fibres"][fi]["csv"] = serde_json::Value::String(name);
            written.push(path);
        }
    }
    let text = serde_json::to_string_pretty(&value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&index, text + "\n").map_err(|e| io_err(&index, e))?;
    written.insert(0, index);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;

    fn small_spec(grid: &[usize]) -> (ChartSpec, ParamPoint) {
        let cfg = Config { grid: grid.to_vec(), ..Config::default() };
        (cfg.chart().unwrap(), cfg.params())
    }

    #[test]
    fn offsets_are_centred_and_row_major() {
        let g = grid_offsets(&[0.1, 0.2], 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0].0, vec![0, 0]);
        assert_eq!(g[1].0, vec![0, 1]);
        assert!((g[4].1[0]).abs() < 1e-15 && (g[4].1[1]).abs() < 1e-15);
        assert!((g[0].1[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn displaced_and_normalized_agree() {
        let (spec, p) = small_spec(&[4, 8]);
        let nu = spec.model(&p).unwrap().nu();
        let q = spec.displaced(&p, &nu, &[0.3, -0.2]);
        let a = spec.normalized(&p, &nu);
        let b = spec.normalized(&q, &nu);
        assert!((b[0] - a[0] - 0.3).abs() < 1e-12);
        assert!((b[1] - a[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn moduli_read_back_the_graph_offset() {
        let (spec, p) = small_spec(&[4, 16]);
        let ctx = spec.context(&p).unwrap();
        let nu = ctx.nu();
        let sigma = [0.01 * nu[0] * nu[0], -0.02 * nu[1] * nu[1]];
        let h: Vec<f64> = ctx.grid.nodes().iter().map(|x| 1e-4 * (x[0] + 2.0 * x[1]).sin()).collect();
        let emb = ctx.embed(&h, &sigma, 1.0).unwrap();
        let v = moduli_in_chart(&ctx.chart, &emb, &spec.solver.flow).unwrap();
        assert!((v[0] - 0.01).abs() < 1e-10 && (v[1] + 0.02).abs() < 1e-10, "{v:?}");
        assert!(embedding_distance(&emb, &emb).unwrap() < 1e-13);
    }

    #[test]
    fn distance_sees_a_radial_shift() {
        let (spec, p) = small_spec(&[4, 16]);
        let m = spec.model(&p).unwrap();
        let a = m.model_torus(&spec.grid).unwrap();
        let mut b = a.clone();
        for row in b.logs.iter_mut() {
            row[2].re += 1e-3;
        }
        let d = embedding_distance(&a, &b).unwrap();
        assert!((d - 1e-3).abs() < 1e-12, "{d:e}");
        assert!(min_node_distance(&a, &b) > 0.0);
    }

    #[test]
    fn export_refuses_overwrite_and_is_sorted() {
        let atlas = FibrationAtlas { t: 0.01, grid: vec![4, 8], charts: vec![], overlaps: vec![] };
        let dir = tempfile::tempdir().unwrap();
        let files = export_atlas(&atlas, dir.path(), false).unwrap();
        assert_eq!(files.len(), 1);
        assert!(matches!(export_atlas(&atlas, dir.path(), false), Err(Error::Exists(_))));
        assert!(export_atlas(&atlas, dir.path(), true).is_ok());
        let text = std::fs::read_to_string(&files[0]).unwrap();
        let keys: Vec<usize> = ["charts", "grid", "overlaps", "t"]
            .iter()
            .map(|k| text.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }
}
