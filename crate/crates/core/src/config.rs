//! JSON run configuration.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::ambient::{DefiningPolynomial, PartitionedIndex, RegionConstants, ToricPotential};
use crate::error::{Error, Result};
use crate::fibration::{ChartSpec, ParamPoint, VerifyThresholds};
use crate::solver::SolverConfig;
use crate::tbound::TBoundConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Offsets per free parameter are `step * (i - (points - 1) / 2)`.
    pub steps: Vec<f64>,
    pub points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { steps: vec![0.1, 0.1], points: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlapConfig {
    pub inner_b: Vec<usize>,
    pub grid: Vec<usize>,
    pub region_b: RegionConstants,
    /// Offset of the matching start from the standard guess.
    pub perturbation: Vec<f64>,
    pub max_matching: usize,
    pub matching_tol: f64,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig {
            inner_b: vec![0, 1, 2],
            grid: vec![8, 32],
            region_b: RegionConstants {
                c: 100.0,
                c2: 10.0,
                c4: 100.0,
                ..RegionConstants::default()
            },
            perturbation: vec![0.01, 0.01],
            max_matching: 8,
            matching_tol: 1e-11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TBoundSweep {
    pub t_values: Vec<f64>,
    pub grid: Vec<usize>,
    pub config: TBoundConfig,
}

impl Default for TBoundSweep {
    fn default() -> Self {
        TBoundSweep {
            t_values: vec![1e-2, 1e-3, 1e-4],
            grid: vec![8, 16],
            config: TBoundConfig::default(),
        }
    }
}

/// Top-level configuration; every field has a default giving the reference
/// instance p = 2 + z_2 on n = 2 with I'' = {0, 1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub n: usize,
    pub inner: Vec<usize>,
    /// Monomials of ρ in |z_k|², empty for the flat potential.
    pub potential: Vec<(Vec<u32>, f64)>,
    /// Monomials of p with complex coefficients [re, im].
    pub polynomial: Vec<(Vec<i32>, [f64; 2])>,
    pub t: f64,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub grid: Vec<usize>,
    pub solver: SolverConfig,
    pub region: RegionConstants,
    pub verify: VerifyThresholds,
    pub sweep: SweepConfig,
    pub overlap: OverlapConfig,
    pub tbound: TBoundSweep,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            n: 2,
            inner: vec![0, 1],
            potential: Vec::new(),
            polynomial: vec![(vec![0, 0, 0], [2.0, 0.0]), (vec![0, 0, 1], [1.0, 0.0])],
            t: 0.01,
            r: vec![1.0],
            c: vec![0.0, 0.01],
            grid: vec![8, 64],
            solver: SolverConfig::default(),
            region: RegionConstants { epsilon_max: 0.25, c3: 0.5, ..RegionConstants::default() },
            verify: VerifyThresholds::default(),
            sweep: SweepConfig::default(),
            overlap: OverlapConfig::default(),
            tbound: TBoundSweep::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn partition(&self) -> Result<PartitionedIndex> {
        PartitionedIndex::new(self.n, &self.inner)
    }

    pub fn potential(&self) -> Result<ToricPotential> {
        if self.potential.is_empty() {
            Ok(ToricPotential::flat(self.n))
        } else {
            ToricPotential::new(self.n + 1, self.potential.clone())
        }
    }

    pub fn polynomial(&self) -> Result<DefiningPolynomial> {
        DefiningPolynomial::new(
            self.n + 1,
            self.polynomial
                .iter()
                .map(|(e, c)| (e.clone(), Complex64::new(c[0], c[1])))
                .collect(),
        )
    }

    pub fn params(&self) -> ParamPoint {
        ParamPoint { r: self.r.clone(), c: self.c.clone() }
    }

    pub fn chart(&self) -> Result<ChartSpec> {
        self.chart_with(&self.inner, &self.grid, &self.region)
    }

    pub fn chart_with(&self, inner: &[usize], grid: &[usize], region: &RegionConstants) -> Result<ChartSpec> {
        if !(self.t > 0.0) {
            return Err(Error::InvalidParameter("t must be positive".into()));
        }
        Ok(ChartSpec {
            part: PartitionedIndex::new(self.n, inner)?,
            pot: self.potential()?,
            poly: self.polynomial()?,
            t: self.t,
            grid: grid.to_vec(),
            region: region.clone(),
            solver: self.solver.clone(),
            verify: self.verify.clone(),
        })
    }
}
