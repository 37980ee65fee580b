use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use slagfib::config::Config;
use slagfib::darboux::DarbouxChart;
use slagfib::fibration::{chart_overlap_compare, export_atlas, fibre_csv, sweep, FibrationAtlas, FibreStatus};
use slagfib::flows::{flow_trace, FlowField, PhiField, VarphiField};
use slagfib::local_model::{lagrangian_residual, phase_residual, solve_eta, zeta_of, ModelForm};
use slagfib::tbound::envelope_row;
use slagfib::{Error, Result};

#[derive(Parser)]
#[command(name = "slagfib", version, about = "Special Lagrangian torus fibres of degenerating hypersurfaces")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// JSON configuration file; defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Checks the local model: η equation, model torus residuals, region.
    ModelCheck {
        /// Number of random η cases.
        #[arg(long, default_value_t = 1000)]
        cases: usize,
    },
    /// Solves one fibre.
    SolveFibre(SolveArgs),
    /// Solves the configured parameter grid and exports the atlas.
    Sweep,
    /// Compares the fibre in two overlapping charts.
    OverlapCheck {
        /// Largest accepted distance.
        #[arg(long, default_value_t = 1e-6)]
        max_distance: f64,
    },
    /// Flows the model torus.
    Flow {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long)]
        dump_trace: Option<PathBuf>,
    },
    /// Diagnostics.
    Diagnostics {
        #[command(subcommand)]
        which: Diagnostic,
    },
}

#[derive(Subcommand)]
enum Diagnostic {
    /// CSV of the fitted envelope constants against t.
    Tbound,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Varphi,
    Phi,
}

#[derive(Args)]
struct SolveArgs {
    /// Radii, comma separated, one per outer index.
    #[arg(long, value_delimiter = ',')]
    r: Option<Vec<f64>>,
    /// Offsets, comma separated, one per inner index.
    #[arg(long, value_delimiter = ',')]
    c: Option<Vec<f64>>,
    /// Grid size: one number for every axis or a comma separated shape.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    tol: Option<f64>,
    /// Include chart coordinates of every node in the output.
    #[arg(long)]
    dump_chart: bool,
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Exists(path.display().to_string()));
    }
    Ok(())
}

fn write(path: &Path, text: &str, force: bool) -> Result<()> {
    guard(path, force)?;
    fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn emit(g: &Global, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))? + "\n";
    match &g.out {
        Some(p) => write(p, &text, g.force),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn model_check(g: &Global, cfg: &Config, cases: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let mut worst_residual: f64 = 0.0;
    let mut zeta_ok = true;
    for _ in 0..cases {
        let m = rng.gen_range(2..6);
        let mut c: Vec<f64> = (0..m).map(|i| if i == 0 { 0.0 } else { rng.gen_range(0.0..1.0) }).collect();
        c.sort_by(f64::total_cmp);
        let kappa = 10f64.powf(rng.gen_range(-12.0..2.0));
        let eta = solve_eta(&c, kappa)?;
        let prod: f64 = c.iter().map(|ck| (ck + eta).ln()).sum();
        worst_residual = worst_residual.max((prod - kappa.ln()).abs() / kappa.ln().abs().max(1.0));
        let z = zeta_of(&c, eta);
        zeta_ok &= z >= 1.0 / m as f64 - 1e-15 && z <= 1.0 + 1e-15;
    }
    let spec = cfg.chart()?;
    let model = spec.model(&cfg.params())?;
    let torus = model.model_torus(&cfg.grid)?;
    let lag = lagrangian_residual(&torus, &ModelForm(&model))?;
    let ph = phase_residual(&torus, model.p_model())?;
    let ctx = spec.context(&cfg.params());
    emit(
        g,
        &json!({
            "eta_cases": cases,
            "eta_worst_log_residual": worst_residual,
            "zeta_in_range": zeta_ok,
            "nu": model.nu(),
            "eta_check": model.eta_check(),
            "model_lagrangian_residual": lag,
            "model_phase_residual": ph,
            "normal_region": ctx.is_ok(),
        }),
    )?;
    if !zeta_ok || worst_residual > 1e-12 {
        return Err(Error::Verification("η suite failed".into()));
    }
    ctx.map(|_| ())
}

fn solve_fibre(g: &Global, cfg: &mut Config, a: &SolveArgs) -> Result<()> {
    if let Some(r) = &a.r {
        cfg.r = r.clone();
    }
    if let Some(c) = &a.c {
        cfg.c = c.clone();
    }
    if let Some(grid) = &a.grid {
        cfg.grid = if grid.len() == 1 { vec![grid[0]; cfg.n] } else { grid.clone() };
    }
    if let Some(t) = a.tol {
        cfg.solver.tol = t;
    }
    let spec = cfg.chart()?;
    let ctx = spec.context(&cfg.params())?;
    let sol = ctx.solve(&vec![0.0; cfg.n])?;
    let v = ctx.verify(&sol)?;
    let d = ctx.deformation_one_forms(&sol)?;
    let mut out = json!({
        "params": cfg.params(),
        "grid": cfg.grid,
        "nu": ctx.nu(),
        "history": sol.history,
        "residual": sol.residual,
        "ellipticity": sol.ellipticity,
        "verification": v,
        "min_diag": d.min_diag,
        "moduli": ctx.moduli(&sol.sigma),
        "h": sol.h,
    });
    if a.dump_chart {
        out["chart_coords"] = json!(sol.embedding.chart_coords());
        out["csv"] = json!(fibre_csv(&sol)?);
    }
    emit(g, &out)?;
    let t = &cfg.verify;
    if v.phase_residual > t.phase || v.lagrangian_residual > t.lagrangian || d.min_diag.iter().any(|&m| m < t.min_diag) {
        return Err(Error::Verification(format!(
            "phase {:e}, Lagrangian {:e}, min_diag {:?}",
            v.phase_residual, v.lagrangian_residual, d.min_diag
        )));
    }
    Ok(())
}

fn run_sweep(g: &Global, cfg: &Config) -> Result<()> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("atlas"));
    guard(&dir.join("index.json"), g.force)?;
    let spec = cfg.chart()?;
    let chart = sweep(&spec, &cfg.params(), &cfg.sweep.steps, cfg.sweep.points)?;
    let bad: Vec<String> = chart
        .fibres
        .iter()
        .filter(|f| f.status != FibreStatus::Verified)
        .map(|f| format!("{:?}: {:?} {}", f.index, f.status, f.message.clone().unwrap_or_default()))
        .collect();
    let disjoint = chart.min_pairwise_distance.map_or(true, |d| d > 0.0);
    let atlas = FibrationAtlas { t: cfg.t, grid: cfg.grid.clone(), charts: vec![chart], overlaps: vec![] };
    let files = export_atlas(&atlas, &dir, g.force)?;
    eprintln!("wrote {} files to {}", files.len(), dir.display());
    if !bad.is_empty() || !disjoint {
        return Err(Error::Verification(format!("unverified fibres: {bad:?}, disjoint: {disjoint}")));
    }
    Ok(())
}

fn overlap(g: &Global, cfg: &Config, max_distance: f64) -> Result<()> {
    let o = &cfg.overlap;
    let a = cfg.chart_with(&cfg.inner, &o.grid, &cfg.region)?;
    let b = cfg.chart_with(&o.inner_b, &o.grid, &o.region_b)?;
    let rec = chart_overlap_compare(&a, &b, &cfg.params(), &o.perturbation, o.max_matching, o.matching_tol)?;
    emit(g, &serde_json::to_value(&rec).map_err(|e| Error::Config(e.to_string()))?)?;
    if rec.distance > max_distance {
        return Err(Error::Verification(format!("distance {:e} exceeds {max_distance:e}", rec.distance)));
    }
    Ok(())
}

fn flow(g: &Global, cfg: &Config, kind: Kind, steps: usize, s: f64, dump: Option<&Path>) -> Result<()> {
    if let Some(p) = dump {
        guard(p, g.force)?;
    }
    let model = cfg.chart()?.model(&cfg.params())?;
    let grid = slagfib::spectral::Grid::new(&cfg.grid)?;
    let xis = grid.nodes().iter().map(|x| model.model_xi(x)).collect::<Result<Vec<_>>>()?;
    let chart = DarbouxChart::new(model.clone());
    let field: Box<dyn FlowField + '_> = match kind {
        Kind::Varphi => Box::new(VarphiField { chart: &chart }),
        Kind::Phi => Box::new(PhiField { model: &model }),
    };
    let trace = flow_trace(field.as_ref(), cfg.t, &xis, s, steps, 8.min(steps.max(1)))?;
    let first = &trace.states[0];
    let last = trace.states.last().unwrap();
    let displacement = first
        .iter()
        .zip(last)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).norm()))
        .fold(0.0, f64::max);
    emit(
        g,
        &json!({
            "s": s,
            "steps": steps,
            "hypersurface_residual": trace.residual_max,
            "max_displacement": displacement,
        }),
    )?;
    if let Some(p) = dump {
        let text = serde_json::to_string(&trace).map_err(|e| Error::Config(e.to_string()))?;
        write(p, &text, g.force)?;
    }
    Ok(())
}

fn tbound(g: &Global, cfg: &Config) -> Result<()> {
    let mut csv = String::from("t,metric_diag,metric_toric,metric_error,metric_conj,jacobian,jacobian_inverse\n");
    for &t in &cfg.tbound.t_values {
        let c = Config { t, ..cfg.clone() };
        let model = c.chart()?.model(&c.params())?;
        let r = envelope_row(&model, &cfg.tbound.grid, &cfg.tbound.config)?;
        csv.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.t, r.metric_diag, r.metric_toric, r.metric_error, r.metric_conj, r.jacobian, r.jacobian_inverse
        ));
    }
    match &g.out {
        Some(p) => write(p, &csv, g.force),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(t) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match &cli.cmd {
        Command::ModelCheck { cases } => model_check(g, &cfg, *cases),
        Command::SolveFibre(a) => solve_fibre(g, &mut cfg, a),
        Command::Sweep => run_sweep(g, &cfg),
        Command::OverlapCheck { max_distance } => overlap(g, &cfg, *max_distance),
        Command::Flow { kind, steps, s, dump_trace } => flow(g, &cfg, *kind, *steps, *s, dump_trace.as_deref()),
        Command::Diagnostics { which: Diagnostic::Tbound } => tbound(g, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
