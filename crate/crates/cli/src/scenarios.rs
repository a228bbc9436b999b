//! Scenario plans built from a configuration and their execution.
//!
//! Building a plan reads (and so validates) every key the scenario uses; running it
//! produces tables and checks without touching the file system.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use ensemble_core::clebsch::run_identity_trials;
use ensemble_core::ensemble::{density_estimate, init_pure, step};
use ensemble_core::fluid::{step_fluid, step_hj_with, FluidState, HJState, HjScheme, QuantumTerm};
use ensemble_core::hamiltonian::{HamiltonianModel, Potential};
use ensemble_core::numerics::{integrate, Boundary, Grid, RngStream, ScalarField, VectorField, MIN_POINTS};
use ensemble_core::psirep::{
    action_eval, gauge_map, phase_aligned_distance, stochastic_momentum, ActionFields, ActionParams, ActionVariant,
    WaveField,
};
use ensemble_core::schrodinger::{rms_width, step_linear, step_nonlinear, WaveSolverConfig};
use ensemble_core::worldfunc::{
    sigma_distorted, sigma_minkowski, DistortionParams, GapRule, SpacetimePoint, B_CGS, C_CGS, HBAR_CGS,
};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::compare::{pair_metrics, Series};
use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{num, Check, Table};

pub const WIDTH_TOL: f64 = 1e-3;
pub const NORM_TOL: f64 = 1e-8;
pub const MASS_TOL: f64 = 1e-8;
pub const ENSEMBLE_L1_TOL: f64 = 0.05;
pub const PSI_FLUID_L1_TOL: f64 = 1e-2;
pub const HJ_TOL: f64 = 1e-3;
pub const GAUGE_TOL: f64 = 1e-4;
/// The exchanged exponent must miss by at least this factor over [`GAUGE_TOL`].
pub const GAUGE_MARGIN: f64 = 1e2;
pub const STATIONARITY_ORDER: f64 = 1.9;
pub const HOMOGENEITY_TOL: f64 = 1e-12;
pub const IDENTITY_TOL: f64 = 1e-6;
pub const IDENTITY_RATIO: (f64, f64) = (3.0, 5.0);
pub const WORLDFUNC_TOL: f64 = 1e-12;

/// Tables and checks of one scenario; `children` are sub-runs written to their own
/// directories.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub tables: Vec<(String, Table)>,
    pub checks: Vec<Check>,
    pub children: Vec<(String, RunOutput)>,
    pub wall_clock_seconds: f64,
}

impl RunOutput {
    fn new() -> Self {
        Self {
            tables: Vec::new(),
            checks: Vec::new(),
            children: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[derive(Debug, Clone, Copy)]
struct Initial {
    center: f64,
    sigma: f64,
    momentum: f64,
    chirp: f64,
}

impl Initial {
    /// Phase function `S` with `dS/dx = momentum + chirp x`.
    fn action(&self, x: f64) -> f64 {
        self.momentum * x + 0.5 * self.chirp * x * x
    }

    /// Normalized Gaussian `sqrt(rho) exp(i S / scale)`.
    fn wave(&self, grid: &Grid, scale: f64) -> Result<WaveField> {
        let s2 = 4.0 * self.sigma * self.sigma;
        let psi = WaveField::from_fn(grid, 1, |x| {
            let d = x[0] - self.center;
            vec![Complex64::from_polar((-d * d / s2).exp(), self.action(x[0]) / scale)]
        })?;
        Ok(psi.normalized()?)
    }

    fn density(&self, grid: &Grid) -> Result<ScalarField> {
        Ok(self.wave(grid, 1.0)?.density())
    }

    fn momentum_field(&self, grid: &Grid) -> Result<VectorField> {
        let p = ScalarField::from_fn(grid, |x| self.momentum + self.chirp * x[0])?;
        Ok(VectorField::new(vec![p])?)
    }
}

/// Output every `steps` steps of size `dt`, `frames` times after the initial frame.
#[derive(Debug, Clone, Copy)]
struct Schedule {
    dt: f64,
    frames: usize,
    steps: usize,
}

impl Schedule {
    fn time(&self, frame: usize) -> f64 {
        (frame * self.steps) as f64 * self.dt
    }
}

#[derive(Debug, Clone, Copy)]
struct Constants {
    mass: f64,
    hbar: f64,
    light_speed: f64,
}

#[derive(Debug, Clone)]
pub struct WavePlan {
    grid: Grid,
    k: Constants,
    init: Initial,
    sched: Schedule,
}

#[derive(Debug, Clone)]
pub struct FluidPlan {
    grid: Grid,
    k: Constants,
    b0: f64,
    lambda: f64,
    potential: Potential,
    init: Initial,
    sched: Schedule,
}

#[derive(Debug, Clone)]
pub struct EnsemblePlan {
    grid: Grid,
    mass: f64,
    b0: f64,
    potential: Potential,
    init: Initial,
    sched: Schedule,
    samples: usize,
    bandwidth: f64,
    seed: u64,
}

#[derive(Debug, Clone)]
pub struct HjPlan {
    grid: Grid,
    mass: f64,
    potential: Potential,
    init: Initial,
    sched: Schedule,
    scheme: HjScheme,
}

#[derive(Debug, Clone)]
pub struct GaugePlan {
    grid: Grid,
    k: Constants,
    b0: f64,
    init: Initial,
    sched: Schedule,
}

#[derive(Debug, Clone)]
pub struct ActionPlan {
    grid: Grid,
    k: Constants,
    b0: f64,
    lambda: f64,
    potential: Potential,
    init: Initial,
    dt: f64,
    levels: usize,
}

#[derive(Debug, Clone)]
pub struct IdentityPlan {
    dims: Vec<usize>,
    trials: usize,
    h: f64,
    seed: u64,
}

#[derive(Debug, Clone)]
pub struct WorldPlan {
    params: DistortionParams,
    pairs: Vec<(SpacetimePoint, SpacetimePoint)>,
}

#[derive(Debug, Clone)]
pub enum Plan {
    Wave(WavePlan),
    Fluid(FluidPlan),
    Ensemble(EnsemblePlan),
    Hj(HjPlan),
    Gauge(GaugePlan),
    Action(ActionPlan),
    Identities(IdentityPlan),
    World(WorldPlan),
    /// Sub-runs in name order.
    Compare(Vec<(String, Plan)>),
}

/// Member scenarios of `compare`, in output order.
pub const COMPARE_MEMBERS: [&str; 3] = ["schrodinger-free", "fluid-quantum", "ensemble-classical"];

impl Plan {
    /// Reads every key the scenario uses, then rejects any key left over.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        let plan = Self::build(cfg, &cfg.scenario)?;
        cfg.get::<String>("output", "dir", String::new())?;
        cfg.check_all_used()?;
        Ok(plan)
    }

    fn build(cfg: &ExperimentConfig, scenario: &str) -> Result<Self, ConfigError> {
        Ok(match scenario {
            "schrodinger-free" => Plan::Wave(WavePlan {
                grid: grid(cfg)?,
                k: constants(cfg)?,
                init: initial(cfg)?,
                sched: schedule(cfg)?,
            }),
            "fluid-quantum" => Plan::Fluid(FluidPlan {
                grid: grid(cfg)?,
                k: constants(cfg)?,
                b0: positive(cfg, "clebsch", "b0", 1.0)?,
                lambda: non_negative(cfg, "model", "lambda", 0.5)?,
                potential: potential(cfg)?,
                init: initial(cfg)?,
                sched: schedule(cfg)?,
            }),
            "ensemble-classical" => Plan::Ensemble(EnsemblePlan {
                grid: grid(cfg)?,
                mass: positive(cfg, "model", "mass", 1.0)?,
                b0: positive(cfg, "clebsch", "b0", 1.0)?,
                potential: potential(cfg)?,
                init: initial(cfg)?,
                sched: schedule(cfg)?,
                samples: count(cfg, "solver", "samples", 100_000)?,
                bandwidth: positive(cfg, "solver", "bandwidth", 0.1)?,
                seed: cfg.seed,
            }),
            "hj" => Plan::Hj(HjPlan {
                grid: grid(cfg)?,
                mass: positive(cfg, "model", "mass", 1.0)?,
                potential: potential(cfg)?,
                init: initial(cfg)?,
                sched: schedule(cfg)?,
                scheme: match cfg.choice("solver", "scheme", &["godunov", "lax-friedrichs"], "godunov")?.as_str() {
                    "godunov" => HjScheme::Godunov,
                    _ => HjScheme::LaxFriedrichs,
                },
            }),
            "gauge-check" => Plan::Gauge(GaugePlan {
                grid: grid(cfg)?,
                k: constants(cfg)?,
                b0: positive(cfg, "clebsch", "b0", 2.0)?,
                init: initial(cfg)?,
                sched: schedule(cfg)?,
            }),
            "action-check" => {
                let levels = count(cfg, "solver", "levels", 21)?;
                if levels < 3 {
                    return Err(cfg.invalid("solver", "levels", "need at least 3 time levels"));
                }
                Plan::Action(ActionPlan {
                    grid: grid(cfg)?,
                    k: constants(cfg)?,
                    b0: positive(cfg, "clebsch", "b0", 1.0)?,
                    lambda: non_negative(cfg, "model", "lambda", 0.5)?,
                    potential: potential(cfg)?,
                    init: initial(cfg)?,
                    dt: positive(cfg, "solver", "dt", 1e-2)?,
                    levels,
                })
            }
            "verify-identities" => {
                let raw: String = cfg.get("identities", "dims", "2,3".to_string())?;
                let dims = raw
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().ok().filter(|n| (1..=3).contains(n)))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| cfg.invalid("identities", "dims", format!("expected a list of 1, 2 or 3, got '{raw}'")))?;
                Plan::Identities(IdentityPlan {
                    dims,
                    trials: count(cfg, "identities", "trials", 10)?,
                    h: positive(cfg, "identities", "h", 1e-3)?,
                    seed: cfg.seed,
                })
            }
            "worldfunc" => Plan::World(world_plan(cfg)?),
            "compare" => Plan::Compare(
                COMPARE_MEMBERS
                    .iter()
                    .map(|name| Ok((name.to_string(), Self::build(cfg, name)?)))
                    .collect::<Result<_, ConfigError>>()?,
            ),
            other => return Err(ConfigError::UnknownScenario(other.to_string())),
        })
    }

    pub fn run(&self) -> Result<RunOutput> {
        let start = std::time::Instant::now();
        let mut out = self.run_inner()?;
        out.wall_clock_seconds = start.elapsed().as_secs_f64();
        Ok(out)
    }

    fn run_inner(&self) -> Result<RunOutput> {
        match self {
            Plan::Wave(p) => run_wave(p),
            Plan::Fluid(p) => run_fluid(p),
            Plan::Ensemble(p) => run_ensemble(p),
            Plan::Hj(p) => run_hj(p),
            Plan::Gauge(p) => run_gauge(p),
            Plan::Action(p) => run_action(p),
            Plan::Identities(p) => run_identities(p),
            Plan::World(p) => run_world(p),
            Plan::Compare(members) => run_compare(members),
        }
    }
}

fn positive(cfg: &ExperimentConfig, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
    let v = cfg.get(section, key, default)?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(cfg.invalid(section, key, format!("must be positive and finite, got {v}")));
    }
    Ok(v)
}

fn non_negative(cfg: &ExperimentConfig, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
    let v = cfg.get(section, key, default)?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(cfg.invalid(section, key, format!("must be non-negative and finite, got {v}")));
    }
    Ok(v)
}

fn finite(cfg: &ExperimentConfig, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
    let v = cfg.get(section, key, default)?;
    if !v.is_finite() {
        return Err(cfg.invalid(section, key, "must be finite"));
    }
    Ok(v)
}

fn count(cfg: &ExperimentConfig, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
    let v = cfg.get(section, key, default)?;
    if v == 0 {
        return Err(cfg.invalid(section, key, "must be at least 1"));
    }
    Ok(v)
}

fn grid(cfg: &ExperimentConfig) -> Result<Grid, ConfigError> {
    let min = finite(cfg, "grid", "min", -10.0)?;
    let max = finite(cfg, "grid", "max", 10.0)?;
    if max <= min {
        return Err(cfg.invalid("grid", "max", format!("must exceed min = {min}")));
    }
    let points = cfg.get("grid", "points", 512usize)?;
    if points < MIN_POINTS {
        return Err(cfg.invalid("grid", "points", format!("need at least {MIN_POINTS} points")));
    }
    let boundary = match cfg.choice("grid", "boundary", &["clamped", "periodic"], "clamped")?.as_str() {
        "periodic" => Boundary::Periodic,
        _ => Boundary::Clamped,
    };
    Grid::line(min, max, points, boundary).map_err(|e| cfg.invalid("grid", "points", e.to_string()))
}

fn constants(cfg: &ExperimentConfig) -> Result<Constants, ConfigError> {
    Ok(Constants {
        mass: positive(cfg, "model", "mass", 1.0)?,
        hbar: positive(cfg, "model", "hbar", 1.0)?,
        light_speed: positive(cfg, "model", "light_speed", 1.0)?,
    })
}

fn potential(cfg: &ExperimentConfig) -> Result<Potential, ConfigError> {
    Ok(match cfg.choice("model", "potential", &["free", "harmonic"], "free")?.as_str() {
        "harmonic" => Potential::Harmonic {
            stiffness: positive(cfg, "model", "stiffness", 1.0)?,
        },
        _ => Potential::Zero,
    })
}

fn initial(cfg: &ExperimentConfig) -> Result<Initial, ConfigError> {
    Ok(Initial {
        center: finite(cfg, "initial-data", "center", 0.0)?,
        sigma: positive(cfg, "initial-data", "sigma", 1.0)?,
        momentum: finite(cfg, "initial-data", "momentum", 0.0)?,
        chirp: finite(cfg, "initial-data", "chirp", 0.0)?,
    })
}

fn schedule(cfg: &ExperimentConfig) -> Result<Schedule, ConfigError> {
    let dt = positive(cfg, "solver", "dt", 1e-3)?;
    let t_end = positive(cfg, "solver", "t_end", 1.0)?;
    let frames = count(cfg, "solver", "frames", 4)?;
    let per = t_end / (frames as f64 * dt);
    let steps = per.round();
    if steps < 1.0 || (per - steps).abs() > 1e-9 * per {
        return Err(cfg.invalid(
            "solver",
            "dt",
            format!("t_end / (frames * dt) must be a whole number of steps, got {per}"),
        ));
    }
    Ok(Schedule {
        dt,
        frames,
        steps: steps as usize,
    })
}

fn world_plan(cfg: &ExperimentConfig) -> Result<WorldPlan, ConfigError> {
    let cgs = cfg.choice("worldfunc", "units", &["cgs", "canonical"], "cgs")? == "cgs";
    let (hbar, b, c, sigma0) = if cgs {
        (HBAR_CGS, B_CGS, C_CGS, 1e-20)
    } else {
        (1.0, 1.0, 1.0, 1e-2)
    };
    let hbar = positive(cfg, "worldfunc", "hbar", hbar)?;
    let b = positive(cfg, "worldfunc", "b", b)?;
    let c = positive(cfg, "worldfunc", "c", c)?;
    let sigma0 = positive(cfg, "worldfunc", "sigma0", sigma0)?;
    let gap = match cfg.choice("worldfunc", "gap", &["ramp", "step"], "ramp")?.as_str() {
        "step" => GapRule::Step,
        _ => GapRule::LinearRamp,
    };
    let params = DistortionParams::new(hbar, b, c, sigma0)
        .map_err(|e| cfg.invalid("worldfunc", "sigma0", e.to_string()))?
        .with_gap(gap);
    let pairs = match cfg.get::<String>("worldfunc", "points", String::new())? {
        p if p.is_empty() => default_pairs(&params),
        p => {
            let path = cfg.base_dir().join(PathBuf::from(&p));
            read_pairs(&path).map_err(|e| cfg.invalid("worldfunc", "points", format!("{e:#}")))?
        }
    };
    Ok(WorldPlan { params, pairs })
}

pub fn worldfunc_params(sigma0: Option<f64>, canonical: bool, gap: GapRule) -> Result<DistortionParams> {
    let p = if canonical {
        DistortionParams::new(1.0, 1.0, 1.0, sigma0.unwrap_or(1e-2))?
    } else {
        DistortionParams::cgs(sigma0.unwrap_or(1e-20))?
    };
    Ok(p.with_gap(gap))
}

/// Coincident, deep timelike, in-gap timelike, null and spacelike pairs, scaled to `sigma0`.
fn default_pairs(p: &DistortionParams) -> Vec<(SpacetimePoint, SpacetimePoint)> {
    let origin = SpacetimePoint { t: 0.0, x: [0.0; 3] };
    let len = (2.0 * p.sigma0).sqrt();
    let at = |t: f64, x: f64| SpacetimePoint { t, x: [x, 0.0, 0.0] };
    vec![
        (origin, origin),
        (origin, at(2.0 * len / p.c, 0.0)),
        (origin, at(0.5 * len / p.c, 0.0)),
        (origin, at(len / p.c, len)),
        (origin, at(0.0, 2.0 * len)),
    ]
}

/// Pairs from a CSV with columns `t1,x1,y1,z1,t2,x2,y2,z2`.
pub fn read_pairs(path: &std::path::Path) -> Result<Vec<(SpacetimePoint, SpacetimePoint)>> {
    let table = Table::read(path)?;
    let names = ["t1", "x1", "y1", "z1", "t2", "x2", "y2", "z2"];
    let cols = names
        .iter()
        .map(|n| table.column(n).ok_or_else(|| anyhow!("{}: missing column '{n}'", path.display())))
        .collect::<Result<Vec<_>>>()?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let v = cols
                .iter()
                .zip(names)
                .map(|(&c, n)| {
                    row[c]
                        .trim()
                        .parse::<f64>()
                        .with_context(|| format!("{}: row {}: column '{n}' is not a number", path.display(), i + 2))
                })
                .collect::<Result<Vec<_>>>()?;
            let a = SpacetimePoint::new(v[0], [v[1], v[2], v[3]])?;
            let b = SpacetimePoint::new(v[4], [v[5], v[6], v[7]])?;
            Ok((a, b))
        })
        .collect()
}

/// Table of `sigma_M`, `D` and `sigma` for each pair.
pub fn worldfunc_table(params: &DistortionParams, pairs: &[(SpacetimePoint, SpacetimePoint)]) -> Table {
    let mut t = Table::new(&[
        "t1", "x1", "y1", "z1", "t2", "x2", "y2", "z2", "sigma_m", "distortion", "sigma",
    ]);
    for (a, b) in pairs {
        let s = sigma_minkowski(a, b, params.c);
        let sigma = sigma_distorted(a, b, params);
        t.push_nums(&[
            a.t,
            a.x[0],
            a.x[1],
            a.x[2],
            b.t,
            b.x[0],
            b.x[1],
            b.x[2],
            s,
            params.distortion(s),
            sigma,
        ]);
    }
    t
}

fn density_table() -> Table {
    Table::new(&["t", "x", "rho"])
}

fn push_frame(table: &mut Table, t: f64, grid: &Grid, values: &[f64]) {
    for (x, v) in grid.xs().iter().zip(values) {
        table.push_nums(&[t, *x, *v]);
    }
}

fn l1(a: &[f64], b: &[f64], grid: &Grid) -> f64 {
    let w = grid.weights();
    a.iter().zip(b).zip(&w).map(|((x, y), w)| (x - y).abs() * w).sum()
}

fn run_wave(p: &WavePlan) -> Result<RunOutput> {
    let Constants { mass, hbar, light_speed } = p.k;
    let cfg = WaveSolverConfig::new(mass, hbar, light_speed, hbar, p.sched.dt)?;
    let mut psi = p.init.wave(&p.grid, hbar)?;
    let norm0 = psi.norm();
    let (s0, a) = (p.init.sigma, p.init.chirp);
    let mut density = density_table();
    let mut width = Table::new(&["t", "width2", "width2_exact", "relative_error", "norm"]);
    let (mut worst, mut drift) = (0.0f64, 0.0f64);
    for frame in 0..=p.sched.frames {
        if frame > 0 {
            for _ in 0..p.sched.steps {
                psi = step_linear(&psi, &cfg)?;
            }
        }
        let t = p.sched.time(frame);
        let rho = psi.density();
        let w2 = rms_width(&rho)?.powi(2);
        let exact = (s0 * (1.0 + a * t / mass)).powi(2) + (hbar * t / (2.0 * mass * s0)).powi(2);
        let rel = (w2 - exact).abs() / exact;
        worst = worst.max(rel);
        drift = drift.max((psi.norm() - norm0).abs());
        push_frame(&mut density, t, &p.grid, rho.values());
        width.push_nums(&[t, w2, exact, rel, psi.norm()]);
    }
    let mut out = RunOutput::new();
    out.tables.push(("density.csv".into(), density));
    out.tables.push(("width.csv".into(), width));
    out.checks.push(Check::below("width_law", worst, WIDTH_TOL));
    out.checks.push(Check::below("norm_drift", drift, NORM_TOL));
    Ok(out)
}

fn run_fluid(p: &FluidPlan) -> Result<RunOutput> {
    let model = HamiltonianModel::classical(p.k.mass, p.potential.clone())?;
    let quantum = QuantumTerm::new(p.k.hbar, p.lambda)?;
    let mut state = FluidState::from_initial(p.init.density(&p.grid)?, &p.init.momentum_field(&p.grid)?, p.b0)?;
    let mass0 = integrate(state.rho());
    let mut density = density_table();
    let mut momentum = Table::new(&["t", "x", "p"]);
    let mut drift = 0.0f64;
    for frame in 0..=p.sched.frames {
        if frame > 0 {
            for _ in 0..p.sched.steps {
                state = step_fluid(&state, &model, p.sched.dt, Some(quantum))?;
            }
        }
        let t = p.sched.time(frame);
        drift = drift.max((integrate(state.rho()) - mass0).abs());
        push_frame(&mut density, t, &p.grid, state.rho().values());
        push_frame(&mut momentum, t, &p.grid, state.momentum().component(0).values());
    }
    let mut out = RunOutput::new();
    out.tables.push(("density.csv".into(), density));
    out.tables.push(("momentum.csv".into(), momentum));
    out.checks.push(Check::below("mass_drift", drift, MASS_TOL));
    Ok(out)
}

fn run_ensemble(p: &EnsemblePlan) -> Result<RunOutput> {
    let model = HamiltonianModel::classical(p.mass, p.potential.clone())?;
    let rho0 = p.init.density(&p.grid)?;
    let p0 = p.init.momentum_field(&p.grid)?;
    let mut rng = RngStream::new(p.seed);
    let mut ens = init_pure(&rho0, &p0, p.samples, &mut rng)?;
    let mut fluid = FluidState::from_initial(rho0, &p0, p.b0)?;
    let mut density = density_table();
    let mut fluid_density = density_table();
    let mut last = 0.0;
    for frame in 0..=p.sched.frames {
        if frame > 0 {
            for _ in 0..p.sched.steps {
                ens = step(&ens, &model, p.sched.dt)?;
                fluid = step_fluid(&fluid, &model, p.sched.dt, None)?;
            }
        }
        let t = p.sched.time(frame);
        let hist = density_estimate(&ens, &p.grid, p.bandwidth)?;
        last = l1(hist.values(), fluid.rho().values(), &p.grid);
        push_frame(&mut density, t, &p.grid, hist.values());
        push_frame(&mut fluid_density, t, &p.grid, fluid.rho().values());
    }
    let mut out = RunOutput::new();
    out.tables.push(("density.csv".into(), density));
    out.tables.push(("fluid_density.csv".into(), fluid_density));
    out.checks.push(Check::below("ensemble_vs_fluid_l1", last, ENSEMBLE_L1_TOL));
    Ok(out)
}

fn run_hj(p: &HjPlan) -> Result<RunOutput> {
    let model = HamiltonianModel::classical(p.mass, p.potential.clone())?;
    let init = p.init;
    // Characteristics of the free quadratic datum stay straight lines.
    let exact = matches!(p.potential, Potential::Zero).then_some(move |t: f64, x: f64| {
        let (a, q) = (init.chirp, init.momentum);
        let tau = t / p.mass;
        (a * x * x + 2.0 * q * x - q * q * tau) / (2.0 * (1.0 + a * tau))
    });
    if exact.is_some() && init.chirp < 0.0 && init.chirp * p.sched.time(p.sched.frames) / p.mass <= -1.0 {
        bail!("characteristics of the initial phase cross before t_end");
    }
    let mut s = HJState {
        t: 0.0,
        phi: ScalarField::from_fn(&p.grid, |x| init.action(x[0]))?,
    };
    let mut table = if exact.is_some() {
        Table::new(&["t", "x", "phi", "exact"])
    } else {
        Table::new(&["t", "x", "phi"])
    };
    let mut worst = 0.0f64;
    for frame in 0..=p.sched.frames {
        if frame > 0 {
            for _ in 0..p.sched.steps {
                s = step_hj_with(&s, &model, p.sched.dt, p.scheme)?;
            }
        }
        let t = p.sched.time(frame);
        for (x, v) in p.grid.xs().iter().zip(s.phi.values()) {
            match &exact {
                Some(f) => {
                    let e = f(t, *x);
                    worst = worst.max((v - e).abs());
                    table.push_nums(&[t, *x, *v, e]);
                }
                None => table.push_nums(&[t, *x, *v]),
            }
        }
    }
    let mut out = RunOutput::new();
    out.tables.push(("phi.csv".into(), table));
    if exact.is_some() {
        out.checks.push(Check::below("hj_max_error", worst, HJ_TOL));
    }
    Ok(out)
}

fn run_gauge(p: &GaugePlan) -> Result<RunOutput> {
    let Constants { mass, hbar, light_speed } = p.k;
    let nl_cfg = WaveSolverConfig::new(mass, hbar, light_speed, p.b0, p.sched.dt)?;
    let lin_cfg = WaveSolverConfig::new(mass, hbar, light_speed, hbar, p.sched.dt)?;
    let mut nl = p.init.wave(&p.grid, p.b0)?;
    let mut lin = gauge_map(&nl, p.b0, hbar)?;
    let mut printed = gauge_map(&nl, hbar, p.b0)?;
    let mut density = density_table();
    let mut table = Table::new(&["t", "l2_b0_over_hbar", "l2_hbar_over_b0"]);
    let (mut right, mut wrong) = (0.0f64, 0.0);
    for frame in 0..=p.sched.frames {
        if frame > 0 {
            for _ in 0..p.sched.steps {
                nl = step_nonlinear(&nl, &nl_cfg)?;
                lin = step_linear(&lin, &lin_cfg)?;
                printed = step_linear(&printed, &lin_cfg)?;
            }
        }
        let t = p.sched.time(frame);
        let r = phase_aligned_distance(&gauge_map(&nl, p.b0, hbar)?, &lin)?;
        wrong = phase_aligned_distance(&gauge_map(&nl, hbar, p.b0)?, &printed)?;
        right = right.max(r);
        push_frame(&mut density, t, &p.grid, &nl.density_values());
        table.push_nums(&[t, r, wrong]);
    }
    let mut out = RunOutput::new();
    out.tables.push(("density.csv".into(), density));
    out.tables.push(("gauge.csv".into(), table));
    out.checks.push(Check::below("gauge_l2", right, GAUGE_TOL));
    out.checks
        .push(Check::at_least("exchanged_exponent_l2", wrong, GAUGE_MARGIN * GAUGE_TOL));
    Ok(out)
}

fn run_action(p: &ActionPlan) -> Result<RunOutput> {
    let Constants { mass, hbar, light_speed } = p.k;
    let grid = &p.grid;
    let cfg = WaveSolverConfig::new(mass, hbar, light_speed, hbar, p.dt)?.with_rest_mass(true);
    let mut levels = vec![p.init.wave(grid, hbar)?];
    for _ in 1..p.levels {
        let next = step_linear(levels.last().expect("non-empty"), &cfg)?;
        levels.push(next);
    }
    let (m, n) = (levels.len(), grid.len());
    let (center, sigma) = (p.init.center, p.init.sigma);
    // Smooth perturbation vanishing on the first and last level and at the grid ends.
    let eta: Vec<Vec<Complex64>> = (0..m)
        .map(|l| {
            (0..n)
                .map(|j| {
                    if l == 0 || l == m - 1 || j == 0 || j == n - 1 {
                        return Complex64::new(0.0, 0.0);
                    }
                    let x = (grid.coord(j)[0] - center) / sigma;
                    let s = (std::f64::consts::PI * l as f64 / (m - 1) as f64).sin();
                    Complex64::new(0.3, 0.7) * s * (-x * x / 4.0).exp() * (1.3 * x + 0.5 * l as f64).cos()
                })
                .collect()
        })
        .collect();
    let linear = ActionParams::new(hbar, mass, light_speed, hbar)?;
    let action = |eps: f64| -> Result<f64> {
        let pert: Vec<WaveField> = levels
            .iter()
            .zip(&eta)
            .map(|(l, d)| WaveField::new(grid.clone(), 1, l.values().iter().zip(d).map(|(a, b)| a + eps * b).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(action_eval(&ActionVariant::PsiLinear, &linear, ActionFields::Wave { levels: &pert, dt: p.dt })?)
    };
    let s0 = action(0.0)?;
    let mut stationarity = Table::new(&["epsilon", "delta_action", "order"]);
    let mut prev: Option<f64> = None;
    let mut order = f64::INFINITY;
    for eps in [1e-2, 5e-3, 2.5e-3] {
        let delta = (action(eps)? - s0).abs();
        let o = prev.map(|d| (d / delta).log2());
        if let Some(o) = o {
            order = order.min(o);
        }
        stationarity.push(vec![num(eps), num(delta), o.map(num).unwrap_or_default()]);
        prev = Some(delta);
    }

    // Scaling rho by a scales every action by a.
    let model = HamiltonianModel::classical(mass, p.potential.clone())?;
    let free = HamiltonianModel::free(mass)?;
    let quantum = QuantumTerm::new(hbar, p.lambda)?;
    let rho0 = p.init.density(grid)?;
    let mut history = vec![FluidState::from_initial(rho0.clone(), &p.init.momentum_field(grid)?, p.b0)?];
    for _ in 0..4 {
        let next = step_fluid(history.last().expect("non-empty"), &free, p.dt.min(1e-3), Some(quantum))?;
        history.push(next);
    }
    let params = ActionParams::new(p.b0, mass, light_speed, hbar)?.with_lambda(p.lambda)?;
    // Without the rest phase the history is off-shell, so the actions stay away from
    // zero and a relative deviation measures homogeneity rather than rounding.
    let plain = WaveSolverConfig::new(mass, hbar, light_speed, hbar, p.dt)?;
    let mut wave = vec![levels[0].clone()];
    for _ in 0..4 {
        let next = step_linear(wave.last().expect("non-empty"), &plain)?;
        wave.push(next);
    }
    let wave = &wave[..];
    let mut homogeneity = Table::new(&["variant", "scale", "relative_deviation"]);
    let mut worst = 0.0f64;
    for a in [2.0, 10.0] {
        let scaled: Vec<FluidState> = history
            .iter()
            .map(|s| s.with_density(s.rho().scaled(a)))
            .collect::<std::result::Result<_, _>>()?;
        let amp = Complex64::new(a.sqrt(), 0.0);
        let scaled_wave: Vec<WaveField> = wave.iter().map(|l| l.scaled(amp)).collect();
        let variants = [
            ActionVariant::EnsembleHamilton(model.clone()),
            ActionVariant::RelStochastic,
            ActionVariant::NonRelStochastic,
            ActionVariant::PsiGeneric(model.clone()),
            ActionVariant::PsiPolar,
            ActionVariant::PsiNonlinear,
            ActionVariant::PsiLinear,
        ];
        for v in &variants {
            let (base, s) = match v {
                ActionVariant::EnsembleHamilton(_) | ActionVariant::RelStochastic | ActionVariant::NonRelStochastic => (
                    action_eval(v, &params, ActionFields::Fluid(&history))?,
                    action_eval(v, &params, ActionFields::Fluid(&scaled))?,
                ),
                _ => (
                    action_eval(v, &params, ActionFields::Wave { levels: wave, dt: p.dt })?,
                    action_eval(v, &params, ActionFields::Wave { levels: &scaled_wave, dt: p.dt })?,
                ),
            };
            let rel = (s - a * base).abs() / (a * base).abs();
            worst = worst.max(rel);
            homogeneity.push(vec![v.name().to_string(), num(a), num(rel)]);
        }
    }
    let st = stochastic_momentum(&rho0, p.lambda, hbar)?;
    let st2 = stochastic_momentum(&rho0.scaled(2.0), p.lambda, hbar)?;
    let st_change = st
        .component(0)
        .values()
        .iter()
        .zip(st2.component(0).values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    let mut out = RunOutput::new();
    out.tables.push(("stationarity.csv".into(), stationarity));
    out.tables.push(("homogeneity.csv".into(), homogeneity));
    out.checks.push(Check::at_least("stationarity_order", order, STATIONARITY_ORDER));
    out.checks.push(Check::below("homogeneity", worst, HOMOGENEITY_TOL));
    out.checks.push(Check::at_most("stochastic_momentum_scale_change", st_change, 0.0));
    Ok(out)
}

/// Identity trials for each dimension as a table, with one residual and one ratio
/// check per family.
pub fn identity_run(dims: &[usize], trials: usize, h: f64, seed: u64) -> Result<RunOutput> {
    let mut table = Table::new(&[
        "n",
        "family",
        "differenced",
        "max_relative",
        "ratio_min",
        "ratio_max",
        "passed",
    ]);
    let mut out = RunOutput::new();
    for &n in dims {
        for fam in run_identity_trials(n, trials, h, seed)? {
            let passed = fam.passes(IDENTITY_TOL, IDENTITY_RATIO);
            let (lo, hi) = fam
                .ratio_range
                .map(|(lo, hi)| (num(lo), num(hi)))
                .unwrap_or_default();
            table.push(vec![
                n.to_string(),
                fam.name.to_string(),
                fam.differenced.to_string(),
                num(fam.max_relative),
                lo,
                hi,
                passed.to_string(),
            ]);
            let key = format!("n{n}/{}", fam.name);
            out.checks.push(Check::below(&format!("{key}/residual"), fam.max_relative, IDENTITY_TOL));
            if let Some((lo, hi)) = fam.ratio_range {
                out.checks.push(Check::at_least(&format!("{key}/ratio_min"), lo, IDENTITY_RATIO.0));
                out.checks.push(Check::at_most(&format!("{key}/ratio_max"), hi, IDENTITY_RATIO.1));
            }
        }
    }
    out.tables.push(("identities.csv".into(), table));
    Ok(out)
}

fn run_identities(p: &IdentityPlan) -> Result<RunOutput> {
    identity_run(&p.dims, p.trials, p.h, p.seed)
}

fn run_world(p: &WorldPlan) -> Result<RunOutput> {
    let table = worldfunc_table(&p.params, &p.pairs);
    let d = p.params.d();
    let excess = p
        .pairs
        .iter()
        .map(|(a, b)| {
            let gap = p.params.distortion(sigma_minkowski(a, b, p.params.c));
            ((-gap).max(gap - d)).max(0.0) / d
        })
        .fold(0.0, f64::max);
    let mut out = RunOutput::new();
    out.tables.push(("worldfunc.csv".into(), table));
    let mut summary = Table::new(&["hbar", "b", "c", "sigma0", "d", "sqrt_d"]);
    summary.push_nums(&[p.params.hbar, p.params.b, p.params.c, p.params.sigma0, d, d.sqrt()]);
    out.tables.push(("constants.csv".into(), summary));
    out.checks.push(Check::below("distortion_bounds", excess, WORLDFUNC_TOL));
    Ok(out)
}

fn run_compare(members: &[(String, Plan)]) -> Result<RunOutput> {
    let runs: Vec<(String, RunOutput)> = members
        .par_iter()
        .map(|(name, plan)| plan.run().map(|o| (name.clone(), o)).with_context(|| format!("sub-run {name}")))
        .collect::<Result<_>>()?;
    let series: Vec<(String, Series)> = runs
        .iter()
        .map(|(name, o)| {
            let t = o.table("density.csv").context("sub-run without density.csv")?;
            Ok((name.clone(), Series::from_table(t)?))
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(&["t", "series_a", "series_b", "l1", "l2", "max"]);
    let mut out = RunOutput::new();
    for i in 0..series.len() {
        for j in i + 1..series.len() {
            let rows = pair_metrics(&series[i].1, &series[j].1)?;
            for r in &rows {
                table.push(vec![
                    num(r.t),
                    series[i].0.clone(),
                    series[j].0.clone(),
                    num(r.l1),
                    num(r.l2),
                    num(r.max),
                ]);
            }
            if (series[i].0.as_str(), series[j].0.as_str()) == ("schrodinger-free", "fluid-quantum") {
                let worst = rows.iter().map(|r| r.l1).fold(0.0, f64::max);
                out.checks.push(Check::below("psi_vs_fluid_l1", worst, PSI_FLUID_L1_TOL));
            }
        }
    }
    for (name, o) in &runs {
        out.checks
            .extend(o.checks.iter().cloned().map(|c| c.prefixed(name)));
    }
    out.tables.push(("comparison.csv".into(), table));
    out.children = runs;
    Ok(out)
}
