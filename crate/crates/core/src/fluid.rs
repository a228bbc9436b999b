//! Grid solvers for a pure ensemble in one space dimension: the potential
//! formulation `(rho, phi, xi)` of the hydrodynamic system, a first-order
//! monotone Hamilton-Jacobi solver, and residuals of the reduced equations.
//!
//! Potentials may carry a constant slope on top of a grid field so that uniform
//! flows and the standard labeling `xi = x` fit on periodic grids:
//! `phi(x) = phi_grid(x) + phi_slope * x`, likewise for `xi`.

use crate::clebsch::{ClebschData, LabelMap};
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianModel;
use crate::numerics::{
    first_derivative_by, integrate_values, log_gradient, log_laplacian, Boundary, Grid, ScalarField,
    VectorField, VACUUM_FLOOR,
};

/// Stochastic-energy contribution, entering as the potential
/// `U_q = -(4 lambda^2 hbar^2 / 2m) lap(sqrt rho) / sqrt rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumTerm {
    pub hbar: f64,
    pub lambda: f64,
}

impl QuantumTerm {
    pub fn new(hbar: f64, lambda: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite() && lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!(
                "quantum term needs hbar > 0 and lambda >= 0, got {hbar}, {lambda}"
            )));
        }
        Ok(Self { hbar, lambda })
    }

    /// `U_q` node by node. `lap(sqrt rho)/sqrt rho = (ln rho)''/2 + ((ln rho)')^2/4`,
    /// both from density ratios; densities are only clamped away from zero so the
    /// potential stays smooth across the tails.
    pub fn potential(&self, rho: &[f64], grid: &Grid, mass: f64) -> Vec<f64> {
        let clamped: Vec<f64> = rho.iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
        let field = ScalarField::new(grid.clone(), clamped).expect("clamped density is finite");
        let (g, _) = log_gradient(&field, 0.0);
        let (l, _) = log_laplacian(&field, 0.0);
        let c = -4.0 * self.lambda * self.lambda * self.hbar * self.hbar / (2.0 * mass);
        let g2 = g.norm_squared();
        l.values()
            .iter()
            .zip(g2.values())
            .map(|(l, g2)| c * (0.5 * l + 0.25 * g2))
            .collect()
    }
}

/// Hydrodynamic state of a one-dimensional pure ensemble.
#[derive(Debug, Clone)]
pub struct FluidState {
    t: f64,
    rho: ScalarField,
    phi: ScalarField,
    phi_slope: f64,
    xi: ScalarField,
    xi_slope: f64,
    clebsch: ClebschData,
    p: VectorField,
}

fn d1(grid: &Grid, v: &[f64]) -> Vec<f64> {
    first_derivative_by(grid, 0, v, |a, b| b - a)
}

impl FluidState {
    pub fn new(
        t: f64,
        rho: ScalarField,
        (phi, phi_slope): (ScalarField, f64),
        (xi, xi_slope): (ScalarField, f64),
        clebsch: ClebschData,
    ) -> Result<Self> {
        let grid = rho.grid().clone();
        if grid.dim() != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: grid.dim(),
            });
        }
        if phi.grid() != &grid || xi.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        if clebsch.dim() != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: clebsch.dim(),
            });
        }
        if !(phi_slope.is_finite() && xi_slope.is_finite() && t.is_finite()) {
            return Err(Error::Parameter("non-finite slope or time".into()));
        }
        let mut s = Self {
            t,
            rho,
            phi,
            phi_slope,
            xi,
            xi_slope,
            clebsch,
            p: VectorField::zeros(&grid),
        };
        s.p = VectorField::new(vec![ScalarField::new(grid, s.momentum_values())?])?;
        Ok(s)
    }

    /// Standard initial labeling: `xi = x`, `phi = 0`, `g = P0 / b0`.
    pub fn from_initial(rho0: ScalarField, p0: &VectorField, b0: f64) -> Result<Self> {
        let grid = rho0.grid().clone();
        let clebsch = crate::clebsch::fit_g_from_initial(p0, b0)?;
        Self::new(
            0.0,
            rho0,
            (ScalarField::constant(&grid, 0.0), 0.0),
            (ScalarField::constant(&grid, 0.0), 1.0),
            clebsch,
        )
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    pub fn rho(&self) -> &ScalarField {
        &self.rho
    }

    pub fn momentum(&self) -> &VectorField {
        &self.p
    }

    pub fn clebsch(&self) -> &ClebschData {
        &self.clebsch
    }

    /// Full `phi(x)` including the slope.
    pub fn phi_values(&self) -> Vec<f64> {
        full(self.grid(), self.phi.values(), self.phi_slope)
    }

    /// Full `xi(x)` including the slope.
    pub fn xi_values(&self) -> Vec<f64> {
        full(self.grid(), self.xi.values(), self.xi_slope)
    }

    pub fn labels(&self) -> Result<LabelMap> {
        LabelMap::new(vec![ScalarField::new(self.grid().clone(), self.xi_values())?])
    }

    pub fn mass(&self) -> f64 {
        integrate_values(self.grid(), self.rho.values())
    }

    /// Same potentials and labels carrying a different density.
    pub fn with_density(&self, rho: ScalarField) -> Result<Self> {
        if rho.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { rho, ..self.clone() })
    }

    /// Grid parts and slopes of `(phi, xi)`.
    pub(crate) fn potential_parts(&self) -> ((&ScalarField, f64), (&ScalarField, f64)) {
        ((&self.phi, self.phi_slope), (&self.xi, self.xi_slope))
    }

    fn momentum_values(&self) -> Vec<f64> {
        let grid = self.grid();
        let phi_x = add(&d1(grid, self.phi.values()), self.phi_slope);
        let xi_x = add(&d1(grid, self.xi.values()), self.xi_slope);
        let xi = self.xi_values();
        (0..grid.len())
            .map(|i| self.clebsch.b0() * (phi_x[i] + self.clebsch.g().eval(&[xi[i]])[0] * xi_x[i]))
            .collect()
    }
}

fn full(grid: &Grid, v: &[f64], slope: f64) -> Vec<f64> {
    if slope == 0.0 {
        return v.to_vec();
    }
    grid.xs().iter().zip(v).map(|(x, v)| v + slope * x).collect()
}

fn add(v: &[f64], c: f64) -> Vec<f64> {
    v.iter().map(|x| x + c).collect()
}

struct Rates {
    rho: Vec<f64>,
    phi: Vec<f64>,
    xi: Vec<f64>,
}

/// Pointwise flow quantities of a state.
struct Flow {
    p: Vec<f64>,
    v: Vec<f64>,
    h: Vec<f64>,
    g: Vec<f64>,
    xi_x: Vec<f64>,
}

fn require_classical(model: &HamiltonianModel, op: &'static str) -> Result<()> {
    match model {
        HamiltonianModel::Classical { .. } => Ok(()),
        other => Err(Error::Variant {
            op,
            variant: other.variant_name(),
        }),
    }
}

fn flow(
    state: &FluidState,
    rho: &[f64],
    phi: &[f64],
    xi: &[f64],
    t: f64,
    model: &HamiltonianModel,
    quantum: Option<QuantumTerm>,
) -> Result<Flow> {
    let grid = state.grid();
    let xs = grid.xs();
    let b0 = state.clebsch.b0();
    let phi_x = add(&d1(grid, phi), state.phi_slope);
    let xi_x = add(&d1(grid, xi), state.xi_slope);
    let uq = quantum.map(|q| q.potential(rho, grid, model.mass()));
    let n = grid.len();
    let (mut p, mut v, mut h, mut g) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let gi = state.clebsch.g().eval(&[xi[i] + state.xi_slope * xs[i]])[0];
        let pi = b0 * (phi_x[i] + gi * xi_x[i]);
        v.push(model.velocity(t, &[xs[i]], &[pi])?[0]);
        h.push(model.energy(t, &[xs[i]], &[pi])? + uq.as_ref().map_or(0.0, |u| u[i]));
        p.push(pi);
        g.push(gi);
    }
    Ok(Flow { p, v, h, g, xi_x })
}

fn rates(
    state: &FluidState,
    rho: &[f64],
    phi: &[f64],
    xi: &[f64],
    t: f64,
    model: &HamiltonianModel,
    quantum: Option<QuantumTerm>,
) -> Result<Rates> {
    let grid = state.grid();
    let f = flow(state, rho, phi, xi, t, model, quantum)?;
    let b0 = state.clebsch.b0();
    let flux: Vec<f64> = rho.iter().zip(&f.v).map(|(r, v)| r * v).collect();
    let drho = d1(grid, &flux).into_iter().map(|d| -d).collect();
    let dxi: Vec<f64> = f.v.iter().zip(&f.xi_x).map(|(v, x)| -v * x).collect();
    let dphi = (0..grid.len())
        .map(|i| -f.h[i] / b0 - f.g[i] * dxi[i])
        .collect();
    Ok(Rates {
        rho: drho,
        phi: dphi,
        xi: dxi,
    })
}

/// Largest `dt * max|v| / h` allowed.
pub const CFL_LIMIT: f64 = 0.5;
/// Largest `dt * lambda * hbar / (m h^2)` allowed with the quantum term (RK4 on the
/// dispersive mode stays inside its imaginary-axis stability interval).
pub const DISPERSIVE_LIMIT: f64 = 1.0;
/// Densities below `-NEGATIVE_TOLERANCE * max(rho)` abort the run.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

fn combine(base: &[f64], k: &[f64], a: f64) -> Vec<f64> {
    base.iter().zip(k).map(|(b, k)| b + a * k).collect()
}

/// One classical RK4 step of `rho_t = -(rho v)_x`, `xi_t = -v xi_x`,
/// `phi_t = -H/b0 + g v xi_x`, with `P = b0 (phi_x + g(xi) xi_x)`, `v = P/m`.
pub fn step_fluid(
    state: &FluidState,
    model: &HamiltonianModel,
    dt: f64,
    quantum: Option<QuantumTerm>,
) -> Result<FluidState> {
    require_classical(model, "step_fluid")?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    let grid = state.grid().clone();
    let h = grid.spacing(0);
    let m = model.mass();
    let vmax = state
        .p
        .component(0)
        .values()
        .iter()
        .fold(0.0f64, |a, p| a.max((p / m).abs()));
    let ratio = dt * vmax / h;
    if ratio >= CFL_LIMIT {
        return Err(Error::Cfl {
            ratio,
            limit: CFL_LIMIT,
        });
    }
    if let Some(q) = quantum {
        let ratio = dt * q.lambda * q.hbar / (m * h * h);
        if ratio >= DISPERSIVE_LIMIT {
            return Err(Error::Cfl {
                ratio,
                limit: DISPERSIVE_LIMIT,
            });
        }
    }

    let (r0, f0, x0) = (state.rho.values(), state.phi.values(), state.xi.values());
    let t = state.t;
    let k1 = rates(state, r0, f0, x0, t, model, quantum)?;
    let k2 = rates(
        state,
        &combine(r0, &k1.rho, 0.5 * dt),
        &combine(f0, &k1.phi, 0.5 * dt),
        &combine(x0, &k1.xi, 0.5 * dt),
        t + 0.5 * dt,
        model,
        quantum,
    )?;
    let k3 = rates(
        state,
        &combine(r0, &k2.rho, 0.5 * dt),
        &combine(f0, &k2.phi, 0.5 * dt),
        &combine(x0, &k2.xi, 0.5 * dt),
        t + 0.5 * dt,
        model,
        quantum,
    )?;
    let k4 = rates(
        state,
        &combine(r0, &k3.rho, dt),
        &combine(f0, &k3.phi, dt),
        &combine(x0, &k3.xi, dt),
        t + dt,
        model,
        quantum,
    )?;
    let rk = |base: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..base.len())
            .map(|i| base[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
            .collect()
    };
    let rho = rk(r0, &k1.rho, &k2.rho, &k3.rho, &k4.rho);
    let phi = rk(f0, &k1.phi, &k2.phi, &k3.phi, &k4.phi);
    let xi = rk(x0, &k1.xi, &k2.xi, &k3.xi, &k4.xi);

    let t1 = t + dt;
    let top = rho.iter().cloned().fold(0.0, f64::max);
    if let Some((node, &value)) = rho
        .iter()
        .enumerate()
        .find(|(_, &v)| v < -NEGATIVE_TOLERANCE * top)
    {
        return Err(Error::NegativeDensity { node, value, t: t1 });
    }
    let next = FluidState::new(
        t1,
        ScalarField::new(grid.clone(), rho)?,
        (ScalarField::new(grid.clone(), phi)?, state.phi_slope),
        (ScalarField::new(grid.clone(), xi)?, state.xi_slope),
        state.clebsch.clone(),
    )?;
    let bound = 1.0 / (10.0 * h);
    let dp = d1(&grid, next.p.component(0).values());
    let floor = VACUUM_FLOOR * top;
    for (node, (&g, &r)) in dp.iter().zip(next.rho.values()).enumerate() {
        let gradient = g.abs() / m;
        if r > floor && gradient > bound {
            return Err(Error::Caustic {
                node,
                gradient,
                bound,
            });
        }
    }
    Ok(next)
}

/// Action-function state `Phi(t, x)` with `grad Phi = P`.
#[derive(Debug, Clone, PartialEq)]
pub struct HJState {
    pub t: f64,
    pub phi: ScalarField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HjScheme {
    /// Exact Riemann flux for Hamiltonians even and convex in each momentum component.
    #[default]
    Godunov,
    LaxFriedrichs,
}

/// `Phi_t + H(x, grad Phi) = 0`, first-order monotone step with the Godunov flux.
pub fn step_hj(state: &HJState, model: &HamiltonianModel, dt: f64) -> Result<HJState> {
    step_hj_with(state, model, dt, HjScheme::Godunov)
}

pub fn step_hj_with(state: &HJState, model: &HamiltonianModel, dt: f64, scheme: HjScheme) -> Result<HJState> {
    if let HamiltonianModel::EffectiveStochastic { .. } = model {
        return Err(Error::Variant {
            op: "step_hj",
            variant: model.variant_name(),
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    let grid = state.phi.grid();
    let d = grid.dim();
    let vals = state.phi.values();
    let periodic = grid.boundary() == Boundary::Periodic;
    // one-sided differences (backward, forward) per axis and node
    let mut minus = vec![vec![0.0; grid.len()]; d];
    let mut plus = vec![vec![0.0; grid.len()]; d];
    for a in 0..d {
        let h = grid.spacing(a);
        let n = grid.axis(a).n_points;
        let stride = grid.stride(a);
        for node in 0..grid.len() {
            let i = grid.unravel(node)[a];
            let at = |j: usize| vals[node - i * stride + j * stride];
            let back = if i > 0 {
                Some(at(i - 1))
            } else if periodic {
                Some(at(n - 1))
            } else {
                None
            };
            let fwd = if i + 1 < n {
                Some(at(i + 1))
            } else if periodic {
                Some(at(0))
            } else {
                None
            };
            let here = vals[node];
            let pm = back.map(|b| (here - b) / h);
            let pp = fwd.map(|f| (f - here) / h);
            minus[a][node] = pm.or(pp).expect("axes have at least two nodes");
            plus[a][node] = pp.or(pm).expect("axes have at least two nodes");
        }
    }
    let t = state.t;
    let mut speed: f64 = 0.0;
    let mut hamiltonian = Vec::with_capacity(grid.len());
    let mut centred_speed = Vec::with_capacity(grid.len());
    for node in 0..grid.len() {
        let x = grid.coord(node);
        let centred: Vec<f64> = (0..d).map(|a| 0.5 * (minus[a][node] + plus[a][node])).collect();
        let vc = model.velocity(t, &x, &centred)?;
        centred_speed.push(vc.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        match scheme {
            HjScheme::Godunov => {
                let q: Vec<f64> = (0..d)
                    .map(|a| {
                        let up = minus[a][node].max(0.0);
                        let down = plus[a][node].min(0.0);
                        if up >= -down {
                            up
                        } else {
                            down
                        }
                    })
                    .collect();
                let v = model.velocity(t, &x, &q)?;
                speed = speed.max(v.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                hamiltonian.push(model.energy(t, &x, &q)?);
            }
            HjScheme::LaxFriedrichs => hamiltonian.push(model.energy(t, &x, &centred)?),
        }
    }
    let alpha = centred_speed.iter().cloned().fold(0.0, f64::max);
    if scheme == HjScheme::LaxFriedrichs {
        speed = alpha;
    }
    let hmin = (0..d).map(|a| grid.spacing(a)).fold(f64::INFINITY, f64::min);
    let ratio = dt * speed * d as f64 / hmin;
    if ratio > CFL_LIMIT {
        return Err(Error::Cfl {
            ratio,
            limit: CFL_LIMIT,
        });
    }
    let next: Vec<f64> = (0..grid.len())
        .map(|node| {
            let mut flux = hamiltonian[node];
            if scheme == HjScheme::LaxFriedrichs {
                for a in 0..d {
                    flux -= 0.5 * alpha * (plus[a][node] - minus[a][node]);
                }
            }
            vals[node] - dt * flux
        })
        .collect();
    Ok(HJState {
        t: t + dt,
        phi: ScalarField::new(grid.clone(), next)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equation {
    /// `H + b0 (phi_t + g xi_t) = 0`
    Potential,
    /// `rho_t + (rho v)_x = 0`
    Continuity,
    /// `xi_t + v xi_x = 0`
    LinConstraint,
    /// `b0 (rho_t + (rho dH/dp)_x) = 0`, the variation with respect to `phi`.
    PhiVariation,
    /// `Omega rho (xi_t + v xi_x) = 0`; identically zero with a single label.
    XiVariation,
    /// `P_t + v P_x + (V + U_q)_x = 0`
    Euler,
}

impl Equation {
    pub const ALL: [Equation; 6] = [
        Equation::Potential,
        Equation::Continuity,
        Equation::LinConstraint,
        Equation::PhiVariation,
        Equation::XiVariation,
        Equation::Euler,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Equation::Potential => "potential",
            Equation::Continuity => "continuity",
            Equation::LinConstraint => "lin-constraint",
            Equation::PhiVariation => "phi-variation",
            Equation::XiVariation => "xi-variation",
            Equation::Euler => "euler",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub equation: Equation,
    pub max: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub rows: Vec<ResidualRow>,
}

impl ResidualReport {
    pub fn get(&self, eq: Equation) -> &ResidualRow {
        self.rows
            .iter()
            .find(|r| r.equation == eq)
            .expect("every equation is reported")
    }
}

/// Residuals of the reduced equations on the interior of the space-time slab,
/// with centred time differences over equally spaced levels.
pub fn residual_report(
    history: &[FluidState],
    model: &HamiltonianModel,
    quantum: Option<QuantumTerm>,
) -> Result<ResidualReport> {
    require_classical(model, "residual_report")?;
    if history.len() < 3 {
        return Err(Error::InsufficientHistory {
            need: 3,
            got: history.len(),
        });
    }
    let grid = history[0].grid().clone();
    if history.iter().any(|s| s.grid() != &grid) {
        return Err(Error::GridMismatch);
    }
    let dt = history[1].t - history[0].t;
    if !(dt > 0.0) || history.windows(2).any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.abs().max(1e-300)) {
        return Err(Error::Parameter("history must be equally spaced in time".into()));
    }
    let xs = grid.xs();
    let h = grid.spacing(0);
    let (lo, hi) = match grid.boundary() {
        Boundary::Periodic => (0, grid.len()),
        Boundary::Clamped => (1, grid.len() - 1),
    };
    let mut acc = [(0.0f64, 0.0f64); 6];
    let mut push = |k: usize, r: f64| {
        acc[k].0 = acc[k].0.max(r.abs());
        acc[k].1 += r * r * h * dt;
    };
    for n in 1..history.len() - 1 {
        let (prev, cur, next) = (&history[n - 1], &history[n], &history[n + 1]);
        let f = flow(cur, cur.rho.values(), cur.phi.values(), cur.xi.values(), cur.t, model, quantum)?;
        let b0 = cur.clebsch.b0();
        let ddt = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(a, b)| (b - a) / (2.0 * dt)).collect()
        };
        let rho_t = ddt(prev.rho.values(), next.rho.values());
        let phi_t = ddt(&prev.phi_values(), &next.phi_values());
        let xi_t = ddt(&prev.xi_values(), &next.xi_values());
        let p_t = ddt(prev.p.component(0).values(), next.p.component(0).values());
        let flux: Vec<f64> = cur.rho.values().iter().zip(&f.v).map(|(r, v)| r * v).collect();
        let div = d1(&grid, &flux);
        let p_x = d1(&grid, &f.p);
        let uq_x = match quantum {
            Some(q) => d1(&grid, &q.potential(cur.rho.values(), &grid, model.mass())),
            None => vec![0.0; grid.len()],
        };
        let omega = crate::clebsch::vorticity(&cur.clebsch, &[0.0]).omega[(0, 0)];
        for i in lo..hi {
            let lin = xi_t[i] + f.v[i] * f.xi_x[i];
            let cont = rho_t[i] + div[i];
            let force = model.force(cur.t, &[xs[i]], &[f.p[i]])?[0];
            push(0, f.h[i] + b0 * (phi_t[i] + f.g[i] * xi_t[i]));
            push(1, cont);
            push(2, lin);
            push(3, b0 * cont);
            push(4, omega * cur.rho.values()[i] * lin);
            push(5, p_t[i] + f.v[i] * p_x[i] - force + uq_x[i]);
        }
    }
    Ok(ResidualReport {
        rows: Equation::ALL
            .iter()
            .zip(acc)
            .map(|(&equation, (max, sq))| ResidualRow {
                equation,
                max,
                l2: sq.sqrt(),
            })
            .collect(),
    })
}
