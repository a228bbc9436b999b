//! Crank–Nicolson time steppers on one-dimensional grids for the linear wave equation
//! `i hbar psi_t = -(hbar^2/2m) psi_xx + m c^2 psi` and for the nonlinear equation with
//! constant `b0`,
//! `i b0 psi_t = -(b0^2/2m) psi_xx + m c^2 psi + W psi`,
//! `W = ((b0^2 - (2 lambda hbar)^2) / 2m) (sqrt rho)_xx / sqrt rho`.
//!
//! Both use the three-point Laplacian. Periodic grids wrap; clamped grids hold
//! `psi = 0` at the two end nodes. The update is a Cayley transform of a Hermitian
//! operator, so the discrete norm is conserved to roundoff.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hamiltonian::DEFAULT_LAMBDA;
use crate::numerics::{integrate_values, log_gradient, log_laplacian, Boundary, Grid, ScalarField, VACUUM_FLOOR};
use crate::psirep::{reconstruct_rho_p, WaveField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveSolverConfig {
    pub mass: f64,
    pub hbar: f64,
    pub light_speed: f64,
    pub b0: f64,
    pub lambda: f64,
    pub include_rest_mass: bool,
    pub dt: f64,
}

impl WaveSolverConfig {
    /// Rest energy off, `lambda = 1/2`.
    pub fn new(mass: f64, hbar: f64, light_speed: f64, b0: f64, dt: f64) -> Result<Self> {
        for (name, v) in [
            ("mass", mass),
            ("hbar", hbar),
            ("light speed", light_speed),
            ("b0", b0),
            ("dt", dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            mass,
            hbar,
            light_speed,
            b0,
            lambda: DEFAULT_LAMBDA,
            include_rest_mass: false,
            dt,
        })
    }

    pub fn with_rest_mass(mut self, on: bool) -> Self {
        self.include_rest_mass = on;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be non-negative, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    fn rest_energy(&self) -> f64 {
        if self.include_rest_mass {
            self.mass * self.light_speed * self.light_speed
        } else {
            0.0
        }
    }

    /// Coefficient of `(sqrt rho)_xx / sqrt rho` in `W`.
    pub fn nonlinear_coefficient(&self) -> f64 {
        (self.b0 * self.b0 - (2.0 * self.lambda * self.hbar).powi(2)) / (2.0 * self.mass)
    }
}

fn check_line(psi: &WaveField) -> Result<()> {
    if psi.grid().dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: psi.grid().dim(),
        });
    }
    Ok(())
}

/// One step of the linear equation.
pub fn step_linear(psi: &WaveField, cfg: &WaveSolverConfig) -> Result<WaveField> {
    check_line(psi)?;
    let v = vec![cfg.rest_energy(); psi.grid().len()];
    cayley(psi, cfg.hbar, cfg.hbar * cfg.hbar / (2.0 * cfg.mass), &v, cfg.dt)
}

/// One step of the nonlinear equation. `W` is evaluated at the midpoint of a
/// predictor step and then held fixed in the Crank–Nicolson solve.
pub fn step_nonlinear(psi: &WaveField, cfg: &WaveSolverConfig) -> Result<WaveField> {
    check_line(psi)?;
    let kin = cfg.b0 * cfg.b0 / (2.0 * cfg.mass);
    let rest = cfg.rest_energy();
    let with_rest = |w: Vec<f64>| -> Vec<f64> { w.into_iter().map(|w| w + rest).collect() };
    let predictor = cayley(psi, cfg.b0, kin, &with_rest(nonlinear_potential(psi, cfg)?), cfg.dt)?;
    let midpoint = WaveField::new(
        psi.grid().clone(),
        psi.k(),
        psi.values().iter().zip(predictor.values()).map(|(a, b)| 0.5 * (a + b)).collect(),
    )?;
    cayley(psi, cfg.b0, kin, &with_rest(nonlinear_potential(&midpoint, cfg)?), cfg.dt)
}

/// `W` node by node, from density ratios as `(ln rho)''/2 + ((ln rho)')^2/4`.
/// Nodes whose stencil touches vacuum get `W = 0`.
pub fn nonlinear_potential(psi: &WaveField, cfg: &WaveSolverConfig) -> Result<Vec<f64>> {
    let coeff = cfg.nonlinear_coefficient();
    if coeff == 0.0 {
        return Ok(vec![0.0; psi.grid().len()]);
    }
    let rho = psi.density();
    if !(rho.max() > 0.0) {
        return Err(Error::Density("wave field vanishes everywhere".into()));
    }
    let (g, _) = log_gradient(&rho, VACUUM_FLOOR);
    let (l, valid) = log_laplacian(&rho, VACUUM_FLOOR);
    let g2 = g.norm_squared();
    Ok((0..rho.values().len())
        .map(|i| {
            if valid[i] {
                coeff * (0.5 * l.values()[i] + 0.25 * g2.values()[i])
            } else {
                0.0
            }
        })
        .collect())
}

/// `(1 + i dt H / 2B) psi' = (1 - i dt H / 2B) psi` with `H = -kin D2 + diag(v)`,
/// applied to each component.
fn cayley(psi: &WaveField, big_b: f64, kin: f64, v: &[f64], dt: f64) -> Result<WaveField> {
    let grid = psi.grid();
    let n = grid.len();
    let h = grid.spacing(0);
    let i = Complex64::new(0.0, 1.0);
    let alpha = dt * kin / (2.0 * big_b * h * h);
    let off = -i * alpha;
    let diag: Vec<Complex64> = v.iter().map(|&v| 1.0 + i * (2.0 * alpha + dt * v / (2.0 * big_b))).collect();
    let periodic = grid.boundary() == Boundary::Periodic;
    let k = psi.k();
    let mut out = vec![Complex64::new(0.0, 0.0); psi.values().len()];
    for a in 0..k {
        let u = psi.component(a);
        let rhs_at = |j: usize| -> Complex64 {
            let (l, r) = if periodic {
                (u[(j + n - 1) % n], u[(j + 1) % n])
            } else {
                (
                    if j == 0 { Complex64::new(0.0, 0.0) } else { u[j - 1] },
                    if j == n - 1 { Complex64::new(0.0, 0.0) } else { u[j + 1] },
                )
            };
            u[j] * (2.0 - diag[j]) - off * (l + r)
        };
        let solved = if periodic {
            let rhs: Vec<Complex64> = (0..n).map(rhs_at).collect();
            cyclic_solve(off, &diag, &rhs)
        } else {
            let rhs: Vec<Complex64> = (1..n - 1).map(rhs_at).collect();
            let mut x = vec![Complex64::new(0.0, 0.0)];
            x.extend(thomas(off, &diag[1..n - 1], &rhs));
            x.push(Complex64::new(0.0, 0.0));
            x
        };
        for (j, z) in solved.into_iter().enumerate() {
            out[j * k + a] = z;
        }
    }
    WaveField::new(grid.clone(), k, out)
}

/// Tridiagonal solve with constant off-diagonal `e`.
fn thomas(e: Complex64, diag: &[Complex64], rhs: &[Complex64]) -> Vec<Complex64> {
    let n = diag.len();
    let mut c = vec![Complex64::new(0.0, 0.0); n];
    let mut d = vec![Complex64::new(0.0, 0.0); n];
    c[0] = e / diag[0];
    d[0] = rhs[0] / diag[0];
    for j in 1..n {
        let m = diag[j] - e * c[j - 1];
        c[j] = e / m;
        d[j] = (rhs[j] - e * d[j - 1]) / m;
    }
    for j in (0..n - 1).rev() {
        let next = d[j + 1];
        d[j] -= c[j] * next;
    }
    d
}

/// Cyclic tridiagonal solve (corners equal to `e`) by Sherman–Morrison.
fn cyclic_solve(e: Complex64, diag: &[Complex64], rhs: &[Complex64]) -> Vec<Complex64> {
    let n = diag.len();
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= e * e / gamma;
    let y = thomas(e, &b, rhs);
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    u[0] = gamma;
    u[n - 1] = e;
    let z = thomas(e, &b, &u);
    let factor = (y[0] + e / gamma * y[n - 1]) / (1.0 + z[0] + e / gamma * z[n - 1]);
    y.iter().zip(&z).map(|(y, z)| y - factor * z).collect()
}

/// Root-mean-square width `sqrt(<x^2> - <x>^2)` of a one-dimensional density.
pub fn rms_width(rho: &ScalarField) -> Result<f64> {
    let grid = rho.grid();
    if grid.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: grid.dim(),
        });
    }
    let xs = grid.xs();
    let r = rho.values();
    let m0 = integrate_values(grid, r);
    if !(m0 > 0.0) {
        return Err(Error::Density("density vanishes everywhere".into()));
    }
    let moment = |p: i32| integrate_values(grid, &xs.iter().zip(r).map(|(x, r)| x.powi(p) * r).collect::<Vec<_>>()) / m0;
    let mean = moment(1);
    Ok((moment(2) - mean * mean).max(0.0).sqrt())
}

/// Momentum spread predicted from the initial width, `hbar / (2 dx0)`, next to the
/// one measured on a late state: `p_rms^2 = <P^2 + p_st^2> - <P>^2`, where `P` is
/// the phase momentum and `p_st = lambda hbar grad ln rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyEstimate {
    pub width0: f64,
    pub width: f64,
    pub p_predicted: f64,
    pub p_measured: f64,
}

impl UncertaintyEstimate {
    pub fn ratio(&self) -> f64 {
        self.p_measured / self.p_predicted
    }
}

/// Minimum growth `width / width0` for a state to count as late.
pub const LATE_WIDTH_FACTOR: f64 = 3.0;

pub fn uncertainty_estimate(rho0: &ScalarField, late: &WaveField, cfg: &WaveSolverConfig) -> Result<UncertaintyEstimate> {
    if rho0.grid() != late.grid() {
        return Err(Error::GridMismatch);
    }
    let width0 = rms_width(rho0)?;
    let rho = late.density();
    let width = rms_width(&rho)?;
    if width < LATE_WIDTH_FACTOR * width0 {
        return Err(Error::RunTooShort(format!(
            "width grew from {width0:.4} to {width:.4}, need a factor {LATE_WIDTH_FACTOR}"
        )));
    }
    let (_, p) = reconstruct_rho_p(late, cfg.b0)?;
    let st = crate::psirep::stochastic_momentum(&rho, cfg.lambda, cfg.hbar)?;
    let grid = rho.grid();
    let r = rho.values();
    let m0 = integrate_values(grid, r);
    let p = p.component(0).values();
    let st = st.component(0).values();
    let mean = integrate_values(grid, &(0..r.len()).map(|i| r[i] * p[i]).collect::<Vec<_>>()) / m0;
    let second = integrate_values(
        grid,
        &(0..r.len()).map(|i| r[i] * (p[i] * p[i] + st[i] * st[i])).collect::<Vec<_>>(),
    ) / m0;
    Ok(UncertaintyEstimate {
        width0,
        width,
        p_predicted: cfg.hbar / (2.0 * width0),
        p_measured: (second - mean * mean).max(0.0).sqrt(),
    })
}

/// Gaussian packet `psi ∝ exp(-(x - x0)^2 / 4 sigma^2 + i k x)` normalized on `grid`.
pub fn gaussian_packet(grid: &Grid, x0: f64, sigma: f64, k: f64) -> Result<WaveField> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    WaveField::from_fn(grid, 1, |x| {
        let d = x[0] - x0;
        vec![Complex64::from_polar((-d * d / (4.0 * sigma * sigma)).exp(), k * x[0])]
    })?
    .normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psirep::phase_aligned_distance;
    use std::f64::consts::PI;

    fn evolve(psi: &WaveField, cfg: &WaveSolverConfig, steps: usize, nonlinear: bool) -> WaveField {
        let mut psi = psi.clone();
        for _ in 0..steps {
            psi = if nonlinear {
                step_nonlinear(&psi, cfg).unwrap()
            } else {
                step_linear(&psi, cfg).unwrap()
            };
        }
        psi
    }

    #[test]
    fn plane_wave_acquires_dispersion_phase() {
        let n = 400;
        let length = 20.0 * PI;
        let grid = Grid::line(0.0, length, n, Boundary::Periodic).unwrap();
        let k = 0.1;
        let psi = WaveField::from_fn(&grid, 1, |x| vec![Complex64::from_polar(1.0, k * x[0])]).unwrap();
        let cfg = WaveSolverConfig::new(1.0, 1.0, 1.0, 1.0, 0.01).unwrap();
        let steps = 1000;
        let out = evolve(&psi, &cfg, steps, false);
        let t = steps as f64 * cfg.dt;
        let h = grid.spacing(0);
        // discrete dispersion of the three-point Laplacian, and the Cayley phase of one step
        let omega_h = 2.0 / (h * h) * (k * h / 2.0).sin().powi(2);
        let per_step = -2.0 * (cfg.dt * omega_h / 2.0).atan();
        for (j, z) in out.values().iter().enumerate() {
            let x = grid.coord(j)[0];
            let exact_discrete = Complex64::from_polar(1.0, k * x + per_step * steps as f64);
            let continuum = Complex64::from_polar(1.0, k * x - k * k * t / 2.0);
            assert!((z - exact_discrete).norm() < 1e-10);
            assert!((z - continuum).norm() < 1e-5);
        }
    }

    #[test]
    fn norm_is_conserved() {
        let grid = Grid::line(-20.0, 20.0, 512, Boundary::Clamped).unwrap();
        let psi = gaussian_packet(&grid, 0.0, 1.0, 0.5).unwrap();
        let cfg = WaveSolverConfig::new(1.0, 1.0, 1.0, 1.0, 0.005).unwrap();
        let out = evolve(&psi, &cfg, 1000, false);
        assert!((out.norm() - 1.0).abs() < 1e-10);
        let cfg_nl = WaveSolverConfig::new(1.0, 1.0, 1.0, 2.0, 0.005).unwrap();
        let out = evolve(&psi, &cfg_nl, 1000, true);
        assert!((out.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn free_packet_follows_width_law() {
        let grid = Grid::line(-20.0, 20.0, 512, Boundary::Clamped).unwrap();
        let sigma = 1.0;
        let psi = gaussian_packet(&grid, 0.0, sigma, 0.0).unwrap();
        let cfg = WaveSolverConfig::new(1.0, 1.0, 1.0, 1.0, 1e-3).unwrap();
        let out = evolve(&psi, &cfg, 1000, false);
        let w2 = rms_width(&out.density()).unwrap().powi(2);
        let exact = sigma * sigma + (1.0 / (2.0 * sigma)).powi(2);
        assert!((w2 - exact).abs() / exact < 1e-3, "{w2} vs {exact}");
    }

    #[test]
    fn equal_constants_reduce_to_linear_step() {
        let grid = Grid::line(-10.0, 10.0, 256, Boundary::Clamped).unwrap();
        let psi = gaussian_packet(&grid, 0.5, 1.0, 0.3).unwrap();
        let cfg = WaveSolverConfig::new(1.0, 1.3, 1.0, 1.3, 0.01).unwrap();
        let a = evolve(&psi, &cfg, 50, false);
        let b = evolve(&psi, &cfg, 50, true);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn uniform_density_feels_no_nonlinear_potential() {
        let grid = Grid::line(0.0, 2.0 * PI, 64, Boundary::Periodic).unwrap();
        let psi = WaveField::from_fn(&grid, 1, |x| vec![Complex64::from_polar(1.0, 2.0 * x[0])]).unwrap();
        let cfg = WaveSolverConfig::new(1.0, 1.0, 1.0, 2.0, 0.01).unwrap();
        // |e^{i theta}|^2 is 1 only to roundoff
        assert!(nonlinear_potential(&psi, &cfg).unwrap().iter().all(|&w| w.abs() < 1e-11));
    }

    #[test]
    fn boosted_packet_translates() {
        let grid = Grid::line(-30.0, 30.0, 1200, Boundary::Periodic).unwrap();
        let (k, t) = (1.0, 4.0);
        let cfg = WaveSolverConfig::new(1.0, 1.0, 1.0, 1.0, 2e-3).unwrap();
        let steps = (t / cfg.dt).round() as usize;
        let rest = evolve(&gaussian_packet(&grid, 0.0, 1.0, 0.0).unwrap(), &cfg, steps, false);
        let moving = evolve(&gaussian_packet(&grid, 0.0, 1.0, k).unwrap(), &cfg, steps, false);
        // shift the resting packet by v t = hbar k t / m, an integer number of cells here
        let shift = (k * t / grid.spacing(0)).round() as usize;
        let n = grid.len();
        let r0 = rest.density_values();
        let r1 = moving.density_values();
        let l1: f64 = (0..n).map(|j| (r1[(j + shift) % n] - r0[j]).abs()).sum::<f64>() * grid.spacing(0);
        assert!(((k * t / grid.spacing(0)) - shift as f64).abs() < 1e-9);
        assert!(l1 < 1e-2, "L1 = {l1}");
    }

    #[test]
    fn rest_energy_only_rotates_the_phase() {
        let grid = Grid::line(-10.0, 10.0, 256, Boundary::Clamped).unwrap();
        let psi = gaussian_packet(&grid, 0.0, 1.0, 0.4).unwrap();
        let cfg = WaveSolverConfig::new(1.0, 1.0, 1.0, 1.0, 1e-3).unwrap();
        let steps = 500;
        let plain = evolve(&psi, &cfg, steps, false);
        let rest = evolve(&psi, &cfg.with_rest_mass(true), steps, false);
        let t = steps as f64 * cfg.dt;
        let factor = Complex64::from_polar(1.0, -t);
        for (a, b) in plain.values().iter().zip(rest.values()) {
            assert!((a * factor - b).norm() < 1e-6);
        }
        assert!(phase_aligned_distance(&plain, &rest).unwrap() < 1e-6);
    }

    #[test]
    fn cyclic_solver_inverts_the_operator() {
        let n = 9;
        let e = Complex64::new(0.3, -0.7);
        let diag: Vec<Complex64> = (0..n).map(|j| Complex64::new(2.0 + j as f64 * 0.1, 0.5)).collect();
        let rhs: Vec<Complex64> = (0..n).map(|j| Complex64::new(j as f64, 1.0 - j as f64)).collect();
        let x = cyclic_solve(e, &diag, &rhs);
        for j in 0..n {
            let back = diag[j] * x[j] + e * (x[(j + n - 1) % n] + x[(j + 1) % n]);
            assert!((back - rhs[j]).norm() < 1e-12);
        }
    }

    #[test]
    fn short_run_is_rejected() {
        let grid = Grid::line(-20.0, 20.0, 512, Boundary::Clamped).unwrap();
        let psi = gaussian_packet(&grid, 0.0, 1.0, 0.0).unwrap();
        let cfg = WaveSolverConfig::new(1.0, 1.0, 1.0, 1.0, 1e-2).unwrap();
        let out = evolve(&psi, &cfg, 10, false);
        assert!(matches!(
            uncertainty_estimate(&psi.density(), &out, &cfg),
            Err(Error::RunTooShort(_))
        ));
    }

    #[test]
    fn late_momentum_spread_matches_initial_width() {
        let grid = Grid::line(-40.0, 40.0, 1024, Boundary::Clamped).unwrap();
        let psi = gaussian_packet(&grid, 0.0, 1.0, 0.0).unwrap();
        let cfg = WaveSolverConfig::new(1.0, 1.0, 1.0, 1.0, 0.01).unwrap();
        let out = evolve(&psi, &cfg, 600, false);
        let est = uncertainty_estimate(&psi.density(), &out, &cfg).unwrap();
        assert!((est.ratio() - 1.0).abs() < 1e-2, "{est:?}");
    }
}
