//! Wave-function form of a pure ensemble: `psi_a = sqrt(rho) e^{i phi} u_a(xi)` with a
//! unit spinor `u` whose connection `Im(u^* d u)` reproduces the integration functions
//! `g`, the inverse map back to `(rho, P)`, the antisymmetric tensor `Q`, the discrete
//! action functionals and the gauge map between the nonlinear and linear wave equations.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::clebsch::{ClebschData, LabelMap};
use crate::error::{Error, Result};
use crate::fluid::FluidState;
use crate::hamiltonian::{check_density, stochastic_momentum_field, HamiltonianModel, DEFAULT_LAMBDA};
use crate::numerics::{
    first_derivative_by, integrate_values, AxisStencil, Boundary, Grid, ScalarField, VectorField,
    VACUUM_FLOOR,
};

/// Largest tolerated `| |u|^2 - 1 |` at a node.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// Phase differences between neighbouring nodes at or above this are rejected by the
/// gauge map: once scaled by `b0/hbar` they would no longer be resolved by the grid.
pub const PHASE_JUMP_LIMIT: f64 = FRAC_PI_2;

/// `k` complex components per grid node, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    grid: Grid,
    k: usize,
    values: Vec<Complex64>,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

impl WaveField {
    pub fn new(grid: Grid, k: usize, values: Vec<Complex64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter("a wave field needs at least one component".into()));
        }
        if values.len() != grid.len() * k {
            return Err(Error::Dimension {
                expected: grid.len() * k,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite { node: i / k });
        }
        Ok(Self { grid, k, values })
    }

    pub fn scalar(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    pub fn from_fn(grid: &Grid, k: usize, f: impl Fn(&[f64]) -> Vec<Complex64>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len() * k);
        for node in 0..grid.len() {
            let v = f(&grid.coord(node));
            if v.len() != k {
                return Err(Error::Dimension { expected: k, got: v.len() });
            }
            values.extend(v);
        }
        Self::new(grid.clone(), k, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Components at one node.
    pub fn at(&self, node: usize) -> &[Complex64] {
        &self.values[node * self.k..(node + 1) * self.k]
    }

    pub fn component(&self, a: usize) -> Vec<Complex64> {
        (0..self.grid.len()).map(|i| self.values[i * self.k + a]).collect()
    }

    pub fn density_values(&self) -> Vec<f64> {
        self.values
            .chunks(self.k)
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }

    pub fn density(&self) -> ScalarField {
        ScalarField::new(self.grid.clone(), self.density_values()).expect("finite wave field")
    }

    /// `int |psi|^2`.
    pub fn norm(&self) -> f64 {
        integrate_values(&self.grid, &self.density_values())
    }

    pub fn scaled(&self, c: Complex64) -> WaveField {
        WaveField {
            grid: self.grid.clone(),
            k: self.k,
            values: self.values.iter().map(|z| z * c).collect(),
        }
    }

    /// Rescaled to unit norm.
    pub fn normalized(&self) -> Result<WaveField> {
        let n = self.norm();
        if !(n > 0.0) {
            return Err(Error::Density("cannot normalize a vanishing wave field".into()));
        }
        Ok(self.scaled(Complex64::new(1.0 / n.sqrt(), 0.0)))
    }

    /// `int <self, other>` with the grid quadrature weights.
    pub fn inner(&self, other: &WaveField) -> Result<Complex64> {
        self.check_compatible(other)?;
        let w = self.grid.weights();
        Ok((0..self.grid.len())
            .map(|i| dot(self.at(i), other.at(i)) * w[i])
            .sum())
    }

    fn check_compatible(&self, other: &WaveField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.k != other.k {
            return Err(Error::Dimension {
                expected: self.k,
                got: other.k,
            });
        }
        Ok(())
    }
}

/// `min_c || a - e^{ic} b ||`, the L2 distance between two wave fields once the
/// unobservable global phase is removed.
pub fn phase_aligned_distance(a: &WaveField, b: &WaveField) -> Result<f64> {
    let ab = b.inner(a)?;
    let rot = if ab.norm() > 0.0 { ab / ab.norm() } else { Complex64::new(1.0, 0.0) };
    let w = a.grid.weights();
    let d2: f64 = (0..a.grid.len())
        .map(|i| {
            let s: f64 = a.at(i).iter().zip(b.at(i)).map(|(x, y)| (x - rot * y).norm_sqr()).sum();
            s * w[i]
        })
        .sum();
    Ok(d2.sqrt())
}

type SpinorFn = Arc<dyn Fn(&[f64]) -> Vec<Complex64> + Send + Sync>;

/// A map from label space (dimension `n`) to unit vectors in `C^k`.
#[derive(Clone)]
pub struct UnitSpinorMap {
    k: usize,
    n: usize,
    eval: SpinorFn,
}

impl fmt::Debug for UnitSpinorMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnitSpinorMap").field("k", &self.k).field("n", &self.n).finish()
    }
}

impl UnitSpinorMap {
    pub fn new(
        k: usize,
        n: usize,
        eval: impl Fn(&[f64]) -> Vec<Complex64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::Parameter(format!("spinor map needs k, n >= 1, got k={k}, n={n}")));
        }
        Ok(Self {
            k,
            n,
            eval: Arc::new(eval),
        })
    }

    /// `u = 1`, realizing `g = 0`.
    pub fn trivial(n: usize) -> Self {
        Self::new(1, n, |_| vec![Complex64::new(1.0, 0.0)]).expect("n >= 1")
    }

    /// `u = e^{i G(xi)}`, realizing `g = grad G`.
    pub fn phase(n: usize, big_g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(1, n, move |xi| vec![Complex64::from_polar(1.0, big_g(xi))]).expect("n >= 1")
    }

    /// `u = (cos xi2 e^{i xi1}, sin xi2 e^{-i xi1})`, realizing `g = (cos 2 xi2, 0)`:
    /// a two-component map whose connection has non-vanishing curl.
    pub fn two_level() -> Self {
        Self::new(2, 2, |xi| {
            vec![
                Complex64::from_polar(xi[1].cos(), xi[0]),
                Complex64::from_polar(xi[1].sin(), -xi[0]),
            ]
        })
        .expect("k = n = 2")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eval(&self, xi: &[f64]) -> Vec<Complex64> {
        (self.eval)(xi)
    }

    /// `g^b = Im sum_a u_a^* d_b u_a` from a five-point derivative in label space.
    pub fn connection(&self, xi: &[f64]) -> Vec<f64> {
        const H: f64 = 1e-3;
        let u = self.eval(xi);
        (0..self.n)
            .map(|b| {
                let at = |s: f64| {
                    let mut y = xi.to_vec();
                    y[b] += s * H;
                    self.eval(&y)
                };
                let (m2, m1, p1, p2) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
                (0..self.k)
                    .map(|a| {
                        let du = (m2[a] - p2[a] + 8.0 * (p1[a] - m1[a])) / (12.0 * H);
                        (u[a].conj() * du).im
                    })
                    .sum()
            })
            .collect()
    }
}

/// Worst deviations of a spinor map from unit norm and from the target `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UgReport {
    pub max_g_residual: f64,
    pub max_norm_deviation: f64,
}

/// Checks `|u| = 1` and `Im(u^* du) = g` at each probe point in label space.
pub fn verify_u_g(u: &UnitSpinorMap, data: &ClebschData, probes: &[Vec<f64>]) -> Result<UgReport> {
    if u.n() != data.dim() {
        return Err(Error::Dimension {
            expected: data.dim(),
            got: u.n(),
        });
    }
    let mut report = UgReport {
        max_g_residual: 0.0,
        max_norm_deviation: 0.0,
    };
    for xi in probes {
        if xi.len() != u.n() {
            return Err(Error::Dimension {
                expected: u.n(),
                got: xi.len(),
            });
        }
        let norm: f64 = u.eval(xi).iter().map(|z| z.norm_sqr()).sum();
        report.max_norm_deviation = report.max_norm_deviation.max((norm - 1.0).abs());
        for (a, b) in u.connection(xi).iter().zip(data.g().eval(xi)) {
            report.max_g_residual = report.max_g_residual.max((a - b).abs());
        }
    }
    Ok(report)
}

/// `psi_a = sqrt(rho) e^{i phi} u_a(xi(x))`.
pub fn build_psi(rho: &ScalarField, phi: &ScalarField, labels: &LabelMap, u: &UnitSpinorMap) -> Result<WaveField> {
    build_psi_values(rho, phi.values(), labels, u)
}

/// [`build_psi`] for a fluid state, using its full potentials and labels.
pub fn build_psi_from_fluid(state: &FluidState, u: &UnitSpinorMap) -> Result<WaveField> {
    build_psi_values(state.rho(), &state.phi_values(), &state.labels()?, u)
}

fn build_psi_values(rho: &ScalarField, phi: &[f64], labels: &LabelMap, u: &UnitSpinorMap) -> Result<WaveField> {
    let grid = rho.grid();
    if labels.grid() != grid || phi.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    if labels.fields().len() != u.n() {
        return Err(Error::Dimension {
            expected: u.n(),
            got: labels.fields().len(),
        });
    }
    check_density(rho)?;
    let mut values = Vec::with_capacity(grid.len() * u.k());
    for (node, phase) in phi.iter().enumerate() {
        let spin = u.eval(&labels.at(node));
        if spin.len() != u.k() {
            return Err(Error::Dimension {
                expected: u.k(),
                got: spin.len(),
            });
        }
        let deviation = spin.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0;
        if deviation.abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { deviation });
        }
        let amp = Complex64::from_polar(rho.values()[node].sqrt(), *phase);
        values.extend(spin.iter().map(|s| amp * s));
    }
    WaveField::new(grid.clone(), u.k(), values)
}

fn vacuum_mask(rho: &[f64]) -> Result<Vec<bool>> {
    let max = rho.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::Density("wave field vanishes everywhere".into()));
    }
    let floor = VACUUM_FLOOR * max;
    Ok(rho.iter().map(|&r| !(r >= floor && r > 0.0)).collect())
}

/// Density and momentum of a wave field. Along each axis
/// `P = b0 arg<psi(x-h), psi(x+h)> / 2h`, with the one-sided
/// `(4 arg<psi_0, psi_1> - arg<psi_0, psi_2>) / 2h` at clamped edges; working with
/// phase differences keeps the result independent of branch cuts and of any
/// constant unitary mixing of the components. `P = 0` wherever the stencil touches vacuum.
pub fn reconstruct_rho_p(psi: &WaveField, b0: f64) -> Result<(ScalarField, VectorField)> {
    if !(b0 > 0.0 && b0.is_finite()) {
        return Err(Error::Parameter(format!("b0 must be positive, got {b0}")));
    }
    let grid = psi.grid();
    let rho = psi.density_values();
    let vac = vacuum_mask(&rho)?;
    let arg = |a: usize, b: usize| dot(psi.at(a), psi.at(b)).arg();
    let mut comps = Vec::with_capacity(grid.dim());
    for axis in 0..grid.dim() {
        let st = AxisStencil::new(grid, axis);
        let h = grid.spacing(axis);
        let p = (0..grid.len())
            .map(|node| {
                let (used, d) = match st.edge(node) {
                    0 => {
                        let (a, b) = (st.offset(node, -1), st.offset(node, 1));
                        ([a, b], arg(a, b))
                    }
                    -1 => {
                        let (a, b) = (st.offset(node, 1), st.offset(node, 2));
                        ([a, b], 4.0 * arg(node, a) - arg(node, b))
                    }
                    _ => {
                        let (a, b) = (st.offset(node, -1), st.offset(node, -2));
                        ([a, b], 4.0 * arg(a, node) - arg(b, node))
                    }
                };
                if vac[node] || used.iter().any(|&i| vac[i]) {
                    0.0
                } else {
                    b0 * d / (2.0 * h)
                }
            })
            .collect();
        comps.push(ScalarField::new(grid.clone(), p)?);
    }
    Ok((ScalarField::new(grid.clone(), rho)?, VectorField::new(comps)?))
}

fn complex_derivative(grid: &Grid, axis: usize, v: &[Complex64]) -> Vec<Complex64> {
    let re = first_derivative_by(grid, axis, v, |a, b| b.re - a.re);
    let im = first_derivative_by(grid, axis, v, |a, b| b.im - a.im);
    re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect()
}

/// `Q_{ab,c} = (psi_a d_c psi_b - psi_b d_c psi_a) / rho`, zero at vacuum nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    k: usize,
    dim: usize,
    values: Vec<Complex64>,
    vacuum: Vec<bool>,
}

impl QTensor {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, node: usize, a: usize, b: usize, c: usize) -> Complex64 {
        self.values[((node * self.k + a) * self.k + b) * self.dim + c]
    }

    /// `true` where the density is below the vacuum floor.
    pub fn vacuum(&self) -> &[bool] {
        &self.vacuum
    }

    /// `sum_{a,b,c} |Q_{ab,c}|^2` at one node.
    pub fn norm_sqr(&self, node: usize) -> f64 {
        let n = self.k * self.k * self.dim;
        self.values[node * n..(node + 1) * n].iter().map(|z| z.norm_sqr()).sum()
    }
}

pub fn q_tensor(psi: &WaveField) -> Result<QTensor> {
    let grid = psi.grid();
    let (k, dim) = (psi.k(), grid.dim());
    let rho = psi.density_values();
    let vacuum = vacuum_mask(&rho)?;
    // derivs[a][c][node]
    let derivs: Vec<Vec<Vec<Complex64>>> = (0..k)
        .map(|a| {
            let comp = psi.component(a);
            (0..dim).map(|c| complex_derivative(grid, c, &comp)).collect()
        })
        .collect();
    let mut values = vec![Complex64::new(0.0, 0.0); grid.len() * k * k * dim];
    for node in 0..grid.len() {
        if vacuum[node] {
            continue;
        }
        let p = psi.at(node);
        for a in 0..k {
            for b in 0..k {
                for c in 0..dim {
                    let q = p[a] * derivs[b][c][node] - p[b] * derivs[a][c][node];
                    values[((node * k + a) * k + b) * dim + c] = q / rho[node];
                }
            }
        }
    }
    Ok(QTensor { k, dim, values, vacuum })
}

/// `lambda hbar grad ln rho`; depends on `rho` only through ratios, so it is unchanged
/// when the density is rescaled.
pub fn stochastic_momentum(rho: &ScalarField, lambda: f64, hbar: f64) -> Result<VectorField> {
    stochastic_momentum_field(rho, lambda, hbar)
}

/// Number of components `k = 2 k_m + 1` of a spin-`k_m` representation.
pub fn k_spin(k_m: usize) -> Result<usize> {
    if k_m == 0 {
        return Err(Error::Parameter("spin representations need k_m >= 1".into()));
    }
    Ok(2 * k_m + 1)
}

/// Gauge map from the nonlinear equation with constant `b0` to the linear one:
/// `psi~ = |psi| exp((b0/hbar) i theta)` with `theta` the unwrapped phase of `psi`.
///
/// The phase is unwrapped along grid lines starting from the node of largest `|psi|`
/// (sweeping axis 0 first, then axis 1 from every node reached, then axis 2). Vacuum
/// nodes map to zero; a jump of [`PHASE_JUMP_LIMIT`] or more between adjacent
/// non-vacuum nodes is rejected. The global phase of the result is fixed only up to
/// a multiple of `2 pi b0/hbar`.
pub fn gauge_map(psi: &WaveField, b0: f64, hbar: f64) -> Result<WaveField> {
    if psi.k() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: psi.k(),
        });
    }
    if !(b0 > 0.0 && hbar > 0.0 && b0.is_finite() && hbar.is_finite()) {
        return Err(Error::Parameter(format!("gauge map needs b0, hbar > 0, got {b0}, {hbar}")));
    }
    let grid = psi.grid();
    let v = psi.values();
    let rho = psi.density_values();
    let vac = vacuum_mask(&rho)?;
    let reference = (0..grid.len())
        .max_by(|&a, &b| rho[a].total_cmp(&rho[b]))
        .expect("grid is non-empty");

    let mut theta = vec![0.0; grid.len()];
    let mut done = vec![false; grid.len()];
    theta[reference] = v[reference].arg();
    done[reference] = true;
    for axis in 0..grid.dim() {
        let seeds: Vec<usize> = (0..grid.len()).filter(|&i| done[i]).collect();
        let st = AxisStencil::new(grid, axis);
        let n = grid.axis(axis).n_points as isize;
        for seed in seeds {
            let pos = st.position(seed) as isize;
            for dir in [1isize, -1] {
                // (last non-vacuum node, its unwrapped phase, adjacent to the current node)
                let mut last = if vac[seed] { None } else { Some((seed, theta[seed])) };
                let mut adjacent = last.is_some();
                let mut step = 1;
                loop {
                    let j = pos + dir * step;
                    if j < 0 || j >= n {
                        break;
                    }
                    let node = (seed as isize + (j - pos) * grid.stride(axis) as isize) as usize;
                    done[node] = true;
                    step += 1;
                    if vac[node] {
                        adjacent = false;
                        continue;
                    }
                    let t = match last {
                        Some((prev, t_prev)) => {
                            let jump = (v[prev].conj() * v[node]).arg();
                            if adjacent && jump.abs() >= PHASE_JUMP_LIMIT {
                                return Err(Error::PhaseJump { node: prev, next: node, jump });
                            }
                            t_prev + jump
                        }
                        None => v[node].arg(),
                    };
                    theta[node] = t;
                    last = Some((node, t));
                    adjacent = true;
                }
            }
        }
    }
    let s = b0 / hbar;
    let values = (0..grid.len())
        .map(|i| {
            if vac[i] {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar(v[i].norm(), s * theta[i])
            }
        })
        .collect();
    WaveField::new(grid.clone(), 1, values)
}

/// Action functionals. The first three act on a history of fluid states, the rest on
/// a history of wave fields.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionVariant {
    /// `int rho (-H(x, P) - b0 [d_t phi + g d_t xi])` for a point Hamiltonian.
    EnsembleHamilton(HamiltonianModel),
    /// `int (i b0/2)(psi^* d_t psi - c.c.) - H(x, P(psi)) rho` for a point Hamiltonian.
    PsiGeneric(HamiltonianModel),
    /// Relativistic stochastic energy `sqrt(m^2 c^4 + P^2 c^2 + p_st^2 c^2)`.
    RelStochastic,
    /// Its non-relativistic limit `m c^2 + P^2/2m + p_st^2/2m`.
    NonRelStochastic,
    /// Non-relativistic stochastic action in wave-function form, momentum from the phase.
    PsiPolar,
    /// The form with `|grad psi|^2`, the `Q` contraction and the `(grad rho)^2 / rho` term.
    PsiNonlinear,
    /// The linear action with `hbar` in place of `b0`.
    PsiLinear,
}

impl ActionVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ActionVariant::EnsembleHamilton(_) => "ensemble-hamilton",
            ActionVariant::PsiGeneric(_) => "psi-generic",
            ActionVariant::RelStochastic => "rel-stochastic",
            ActionVariant::NonRelStochastic => "nonrel-stochastic",
            ActionVariant::PsiPolar => "psi-polar",
            ActionVariant::PsiNonlinear => "psi-nonlinear",
            ActionVariant::PsiLinear => "psi-linear",
        }
    }
}

/// Physical constants entering the action functionals. For fluid histories `b0` is
/// taken from the states' Clebsch data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionParams {
    pub b0: f64,
    pub mass: f64,
    pub light_speed: f64,
    pub hbar: f64,
    pub lambda: f64,
}

impl ActionParams {
    pub fn new(b0: f64, mass: f64, light_speed: f64, hbar: f64) -> Result<Self> {
        for (name, v) in [("b0", b0), ("mass", mass), ("light speed", light_speed), ("hbar", hbar)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            b0,
            mass,
            light_speed,
            hbar,
            lambda: DEFAULT_LAMBDA,
        })
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be non-negative, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }
}

/// Field history over which an action is evaluated. The time span is
/// `(levels - 1) dt`; at least two levels are needed.
#[derive(Debug, Clone, Copy)]
pub enum ActionFields<'a> {
    Fluid(&'a [FluidState]),
    Wave { levels: &'a [WaveField], dt: f64 },
}

/// Discrete action. Time derivatives are differences across each link between
/// consecutive levels; every other term is evaluated on the link-midpoint fields.
/// Terms with `|grad psi|^2` or `(grad rho)^2/rho` are summed over spatial links with
/// forward differences, all others use the node quadrature weights. With this
/// quadrature the Crank–Nicolson solution of the linear equation is an exact
/// stationary point of [`ActionVariant::PsiLinear`].
pub fn action_eval(variant: &ActionVariant, params: &ActionParams, fields: ActionFields<'_>) -> Result<f64> {
    match (variant, fields) {
        (
            ActionVariant::EnsembleHamilton(_) | ActionVariant::RelStochastic | ActionVariant::NonRelStochastic,
            ActionFields::Fluid(history),
        ) => fluid_action(variant, params, history),
        (
            ActionVariant::PsiGeneric(_)
            | ActionVariant::PsiPolar
            | ActionVariant::PsiNonlinear
            | ActionVariant::PsiLinear,
            ActionFields::Wave { levels, dt },
        ) => wave_action(variant, params, levels, dt),
        (v, ActionFields::Fluid(_)) => Err(Error::Variant {
            op: "action on fluid history",
            variant: v.name(),
        }),
        (v, ActionFields::Wave { .. }) => Err(Error::Variant {
            op: "action on wave history",
            variant: v.name(),
        }),
    }
}

fn history_len(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InsufficientHistory { need: 2, got: n });
    }
    Ok(())
}

fn mid(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

fn fluid_action(variant: &ActionVariant, params: &ActionParams, history: &[FluidState]) -> Result<f64> {
    history_len(history.len())?;
    let grid = history[0].grid().clone();
    let b0 = history[0].clebsch().b0();
    let dt = history[1].t() - history[0].t();
    if !(dt > 0.0) {
        return Err(Error::Parameter("fluid history must advance in time".into()));
    }
    for w in history.windows(2) {
        if w[1].grid() != &grid {
            return Err(Error::GridMismatch);
        }
        if ((w[1].t() - w[0].t()) - dt).abs() > 1e-9 * dt {
            return Err(Error::Parameter("fluid history must be equally spaced in time".into()));
        }
        if w[1].clebsch().b0() != b0 {
            return Err(Error::Parameter("b0 changes along the history".into()));
        }
    }
    let (m, c) = (params.mass, params.light_speed);
    let xs = grid.xs();
    let d1 = |v: &[f64]| first_derivative_by(&grid, 0, v, |a, b| b - a);
    let mut total = 0.0;
    for w in history.windows(2) {
        let (s0, s1) = (&w[0], &w[1]);
        let g = s0.clebsch().g();
        let ((phi0, ps0), (xi0, xs0)) = s0.potential_parts();
        let ((phi1, ps1), (xi1, xs1)) = s1.potential_parts();
        let rho = ScalarField::new(grid.clone(), mid(s0.rho().values(), s1.rho().values()))?;
        let phi_x = d1(&mid(phi0.values(), phi1.values()));
        let xi_grid = mid(xi0.values(), xi1.values());
        let xi_x = d1(&xi_grid);
        let (phi_slope, xi_slope) = (0.5 * (ps0 + ps1), 0.5 * (xs0 + xs1));
        let (phi_a, phi_b) = (s0.phi_values(), s1.phi_values());
        let (xi_a, xi_b) = (s0.xi_values(), s1.xi_values());
        let p_st = match variant {
            ActionVariant::EnsembleHamilton(_) => None,
            _ => Some(stochastic_momentum_field(&rho, params.lambda, params.hbar)?),
        };
        let t_mid = 0.5 * (s0.t() + s1.t());
        let mut density = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let xi = xi_grid[i] + xi_slope * xs[i];
            let gi = g.eval(&[xi])[0];
            let p = b0 * (phi_x[i] + phi_slope + gi * (xi_x[i] + xi_slope));
            let time = b0 * ((phi_b[i] - phi_a[i]) + gi * (xi_b[i] - xi_a[i])) / dt;
            let h = match variant {
                ActionVariant::EnsembleHamilton(model) => model.energy(t_mid, &[xs[i]], &[p])?,
                ActionVariant::RelStochastic => {
                    let st = p_st.as_ref().expect("stochastic variant").component(0).values()[i];
                    (m * m * c.powi(4) + c * c * (p * p + st * st)).sqrt()
                }
                _ => {
                    let st = p_st.as_ref().expect("stochastic variant").component(0).values()[i];
                    m * c * c + (p * p + st * st) / (2.0 * m)
                }
            };
            density.push(rho.values()[i] * (-h - time));
        }
        total += dt * integrate_values(&grid, &density);
    }
    Ok(total)
}

/// Quadrature weight of the spatial link from `node` to its forward neighbour along
/// `axis`: `h_axis` times the transverse node weights.
fn link_weights(grid: &Grid, axis: usize) -> Vec<Option<(usize, f64)>> {
    let st = AxisStencil::new(grid, axis);
    let w = grid.weights();
    let h = grid.spacing(axis);
    let clamped = grid.boundary() == Boundary::Clamped;
    (0..grid.len())
        .map(|node| {
            let edge = st.edge(node);
            if clamped && edge == 1 {
                return None;
            }
            let own = if clamped && edge != 0 { 0.5 * h } else { h };
            Some((st.offset(node, 1), w[node] / own * h))
        })
        .collect()
}

fn wave_action(variant: &ActionVariant, params: &ActionParams, levels: &[WaveField], dt: f64) -> Result<f64> {
    history_len(levels.len())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    let grid = levels[0].grid().clone();
    for l in &levels[1..] {
        levels[0].check_compatible(l)?;
    }
    let ActionParams {
        b0,
        mass: m,
        light_speed: c,
        hbar,
        lambda,
    } = *params;
    let links: Vec<_> = (0..grid.dim()).map(|a| link_weights(&grid, a)).collect();
    let weights = grid.weights();
    let xs: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.coord(i)).collect();
    let time_coeff = if *variant == ActionVariant::PsiLinear { hbar } else { b0 };
    let mut total = 0.0;
    for (n, w) in levels.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        let psi = WaveField::new(
            grid.clone(),
            a.k(),
            a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect(),
        )?;
        let rho = psi.density_values();
        // the generic form carries the full point Hamiltonian, rest energy included
        let rest = if matches!(variant, ActionVariant::PsiGeneric(_)) { 0.0 } else { m * c * c };
        let mut nodes: Vec<f64> = (0..grid.len())
            .map(|i| -time_coeff * dot(a.at(i), b.at(i)).im / dt - rest * rho[i])
            .collect();
        let mut link_sum = 0.0;
        let t_mid = (n as f64 + 0.5) * dt;
        match variant {
            ActionVariant::PsiGeneric(model) => {
                let (_, p) = reconstruct_rho_p(&psi, b0)?;
                for (i, v) in nodes.iter_mut().enumerate() {
                    *v -= rho[i] * model.energy(t_mid, &xs[i], &p.at(i))?;
                }
            }
            ActionVariant::PsiPolar => {
                let (rho_f, p) = reconstruct_rho_p(&psi, b0)?;
                let st = stochastic_momentum_field(&rho_f, lambda, hbar)?;
                let (p2, s2) = (p.norm_squared(), st.norm_squared());
                for (i, v) in nodes.iter_mut().enumerate() {
                    *v -= rho[i] * (p2.values()[i] + s2.values()[i]) / (2.0 * m);
                }
            }
            ActionVariant::PsiNonlinear => {
                if psi.k() > 1 {
                    let q = q_tensor(&psi)?;
                    for (i, v) in nodes.iter_mut().enumerate() {
                        *v += b0 * b0 / (4.0 * m) * q.norm_sqr(i) * rho[i];
                    }
                }
                let vac = vacuum_mask(&rho)?;
                let coeff = (b0 * b0 - (2.0 * lambda * hbar).powi(2)) / (8.0 * m);
                link_sum += kinetic_links(&psi, &links, b0 * b0 / (2.0 * m));
                for (axis, ls) in links.iter().enumerate() {
                    let h = grid.spacing(axis);
                    for (i, l) in ls.iter().enumerate() {
                        let Some((j, wl)) = *l else { continue };
                        if vac[i] || vac[j] {
                            continue;
                        }
                        // ((sqrt a + sqrt b)/2)^2 makes (D rho)^2 / 4 rho_link = (D sqrt rho)^2
                        let rl = 0.25 * (rho[i].sqrt() + rho[j].sqrt()).powi(2);
                        let d = (rho[j] - rho[i]) / h;
                        link_sum += wl * coeff * d * d / rl;
                    }
                }
            }
            ActionVariant::PsiLinear => {
                link_sum += kinetic_links(&psi, &links, hbar * hbar / (2.0 * m));
            }
            _ => unreachable!("fluid variants are dispatched elsewhere"),
        }
        let node_sum: f64 = nodes.iter().zip(&weights).map(|(v, w)| v * w).sum();
        total += dt * (node_sum + link_sum);
    }
    Ok(total)
}

/// `-coeff sum_links w |D psi|^2`.
fn kinetic_links(psi: &WaveField, links: &[Vec<Option<(usize, f64)>>], coeff: f64) -> f64 {
    let grid = psi.grid();
    let mut s = 0.0;
    for (axis, ls) in links.iter().enumerate() {
        let h = grid.spacing(axis);
        for (i, l) in ls.iter().enumerate() {
            let Some((j, wl)) = *l else { continue };
            let d: f64 = psi.at(i).iter().zip(psi.at(j)).map(|(x, y)| (y - x).norm_sqr()).sum();
            s -= wl * coeff * d / (h * h);
        }
    }
    s
}
