//! Clebsch-potential momentum `P = b0 (grad phi + g^a(xi) grad xi_a)` and numerical
//! checks of the Jacobian identities that make it a first integral of the
//! label-variation equations.
//!
//! Index conventions for the identity probes: coordinates `x^k`, `k = 0..=n`, with
//! `x^0 = t`; labels `xi_i`, `i = 0..=n`, with `xi_0` the auxiliary time label.
//! `M[i][k] = d xi_i / d x^k`, `J = det M`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{gradient, Grid, RngStream, ScalarField, VectorField};

type LabelFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type LabelJacFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Integration functions `g^a(xi)`, `a = 1..=n`.
#[derive(Clone)]
pub enum IntegrationFunctions {
    Zero { n: usize },
    Constant(Vec<f64>),
    /// `g = A xi + c`
    Linear { a: DMatrix<f64>, c: DVector<f64> },
    /// Multilinear interpolation of samples over label space.
    Tabulated(VectorField),
    /// Closed form, with optional analytic Jacobian `[a][b] = dg^a / dxi_b`.
    Custom {
        n: usize,
        eval: LabelFn,
        jacobian: Option<LabelJacFn>,
    },
}

impl fmt::Debug for IntegrationFunctions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero { n } => write!(f, "Zero {{ n: {n} }}"),
            Self::Constant(c) => write!(f, "Constant({c:?})"),
            Self::Linear { a, c } => write!(f, "Linear {{ a: {a:?}, c: {c:?} }}"),
            Self::Tabulated(v) => write!(f, "Tabulated(dim {})", v.grid().dim()),
            Self::Custom { n, jacobian, .. } => write!(
                f,
                "Custom {{ n: {n}, analytic_jacobian: {} }}",
                jacobian.is_some()
            ),
        }
    }
}

impl IntegrationFunctions {
    pub fn custom(n: usize, eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self::Custom {
            n,
            eval: Arc::new(eval),
            jacobian: None,
        }
    }

    pub fn custom_with_jacobian(
        n: usize,
        eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::Custom {
            n,
            eval: Arc::new(eval),
            jacobian: Some(Arc::new(jacobian)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Zero { n } | Self::Custom { n, .. } => *n,
            Self::Constant(c) => c.len(),
            Self::Linear { c, .. } => c.len(),
            Self::Tabulated(v) => v.components().len(),
        }
    }

    pub fn eval(&self, xi: &[f64]) -> Vec<f64> {
        match self {
            Self::Zero { n } => vec![0.0; *n],
            Self::Constant(c) => c.clone(),
            Self::Linear { a, c } => (a * DVector::from_column_slice(xi) + c).as_slice().to_vec(),
            Self::Tabulated(v) => v.interpolate(xi),
            Self::Custom { eval, .. } => eval(xi),
        }
    }

    /// `[a][b] = dg^a / dxi_b`; central differences where no closed form exists.
    pub fn jacobian(&self, xi: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        match self {
            Self::Zero { .. } | Self::Constant(_) => DMatrix::zeros(n, n),
            Self::Linear { a, .. } => a.clone(),
            Self::Custom {
                jacobian: Some(j), ..
            } => j(xi),
            _ => {
                let mut out = DMatrix::zeros(n, n);
                let mut probe = xi.to_vec();
                for b in 0..n {
                    let step = 1e-6 * (1.0 + xi[b].abs());
                    probe[b] = xi[b] + step;
                    let up = self.eval(&probe);
                    probe[b] = xi[b] - step;
                    let down = self.eval(&probe);
                    probe[b] = xi[b];
                    for a in 0..n {
                        out[(a, b)] = (up[a] - down[a]) / (2.0 * step);
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClebschData {
    b0: f64,
    g: IntegrationFunctions,
}

impl ClebschData {
    pub fn new(b0: f64, g: IntegrationFunctions) -> Result<Self> {
        if !(b0.is_finite() && b0 != 0.0) {
            return Err(Error::Parameter(format!("b0 must be finite and nonzero, got {b0}")));
        }
        if let IntegrationFunctions::Tabulated(v) = &g {
            if v.components().len() != v.grid().dim() {
                return Err(Error::Dimension {
                    expected: v.grid().dim(),
                    got: v.components().len(),
                });
            }
        }
        Ok(Self { b0, g })
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn g(&self) -> &IntegrationFunctions {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }
}

/// Label fields `xi_a(x)` sampled on a spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    xi: Vec<ScalarField>,
}

impl LabelMap {
    pub fn new(xi: Vec<ScalarField>) -> Result<Self> {
        let Some(first) = xi.first() else {
            return Err(Error::Dimension { expected: 1, got: 0 });
        };
        let dim = first.grid().dim();
        if xi.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: xi.len(),
            });
        }
        if xi.iter().any(|f| f.grid() != first.grid()) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { xi })
    }

    /// Standard labeling `xi = x`.
    pub fn identity(grid: &Grid) -> Self {
        Self::from_fn(grid, |x| x.to_vec()).expect("coordinates are finite")
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let vals: Vec<Vec<f64>> = (0..grid.len()).map(|i| f(&grid.coord(i))).collect();
        let xi = (0..grid.dim())
            .map(|a| ScalarField::new(grid.clone(), vals.iter().map(|v| v[a]).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(xi)
    }

    pub fn grid(&self) -> &Grid {
        self.xi[0].grid()
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.xi
    }

    pub fn at(&self, node: usize) -> Vec<f64> {
        self.xi.iter().map(|f| f.values()[node]).collect()
    }
}

/// `P_b = b0 (d_b phi + g^a(xi) d_b xi_a)` with grid derivatives.
pub fn clebsch_momentum(phi: &ScalarField, labels: &LabelMap, data: &ClebschData) -> Result<VectorField> {
    let grid = phi.grid();
    if labels.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if data.dim() != grid.dim() {
        return Err(Error::Dimension {
            expected: grid.dim(),
            got: data.dim(),
        });
    }
    let dphi = gradient(phi);
    let dxi: Vec<VectorField> = labels.fields().iter().map(gradient).collect();
    let g_at: Vec<Vec<f64>> = (0..grid.len()).map(|i| data.g.eval(&labels.at(i))).collect();
    let comps = (0..grid.dim())
        .map(|b| {
            let vals = (0..grid.len())
                .map(|i| {
                    let mut s = dphi.component(b).values()[i];
                    for (a, d) in dxi.iter().enumerate() {
                        s += g_at[i][a] * d.component(b).values()[i];
                    }
                    data.b0 * s
                })
                .collect();
            ScalarField::new(grid.clone(), vals)
        })
        .collect::<Result<Vec<_>>>()?;
    VectorField::new(comps)
}

/// Antisymmetric `Omega^{ab} = dg^a/dxi_b - dg^b/dxi_a` (no b0 factor).
#[derive(Debug, Clone, PartialEq)]
pub struct Vorticity {
    pub omega: DMatrix<f64>,
}

impl Vorticity {
    pub fn max_abs(&self) -> f64 {
        self.omega.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_irrotational(&self, tol: f64) -> bool {
        self.max_abs() < tol
    }
}

pub fn vorticity(data: &ClebschData, at: &[f64]) -> Vorticity {
    let j = data.g.jacobian(at);
    Vorticity {
        omega: &j - j.transpose(),
    }
}

/// `g^a(xi) = p0_a(xi) / b0` for the labeling `xi(0, x) = x`, `phi(0, x) = 0`.
pub fn fit_g_from_initial(p0: &VectorField, b0: f64) -> Result<ClebschData> {
    if b0 == 0.0 {
        return Err(Error::Parameter("b0 must be nonzero to fit g".into()));
    }
    let g = VectorField::new(p0.components().iter().map(|c| c.scaled(1.0 / b0)).collect())?;
    ClebschData::new(b0, IntegrationFunctions::Tabulated(g))
}

/// Closed-form map `x -> xi` on `R^D`, `D = n + 1`, with analytic Jacobian.
pub trait ProbeMap: Sync {
    fn dim(&self) -> usize;
    fn labels(&self, x: &[f64]) -> Vec<f64>;
    /// `[i][k] = d xi_i / d x^k`
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// `xi_i = (A x)_i + eps_i sin((B x)_i + c_i)`
#[derive(Debug, Clone, PartialEq)]
pub struct SineMap {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub eps: DVector<f64>,
}

impl SineMap {
    pub fn linear(a: DMatrix<f64>) -> Self {
        let d = a.nrows();
        Self {
            a,
            b: DMatrix::zeros(d, d),
            c: DVector::zeros(d),
            eps: DVector::zeros(d),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::linear(DMatrix::identity(d, d))
    }

    /// Near-identity map with O(1) frequencies and moderate amplitudes.
    pub fn random(d: usize, rng: &mut RngStream) -> Self {
        let a = DMatrix::from_fn(d, d, |i, j| {
            let base = if i == j { 1.0 } else { 0.0 };
            base + rng.uniform_in(-0.25, 0.25)
        });
        let b = DMatrix::from_fn(d, d, |_, _| rng.uniform_in(-1.0, 1.0));
        let c = DVector::from_fn(d, |_, _| rng.uniform_in(0.0, std::f64::consts::TAU));
        let eps = DVector::from_fn(d, |_, _| rng.uniform_in(0.05, 0.3));
        Self { a, b, c, eps }
    }
}

impl ProbeMap for SineMap {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn labels(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        let lin = &self.a * &x;
        let arg = &self.b * &x + &self.c;
        (0..self.dim())
            .map(|i| lin[i] + self.eps[i] * arg[i].sin())
            .collect()
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let arg = &self.b * DVector::from_column_slice(x) + &self.c;
        DMatrix::from_fn(self.dim(), self.dim(), |i, k| {
            self.a[(i, k)] + self.eps[i] * arg[i].cos() * self.b[(i, k)]
        })
    }
}

/// Scalar potential with analytic gradient, used as `phi(x)` in integration probes.
pub trait ProbeScalar: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// `offset + sum_m amp_m sin(k_m . x + phase_m)`
#[derive(Debug, Clone, PartialEq)]
pub struct SineSum {
    pub offset: f64,
    pub terms: Vec<(f64, Vec<f64>, f64)>,
}

impl SineSum {
    pub fn constant(c: f64) -> Self {
        Self {
            offset: c,
            terms: Vec::new(),
        }
    }

    pub fn random(d: usize, modes: usize, rng: &mut RngStream) -> Self {
        let terms = (0..modes)
            .map(|_| {
                let amp = rng.uniform_in(-1.0, 1.0);
                let k = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                let ph = rng.uniform_in(0.0, std::f64::consts::TAU);
                (amp, k, ph)
            })
            .collect();
        Self {
            offset: rng.uniform_in(-1.0, 1.0),
            terms,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ProbeScalar for SineSum {
    fn value(&self, x: &[f64]) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|(a, k, p)| a * (dot(k, x) + p).sin())
                .sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (a, k, p) in &self.terms {
            let c = a * (dot(k, x) + p).cos();
            for (gi, ki) in g.iter_mut().zip(k) {
                *gi += c * ki;
            }
        }
        g
    }
}

/// `dJ / dM[i][k]`, from `J M^{-T}`.
fn cofactors(m: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let det = m.determinant();
    let scale: f64 = m.row_iter().map(|r| r.norm()).product();
    if !(det.abs() > 1e-12 * scale) {
        return Err(Error::SingularJacobian { det });
    }
    let inv = m
        .clone()
        .try_inverse()
        .ok_or(Error::SingularJacobian { det })?;
    Ok((det, inv.transpose() * det))
}

/// `d^2 J / dM[i][k] dM[s][l]` as signed complementary minors; flat index `((i*D+k)*D+s)*D+l`.
fn second_derivatives(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = vec![0.0; d * d * d * d];
    for i in 0..d {
        for k in 0..d {
            for s in 0..d {
                if s == i {
                    continue;
                }
                for l in 0..d {
                    if l == k {
                        continue;
                    }
                    let rows: Vec<usize> = (0..d).filter(|&r| r != i && r != s).collect();
                    let cols: Vec<usize> = (0..d).filter(|&c| c != k && c != l).collect();
                    let minor = if rows.is_empty() {
                        1.0
                    } else {
                        DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
                            .determinant()
                    };
                    // position of (s, l) inside the (i, k) minor
                    let sp = s - usize::from(s > i);
                    let lp = l - usize::from(l > k);
                    let sign = if (i + k + sp + lp) % 2 == 0 { 1.0 } else { -1.0 };
                    out[((i * d + k) * d + s) * d + l] = sign * minor;
                }
            }
        }
    }
    out
}

fn shifted(x: &[f64], axis: usize, by: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[axis] += by;
    y
}

/// Residual of one identity family at one step size.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyResidual {
    pub name: &'static str,
    /// Identity contains a finite-difference outer derivative (truncation `O(h^2)`).
    pub differenced: bool,
    /// Largest `|sum of terms|` over index combinations.
    pub absolute: f64,
    /// `absolute` over the largest `sum |terms|`.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub h: f64,
    pub families: Vec<FamilyResidual>,
}

impl IdentityReport {
    pub fn family(&self, name: &str) -> Option<&FamilyResidual> {
        self.families.iter().find(|f| f.name == name)
    }

    pub fn max_relative(&self) -> f64 {
        self.families.iter().fold(0.0, |m, f| m.max(f.relative))
    }
}

pub const DIVERGENCE_OF_SECOND: &str = "divergence-of-second-derivatives";
pub const COFACTOR_PRODUCT: &str = "cofactor-product";
pub const ROW_DUALITY: &str = "duality-rows";
pub const COLUMN_DUALITY: &str = "duality-columns";
pub const COFACTOR_DIVERGENCE: &str = "cofactor-divergence";
pub const COFACTOR_DIVERGENCE_CHAIN: &str = "cofactor-divergence-chain";
pub const INTEGRATION: &str = "integration";

#[derive(Default)]
struct Accumulator {
    absolute: f64,
    scale: f64,
}

impl Accumulator {
    fn push(&mut self, terms: impl IntoIterator<Item = f64>) {
        let (mut sum, mut mag) = (0.0, 0.0);
        for t in terms {
            sum += t;
            mag += t.abs();
        }
        self.absolute = self.absolute.max(sum.abs());
        self.scale = self.scale.max(mag);
    }

    fn finish(self, name: &'static str, differenced: bool) -> FamilyResidual {
        let relative = if self.scale > 0.0 {
            self.absolute / self.scale
        } else {
            self.absolute
        };
        FamilyResidual {
            name,
            differenced,
            absolute: self.absolute,
            relative,
        }
    }
}

/// Evaluates the Jacobian identity families at `point`; outer derivatives use
/// central differences with step `h`.
pub fn verify_jacobian_identities(map: &dyn ProbeMap, point: &[f64], h: f64) -> Result<IdentityReport> {
    let d = map.dim();
    if point.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: point.len(),
        });
    }
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {h}")));
    }
    let m = map.jacobian(point);
    let (det, cof) = cofactors(&m)?;
    let s0 = second_derivatives(&m);
    let idx = |i: usize, k: usize, s: usize, l: usize| ((i * d + k) * d + s) * d + l;

    let mut plus_m = Vec::with_capacity(d);
    let mut minus_m = Vec::with_capacity(d);
    for k in 0..d {
        plus_m.push(map.jacobian(&shifted(point, k, h)));
        minus_m.push(map.jacobian(&shifted(point, k, -h)));
    }
    let plus_s: Vec<Vec<f64>> = plus_m.iter().map(second_derivatives).collect();
    let minus_s: Vec<Vec<f64>> = minus_m.iter().map(second_derivatives).collect();
    let plus_c = plus_m.iter().map(cofactors).collect::<Result<Vec<_>>>()?;
    let minus_c = minus_m.iter().map(cofactors).collect::<Result<Vec<_>>>()?;

    let mut div2 = Accumulator::default();
    for i in 0..d {
        for s in 0..d {
            for l in 0..d {
                div2.push((0..d).map(|k| {
                    (plus_s[k][idx(i, k, s, l)] - minus_s[k][idx(i, k, s, l)]) / (2.0 * h)
                }));
            }
        }
    }

    let mut product = Accumulator::default();
    for i in 0..d {
        for k in 0..d {
            for s in 0..d {
                for l in 0..d {
                    let rhs = (cof[(i, k)] * cof[(s, l)] - cof[(i, l)] * cof[(s, k)]) / det;
                    product.push([s0[idx(i, k, s, l)], -rhs]);
                }
            }
        }
    }

    let mut rows = Accumulator::default();
    let mut cols = Accumulator::default();
    for l in 0..d {
        for s in 0..d {
            let delta = if l == s { det } else { 0.0 };
            rows.push((0..d).map(|k| m[(l, k)] * cof[(s, k)]).chain([-delta]));
            cols.push((0..d).map(|k| m[(k, l)] * cof[(k, s)]).chain([-delta]));
        }
    }

    // d_l d_k xi_s by differencing the analytic Jacobian: [l][(s, k)]
    let hess: Vec<DMatrix<f64>> = (0..d)
        .map(|l| (&plus_m[l] - &minus_m[l]) / (2.0 * h))
        .collect();
    let mut div1 = Accumulator::default();
    let mut chain = Accumulator::default();
    for i in 0..d {
        div1.push((0..d).map(|k| (plus_c[k].1[(i, k)] - minus_c[k].1[(i, k)]) / (2.0 * h)));
        let mut terms = Vec::with_capacity(d * d * d);
        for k in 0..d {
            for s in 0..d {
                for l in 0..d {
                    let v = s0[idx(i, k, s, l)];
                    if v != 0.0 {
                        terms.push(v * 0.5 * (hess[l][(s, k)] + hess[k][(s, l)]));
                    }
                }
            }
        }
        chain.push(terms);
    }

    Ok(IdentityReport {
        h,
        families: vec![
            div2.finish(DIVERGENCE_OF_SECOND, true),
            product.finish(COFACTOR_PRODUCT, false),
            rows.finish(ROW_DUALITY, false),
            cols.finish(COLUMN_DUALITY, false),
            div1.finish(COFACTOR_DIVERGENCE, true),
            chain.finish(COFACTOR_DIVERGENCE_CHAIN, false),
        ],
    })
}

/// Space-time momentum `p_k = b0 (d_k phi + g^a(xi) d_k xi_a)`, `k = 0..=n`.
fn spacetime_momentum(
    map: &dyn ProbeMap,
    phi: &dyn ProbeScalar,
    data: &ClebschData,
    x: &[f64],
) -> (Vec<f64>, DMatrix<f64>) {
    let d = map.dim();
    let m = map.jacobian(x);
    let xi = map.labels(x);
    let g = data.g.eval(&xi[1..]);
    let dphi = phi.gradient(x);
    let p = (0..d)
        .map(|k| {
            let mut s = dphi[k];
            for a in 1..d {
                s += g[a - 1] * m[(a, k)];
            }
            data.b0 * s
        })
        .collect();
    (p, m)
}

/// Substitutes the Clebsch form of `p` into the label-variation equations
/// `-d_l (p_i d^2J / dxi_{0,i} dxi_{k,l}) = 0`; one residual per `k`.
pub fn verify_integration(
    map: &dyn ProbeMap,
    phi: &dyn ProbeScalar,
    data: &ClebschData,
    point: &[f64],
    h: f64,
) -> Result<IdentityReport> {
    let d = map.dim();
    if point.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: point.len(),
        });
    }
    if data.dim() + 1 != d {
        return Err(Error::Dimension {
            expected: d - 1,
            got: data.dim(),
        });
    }
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {h}")));
    }
    cofactors(&map.jacobian(point))?;
    let idx = |i: usize, k: usize, s: usize, l: usize| ((i * d + k) * d + s) * d + l;
    // y[k][l] = sum_i p_i S(0,i; k,l)
    let flux = |x: &[f64]| -> Vec<f64> {
        let (p, m) = spacetime_momentum(map, phi, data, x);
        let s = second_derivatives(&m);
        let mut y = vec![0.0; d * d];
        for k in 0..d {
            for l in 0..d {
                y[k * d + l] = (0..d).map(|i| p[i] * s[idx(0, i, k, l)]).sum();
            }
        }
        y
    };
    let plus: Vec<Vec<f64>> = (0..d).map(|l| flux(&shifted(point, l, h))).collect();
    let minus: Vec<Vec<f64>> = (0..d).map(|l| flux(&shifted(point, l, -h))).collect();
    let mut acc = Accumulator::default();
    for k in 0..d {
        acc.push((0..d).map(|l| (plus[l][k * d + l] - minus[l][k * d + l]) / (2.0 * h)));
    }
    Ok(IdentityReport {
        h,
        families: vec![acc.finish(INTEGRATION, true)],
    })
}

/// Summary of one family over many random probes at steps `h` and `h/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFamily {
    pub name: &'static str,
    pub differenced: bool,
    pub max_relative: f64,
    /// `absolute(h) / absolute(h/2)` range over trials; `None` for algebraic families.
    pub ratio_range: Option<(f64, f64)>,
}

impl TrialFamily {
    pub fn passes(&self, tol: f64, ratio: (f64, f64)) -> bool {
        self.max_relative < tol
            && self
                .ratio_range
                .is_none_or(|(lo, hi)| lo >= ratio.0 && hi <= ratio.1)
    }
}

fn merge(summary: &mut Vec<TrialFamily>, coarse: &IdentityReport, fine: &IdentityReport) {
    for (c, f) in coarse.families.iter().zip(&fine.families) {
        let entry = match summary.iter_mut().find(|t| t.name == c.name) {
            Some(e) => e,
            None => {
                summary.push(TrialFamily {
                    name: c.name,
                    differenced: c.differenced,
                    max_relative: 0.0,
                    ratio_range: None,
                });
                summary.last_mut().expect("just pushed")
            }
        };
        entry.max_relative = entry.max_relative.max(c.relative).max(f.relative);
        if c.differenced {
            let r = c.absolute / f.absolute;
            entry.ratio_range = Some(match entry.ratio_range {
                None => (r, r),
                Some((lo, hi)) => (lo.min(r), hi.max(r)),
            });
        }
    }
}

/// Runs the identity and integration probes on `trials` random smooth maps in
/// `n` space dimensions (plus time), with both gradient and rotational `g`.
pub fn run_identity_trials(n: usize, trials: usize, h: f64, seed: u64) -> Result<Vec<TrialFamily>> {
    if !(1..=3).contains(&n) {
        return Err(Error::Parameter(format!("space dimension must be 1..=3, got {n}")));
    }
    let d = n + 1;
    let mut rng = RngStream::new(seed);
    let mut summary = Vec::new();
    let mut done = 0;
    while done < trials {
        let map = SineMap::random(d, &mut rng);
        let point: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let coarse = match verify_jacobian_identities(&map, &point, h) {
            Err(Error::SingularJacobian { .. }) => continue,
            other => other?,
        };
        let fine = verify_jacobian_identities(&map, &point, h / 2.0)?;
        merge(&mut summary, &coarse, &fine);

        let phi = SineSum::random(d, 3, &mut rng);
        let rot = DMatrix::from_fn(n, n, |_, _| rng.uniform_in(-1.0, 1.0));
        let shift = DVector::from_fn(n, |_, _| rng.uniform_in(-1.0, 1.0));
        let freq: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.5, 1.5)).collect();
        let gs = [
            IntegrationFunctions::Linear { a: rot, c: shift },
            IntegrationFunctions::custom(n, move |xi| {
                xi.iter().zip(&freq).map(|(v, f)| (f * v).sin()).collect()
            }),
        ];
        for g in gs {
            let data = ClebschData::new(rng.uniform_in(0.5, 2.0), g)?;
            let coarse = verify_integration(&map, &phi, &data, &point, h)?;
            let fine = verify_integration(&map, &phi, &data, &point, h / 2.0)?;
            merge(&mut summary, &coarse, &fine);
        }
        done += 1;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Axis, Boundary};

    fn line(n: usize) -> Grid {
        Grid::line(0.0, 1.0, n, Boundary::Clamped).unwrap()
    }

    #[test]
    fn pure_gradient_momentum() {
        let g = line(32);
        let phi = ScalarField::from_fn(&g, |x| x[0]).unwrap();
        let data = ClebschData::new(1.0, IntegrationFunctions::Zero { n: 1 }).unwrap();
        let p = clebsch_momentum(&phi, &LabelMap::identity(&g), &data).unwrap();
        assert!(p.component(0).values().iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn linear_g_gives_position() {
        let g = line(32);
        let phi = ScalarField::constant(&g, 0.0);
        let data = ClebschData::new(
            1.0,
            IntegrationFunctions::Linear {
                a: DMatrix::identity(1, 1),
                c: DVector::zeros(1),
            },
        )
        .unwrap();
        let p = clebsch_momentum(&phi, &LabelMap::identity(&g), &data).unwrap();
        for (v, x) in p.component(0).values().iter().zip(g.xs()) {
            assert!((v - x).abs() < 1e-13);
        }
    }

    #[test]
    fn potential_g_matches_composed_gradient() {
        let g = Grid::new(vec![Axis::new(0.0, 1.0, 17), Axis::new(-1.0, 1.0, 21)], Boundary::Clamped).unwrap();
        let labels = LabelMap::from_fn(&g, |x| vec![2.0 * x[0] + 1.0, x[1] - 0.5 * x[0]]).unwrap();
        let phi = ScalarField::from_fn(&g, |x| x[0] * x[1]).unwrap();
        let data = ClebschData::new(1.5, IntegrationFunctions::custom(2, |xi| xi.to_vec())).unwrap();
        let p = clebsch_momentum(&phi, &labels, &data).unwrap();
        let total = ScalarField::from_fn(&g, |x| {
            let xi = [2.0 * x[0] + 1.0, x[1] - 0.5 * x[0]];
            1.5 * (x[0] * x[1] + 0.5 * (xi[0] * xi[0] + xi[1] * xi[1]))
        })
        .unwrap();
        let want = gradient(&total);
        for b in 0..2 {
            for (a, w) in p.component(b).values().iter().zip(want.component(b).values()) {
                assert!((a - w).abs() < 1e-8, "{a} vs {w}");
            }
        }
    }

    #[test]
    fn momentum_is_linear_in_b0() {
        let g = line(40);
        let phi = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin()).unwrap();
        let labels = LabelMap::from_fn(&g, |x| vec![x[0] + 0.1 * x[0] * x[0]]).unwrap();
        let gf = IntegrationFunctions::custom(1, |xi| vec![xi[0].cos()]);
        let p1 = clebsch_momentum(&phi, &labels, &ClebschData::new(0.7, gf.clone()).unwrap()).unwrap();
        let p2 = clebsch_momentum(&phi, &labels, &ClebschData::new(1.4, gf).unwrap()).unwrap();
        for (a, b) in p1.component(0).values().iter().zip(p2.component(0).values()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn momentum_dimension_checks() {
        let g = line(16);
        let phi = ScalarField::constant(&g, 0.0);
        let data = ClebschData::new(1.0, IntegrationFunctions::Zero { n: 2 }).unwrap();
        assert!(matches!(
            clebsch_momentum(&phi, &LabelMap::identity(&g), &data),
            Err(Error::Dimension { .. })
        ));
        assert!(ClebschData::new(0.0, IntegrationFunctions::Zero { n: 1 }).is_err());
    }

    #[test]
    fn vorticity_examples() {
        let c = ClebschData::new(1.0, IntegrationFunctions::Constant(vec![1.0, 2.0])).unwrap();
        assert_eq!(vorticity(&c, &[0.3, 0.4]).max_abs(), 0.0);
        let rot = ClebschData::new(
            1.0,
            IntegrationFunctions::Linear {
                a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                c: DVector::zeros(2),
            },
        )
        .unwrap();
        let w = vorticity(&rot, &[0.0, 0.0]);
        assert_eq!(w.omega[(0, 1)], 1.0);
        assert!(!w.is_irrotational(1e-10));
        // g = grad(xi1 xi2), differenced
        let pot = ClebschData::new(1.0, IntegrationFunctions::custom(2, |xi| vec![xi[1], xi[0]])).unwrap();
        assert!(vorticity(&pot, &[0.7, -1.2]).is_irrotational(1e-10));
    }

    #[test]
    fn fit_g_examples() {
        let g = Grid::line(0.0, 6.0, 601, Boundary::Clamped).unwrap();
        let p0 = VectorField::new(vec![ScalarField::from_fn(&g, |x| x[0].sin()).unwrap()]).unwrap();
        let data = fit_g_from_initial(&p0, 2.0).unwrap();
        for xi in [0.33, 1.7, 4.05] {
            assert!((data.g().eval(&[xi])[0] - 0.5 * f64::sin(xi)).abs() < 2e-5);
        }
        let c = VectorField::new(vec![ScalarField::constant(&g, 0.8)]).unwrap();
        assert!((fit_g_from_initial(&c, 1.0).unwrap().g().eval(&[2.2])[0] - 0.8).abs() < 1e-15);
        let z = fit_g_from_initial(&VectorField::zeros(&g), 3.0).unwrap();
        assert_eq!(z.g().eval(&[1.0]), vec![0.0]);
        assert!(fit_g_from_initial(&c, 0.0).is_err());
    }

    #[test]
    fn second_derivatives_match_differenced_cofactors() {
        let mut rng = RngStream::new(5);
        let m = DMatrix::from_fn(4, 4, |_, _| rng.uniform_in(-1.0, 1.0)) + DMatrix::identity(4, 4) * 2.0;
        let s = second_derivatives(&m);
        let e = 1e-6;
        for (i, k, sr, l) in [(0, 1, 2, 3), (1, 0, 3, 2), (3, 3, 0, 1), (2, 1, 1, 0)] {
            let mut up = m.clone();
            up[(sr, l)] += e;
            let mut dn = m.clone();
            dn[(sr, l)] -= e;
            let fd = (cofactors(&up).unwrap().1[(i, k)] - cofactors(&dn).unwrap().1[(i, k)]) / (2.0 * e);
            assert!((s[((i * 4 + k) * 4 + sr) * 4 + l] - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn identities_exact_for_identity_and_linear_maps() {
        let r = verify_jacobian_identities(&SineMap::identity(3), &[0.1, 0.2, 0.3], 1e-3).unwrap();
        assert!(r.max_relative() < 1e-12, "{r:?}");
        let lin = SineMap::linear(DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 1.0]));
        let r = verify_jacobian_identities(&lin, &[0.4, -0.3, 0.9], 1e-3).unwrap();
        assert!(r.max_relative() < 1e-12, "{r:?}");
    }

    #[test]
    fn singular_map_rejected() {
        let flat = SineMap::linear(DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        assert!(matches!(
            verify_jacobian_identities(&flat, &[0.0; 3], 1e-3),
            Err(Error::SingularJacobian { .. })
        ));
    }

    fn sine_shear() -> SineMap {
        // xi0 = t, xi1 = x + 0.1 sin(x + t), xi2 = y
        let mut map = SineMap::identity(3);
        map.eps[1] = 0.1;
        map.b[(1, 0)] = 1.0;
        map.b[(1, 1)] = 1.0;
        map
    }

    #[test]
    fn identities_on_sine_shear_converge_at_second_order() {
        let map = sine_shear();
        let p = [0.3, 0.7, -0.2];
        let coarse = verify_jacobian_identities(&map, &p, 1e-3).unwrap();
        let fine = verify_jacobian_identities(&map, &p, 5e-4).unwrap();
        assert!(coarse.max_relative() < 1e-6, "{coarse:?}");
        for (c, f) in coarse.families.iter().zip(&fine.families) {
            if c.differenced && c.absolute > 1e-12 {
                let r = c.absolute / f.absolute;
                assert!((3.0..=5.0).contains(&r), "{}: ratio {r}", c.name);
            }
        }
    }

    #[test]
    fn integration_residual_examples() {
        let map = sine_shear();
        let p = [0.3, 0.7, -0.2];
        let zero = ClebschData::new(1.0, IntegrationFunctions::Zero { n: 2 }).unwrap();
        let r = verify_integration(&map, &SineSum::constant(2.0), &zero, &p, 1e-3).unwrap();
        assert_eq!(r.families[0].absolute, 0.0);
        let mut rng = RngStream::new(3);
        let phi = SineSum::random(3, 3, &mut rng);
        let r = verify_integration(&map, &phi, &zero, &p, 1e-3).unwrap();
        assert!(r.max_relative() < 1e-6, "{r:?}");
        let rot = ClebschData::new(
            1.0,
            IntegrationFunctions::Linear {
                a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                c: DVector::zeros(2),
            },
        )
        .unwrap();
        let r = verify_integration(&map, &phi, &rot, &p, 1e-3).unwrap();
        assert!(r.max_relative() < 1e-6, "{r:?}");
    }

    #[test]
    fn random_trials_pass_small() {
        for n in [2, 3] {
            let summary = run_identity_trials(n, 3, 1e-3, 17).unwrap();
            for fam in &summary {
                assert!(fam.passes(1e-6, (3.0, 5.0)), "n={n}: {fam:?}");
            }
        }
    }
}
