//! Uniform grids, fields on them, and the discrete calculus shared by every solver.
//!
//! All stencils are second order. Interior nodes use central differences; on
//! clamped grids the edge nodes use one-sided second-order stencils, on periodic
//! grids indices wrap. Nodes are stored with the first axis varying fastest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Minimum number of nodes per axis.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n_points: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n_points: usize) -> Self {
        Axis { min, max, n_points }
    }
}

/// Uniform tensor-product grid in one to three dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    boundary: Boundary,
}

impl Grid {
    pub fn new(axes: Vec<Axis>, boundary: Boundary) -> Result<Self> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(Error::Grid(format!(
                "dimension must be 1..=3, got {}",
                axes.len()
            )));
        }
        for (a, ax) in axes.iter().enumerate() {
            if !(ax.min.is_finite() && ax.max.is_finite()) || ax.max <= ax.min {
                return Err(Error::Grid(format!(
                    "axis {a}: need finite x_max > x_min, got [{}, {}]",
                    ax.min, ax.max
                )));
            }
            if ax.n_points < MIN_POINTS {
                return Err(Error::Grid(format!(
                    "axis {a}: need at least {MIN_POINTS} points, got {}",
                    ax.n_points
                )));
            }
        }
        Ok(Grid { axes, boundary })
    }

    /// One-dimensional grid shorthand.
    pub fn line(min: f64, max: f64, n_points: usize, boundary: Boundary) -> Result<Self> {
        Grid::new(vec![Axis::new(min, max, n_points)], boundary)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n_points).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, a: usize) -> f64 {
        let ax = &self.axes[a];
        match self.boundary {
            Boundary::Periodic => (ax.max - ax.min) / ax.n_points as f64,
            Boundary::Clamped => (ax.max - ax.min) / (ax.n_points - 1) as f64,
        }
    }

    pub fn axis_coord(&self, a: usize, i: usize) -> f64 {
        self.axes[a].min + i as f64 * self.spacing(a)
    }

    /// Distance between element `a` and `a+1` in the flat node array.
    pub fn stride(&self, a: usize) -> usize {
        self.axes[..a].iter().map(|ax| ax.n_points).product()
    }

    /// Per-axis index of a flat node index.
    pub fn unravel(&self, node: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rem = node;
        for (a, ax) in self.axes.iter().enumerate() {
            out[a] = rem % ax.n_points;
            rem /= ax.n_points;
        }
        out
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| i * self.stride(a))
            .sum()
    }

    pub fn coord(&self, node: usize) -> Vec<f64> {
        let idx = self.unravel(node);
        (0..self.dim()).map(|a| self.axis_coord(a, idx[a])).collect()
    }

    /// Node coordinates along axis 0 (the whole grid for 1D).
    pub fn xs(&self) -> Vec<f64> {
        (0..self.axes[0].n_points)
            .map(|i| self.axis_coord(0, i))
            .collect()
    }

    /// Physical length of an axis (the periodic cell or the clamped interval).
    pub fn length(&self, a: usize) -> f64 {
        self.axes[a].max - self.axes[a].min
    }

    /// Quadrature weight of every node (trapezoid when clamped, rectangle when periodic).
    pub fn weights(&self) -> Vec<f64> {
        (0..self.len())
            .map(|node| {
                let idx = self.unravel(node);
                (0..self.dim())
                    .map(|a| {
                        let h = self.spacing(a);
                        let n = self.axes[a].n_points;
                        match self.boundary {
                            Boundary::Clamped if idx[a] == 0 || idx[a] == n - 1 => 0.5 * h,
                            _ => h,
                        }
                    })
                    .product()
            })
            .collect()
    }
}

/// Real field sampled at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|n| f(&grid.coord(n))).collect();
        ScalarField::new(grid.clone(), values)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ScalarField> {
        ScalarField::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, a: f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Multilinear interpolation; clamped grids clamp `x` to the box, periodic grids wrap.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        interpolate_values(&self.grid, &self.values, x)
    }
}

pub(crate) fn interpolate_values(grid: &Grid, values: &[f64], x: &[f64]) -> f64 {
    let dim = grid.dim();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..dim {
        let ax = grid.axis(a);
        let h = grid.spacing(a);
        let n = ax.n_points;
        match grid.boundary() {
            Boundary::Clamped => {
                let s = ((x[a] - ax.min) / h).clamp(0.0, (n - 1) as f64);
                let i = (s.floor() as usize).min(n - 2);
                lo[a] = i;
                hi[a] = i + 1;
                frac[a] = s - i as f64;
            }
            Boundary::Periodic => {
                let s = ((x[a] - ax.min) / h).rem_euclid(n as f64);
                let i = (s.floor() as usize).min(n - 1);
                lo[a] = i;
                hi[a] = (i + 1) % n;
                frac[a] = s - i as f64;
            }
        }
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..dim {
            if corner >> a & 1 == 1 {
                w *= frac[a];
                idx[a] = hi[a];
            } else {
                w *= 1.0 - frac[a];
                idx[a] = lo[a];
            }
        }
        if w != 0.0 {
            acc += w * values[grid.ravel(&idx[..dim])];
        }
    }
    acc
}

/// One scalar component per spatial dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let first = components.first().ok_or(Error::Dimension {
            expected: 1,
            got: 0,
        })?;
        let dim = first.grid().dim();
        if components.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: components.len(),
            });
        }
        if components.iter().any(|c| c.grid() != first.grid()) {
            return Err(Error::GridMismatch);
        }
        Ok(VectorField { components })
    }

    pub fn zeros(grid: &Grid) -> Self {
        VectorField {
            components: (0..grid.dim())
                .map(|_| ScalarField::constant(grid, 0.0))
                .collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.components[0].grid()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, a: usize) -> &ScalarField {
        &self.components[a]
    }

    /// Vector value at a node.
    pub fn at(&self, node: usize) -> Vec<f64> {
        self.components.iter().map(|c| c.values()[node]).collect()
    }

    pub fn norm_squared(&self) -> ScalarField {
        let grid = self.grid().clone();
        let values = (0..grid.len())
            .map(|n| self.components.iter().map(|c| c.values()[n].powi(2)).sum())
            .collect();
        ScalarField { grid, values }
    }

    pub fn interpolate(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.interpolate(x)).collect()
    }
}

/// Neighbor lookup along one axis: `offset(node, k)` is the flat index of the node `k`
/// steps away, or `None` when that node is outside a clamped grid.
pub(crate) struct AxisStencil<'g> {
    grid: &'g Grid,
    stride: usize,
    n: usize,
}

impl<'g> AxisStencil<'g> {
    pub(crate) fn new(grid: &'g Grid, axis: usize) -> Self {
        AxisStencil {
            grid,
            stride: grid.stride(axis),
            n: grid.axis(axis).n_points,
        }
    }

    pub(crate) fn position(&self, node: usize) -> usize {
        (node / self.stride) % self.n
    }

    pub(crate) fn offset(&self, node: usize, k: isize) -> usize {
        let i = self.position(node) as isize;
        let j = match self.grid.boundary() {
            Boundary::Periodic => (i + k).rem_euclid(self.n as isize),
            Boundary::Clamped => i + k,
        };
        debug_assert!(j >= 0 && (j as usize) < self.n);
        (node as isize + (j - i) * self.stride as isize) as usize
    }

    /// Edge classification for clamped grids: -1 at the low edge, +1 at the high edge.
    pub(crate) fn edge(&self, node: usize) -> i8 {
        if self.grid.boundary() == Boundary::Periodic {
            return 0;
        }
        let i = self.position(node);
        if i == 0 {
            -1
        } else if i == self.n - 1 {
            1
        } else {
            0
        }
    }
}

/// First derivative along `axis` of arbitrary node data, with `diff(a, b) = f(b) - f(a)`.
///
/// Taking the difference as a closure lets the same stencil differentiate
/// logarithms through ratios (`ln(f_b / f_a)`) without forming `ln f` itself.
pub(crate) fn first_derivative_by<T: Copy>(
    grid: &Grid,
    axis: usize,
    data: &[T],
    diff: impl Fn(T, T) -> f64,
) -> Vec<f64> {
    let st = AxisStencil::new(grid, axis);
    let h = grid.spacing(axis);
    (0..grid.len())
        .map(|node| match st.edge(node) {
            0 => diff(data[st.offset(node, -1)], data[st.offset(node, 1)]) / (2.0 * h),
            -1 => {
                let d1 = diff(data[node], data[st.offset(node, 1)]);
                let d2 = diff(data[node], data[st.offset(node, 2)]);
                (4.0 * d1 - d2) / (2.0 * h)
            }
            _ => {
                let d1 = diff(data[st.offset(node, -1)], data[node]);
                let d2 = diff(data[st.offset(node, -2)], data[node]);
                (4.0 * d1 - d2) / (2.0 * h)
            }
        })
        .collect()
}

/// Second derivative along `axis`, again expressed through pairwise differences.
pub(crate) fn second_derivative_by<T: Copy>(
    grid: &Grid,
    axis: usize,
    data: &[T],
    diff: impl Fn(T, T) -> f64,
) -> Vec<f64> {
    let st = AxisStencil::new(grid, axis);
    let h2 = grid.spacing(axis).powi(2);
    (0..grid.len())
        .map(|node| match st.edge(node) {
            0 => {
                (diff(data[node], data[st.offset(node, 1)])
                    - diff(data[st.offset(node, -1)], data[node]))
                    / h2
            }
            e => {
                // 2 f0 - 5 f1 + 4 f2 - f3, written relative to f0
                let k = -(e as isize);
                let d = |j: isize| diff(data[node], data[st.offset(node, k * j)]);
                (-5.0 * d(1) + 4.0 * d(2) - d(3)) / h2
            }
        })
        .collect()
}

/// Second-order gradient. Grid construction guarantees enough nodes for every stencil.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = f.grid();
    let components = (0..grid.dim())
        .map(|a| ScalarField {
            grid: grid.clone(),
            values: first_derivative_by(grid, a, f.values(), |x, y| y - x),
        })
        .collect();
    VectorField { components }
}

/// Partial derivative along a single axis.
pub fn partial(f: &ScalarField, axis: usize) -> ScalarField {
    ScalarField {
        grid: f.grid().clone(),
        values: first_derivative_by(f.grid(), axis, f.values(), |x, y| y - x),
    }
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    let mut values = vec![0.0; grid.len()];
    for a in 0..grid.dim() {
        let d2 = second_derivative_by(grid, a, f.values(), |x, y| y - x);
        values.iter_mut().zip(d2).for_each(|(v, d)| *v += d);
    }
    ScalarField {
        grid: grid.clone(),
        values,
    }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid();
    let mut values = vec![0.0; grid.len()];
    for (a, c) in v.components().iter().enumerate() {
        let d = first_derivative_by(grid, a, c.values(), |x, y| y - x);
        values.iter_mut().zip(d).for_each(|(v, d)| *v += d);
    }
    ScalarField {
        grid: grid.clone(),
        values,
    }
}

/// Trapezoid (clamped) or rectangle (periodic) quadrature over the whole grid.
pub fn integrate(f: &ScalarField) -> f64 {
    integrate_values(f.grid(), f.values())
}

pub(crate) fn integrate_values(grid: &Grid, values: &[f64]) -> f64 {
    grid.weights()
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

/// Relative vacuum threshold: densities below `VACUUM_FLOOR * max(rho)` are treated as empty.
pub const VACUUM_FLOOR: f64 = 1e-12;

/// Gradient of `ln rho` computed from neighbor ratios, plus the mask of nodes whose
/// stencil lies entirely above `floor_rel * max(rho)`. Masked-out nodes hold 0.
///
/// Because only ratios `rho_b / rho_a` enter, scaling `rho` by a power of two leaves
/// the result bit-for-bit unchanged.
pub fn log_gradient(rho: &ScalarField, floor_rel: f64) -> (VectorField, Vec<bool>) {
    let grid = rho.grid();
    let floor = floor_rel * rho.max();
    let valid = stencil_mask(grid, rho.values(), floor, 2);
    let components = (0..grid.dim())
        .map(|a| {
            let mut d = first_derivative_by(grid, a, rho.values(), log_ratio);
            d.iter_mut()
                .zip(&valid)
                .for_each(|(v, &ok)| if !ok { *v = 0.0 });
            ScalarField {
                grid: grid.clone(),
                values: d,
            }
        })
        .collect();
    (VectorField { components }, valid)
}

/// Laplacian of `ln rho` from neighbor ratios, masked as in [`log_gradient`].
pub fn log_laplacian(rho: &ScalarField, floor_rel: f64) -> (ScalarField, Vec<bool>) {
    let grid = rho.grid();
    let floor = floor_rel * rho.max();
    let valid = stencil_mask(grid, rho.values(), floor, 3);
    let mut values = vec![0.0; grid.len()];
    for a in 0..grid.dim() {
        let d2 = second_derivative_by(grid, a, rho.values(), log_ratio);
        values.iter_mut().zip(d2).for_each(|(v, d)| *v += d);
    }
    values
        .iter_mut()
        .zip(&valid)
        .for_each(|(v, &ok)| if !ok { *v = 0.0 });
    (
        ScalarField {
            grid: grid.clone(),
            values,
        },
        valid,
    )
}

fn log_ratio(a: f64, b: f64) -> f64 {
    (b / a).ln()
}

/// Nodes whose stencil (reaching `reach` cells, one-sided at clamped edges) stays above `floor`.
fn stencil_mask(grid: &Grid, values: &[f64], floor: f64, reach: isize) -> Vec<bool> {
    let stencils: Vec<AxisStencil> = (0..grid.dim()).map(|a| AxisStencil::new(grid, a)).collect();
    (0..grid.len())
        .map(|node| {
            if values[node] <= floor {
                return false;
            }
            stencils.iter().all(|st| {
                let range: Vec<isize> = match st.edge(node) {
                    0 => vec![-1, 1],
                    -1 => (1..=reach).collect(),
                    _ => (1..=reach).map(|k| -k).collect(),
                };
                range.iter().all(|&k| values[st.offset(node, k)] > floor)
            })
        })
        .collect()
}

/// Seeded deterministic random stream (ChaCha8).
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub const ALGORITHM: &'static str = "ChaCha8";

    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform sample in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Independent child stream, deterministic in (seed, stream id).
    pub fn fork(&self, stream: u64) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream + 1);
        RngStream {
            seed: self.seed,
            rng,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn periodic(n: usize) -> Grid {
        Grid::line(0.0, 2.0 * PI, n, Boundary::Periodic).unwrap()
    }

    fn max_err(a: &[f64], b: impl Fn(usize) -> f64) -> f64 {
        a.iter()
            .enumerate()
            .map(|(i, v)| (v - b(i)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn grid_rejects_bad_axes() {
        assert!(Grid::line(0.0, 1.0, 7, Boundary::Clamped).is_err());
        assert!(Grid::line(1.0, 1.0, 16, Boundary::Clamped).is_err());
        assert!(Grid::new(vec![], Boundary::Clamped).is_err());
        let ax = Axis::new(0.0, 1.0, 8);
        assert!(Grid::new(vec![ax; 4], Boundary::Clamped).is_err());
    }

    #[test]
    fn spacing_depends_on_boundary() {
        let p = Grid::line(0.0, 1.0, 10, Boundary::Periodic).unwrap();
        let c = Grid::line(0.0, 1.0, 11, Boundary::Clamped).unwrap();
        assert!((p.spacing(0) - 0.1).abs() < 1e-15);
        assert!((c.spacing(0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = Grid::line(-1.0, 1.0, 33, Boundary::Clamped).unwrap();
        let f = ScalarField::constant(&g, 5.0);
        assert!(gradient(&f).component(0).values().iter().all(|&v| v == 0.0));
        assert!(laplacian(&f).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_exact_on_linear() {
        let g = Grid::line(-1.0, 2.0, 31, Boundary::Clamped).unwrap();
        let f = ScalarField::from_fn(&g, |x| 3.0 * x[0]).unwrap();
        let d = gradient(&f);
        // edges included: the one-sided stencil is also exact on linears
        assert!(max_err(d.component(0).values(), |_| 3.0) < 1e-10);
    }

    #[test]
    fn laplacian_exact_on_quadratic() {
        let g = Grid::line(-1.0, 2.0, 31, Boundary::Clamped).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0] * x[0]).unwrap();
        let l = laplacian(&f);
        assert!(max_err(l.values(), |_| 2.0) < 1e-9);
    }

    #[test]
    fn periodic_sin_convergence_order() {
        let errs: Vec<(f64, f64)> = [256, 512]
            .iter()
            .map(|&n| {
                let g = periodic(n);
                let xs = g.xs();
                let f = ScalarField::from_fn(&g, |x| x[0].sin()).unwrap();
                let d = gradient(&f);
                let l = laplacian(&f);
                (
                    max_err(d.component(0).values(), |i| xs[i].cos()),
                    max_err(l.values(), |i| -xs[i].sin()),
                )
            })
            .collect();
        let order_d = (errs[0].0 / errs[1].0).log2();
        let order_l = (errs[0].1 / errs[1].1).log2();
        assert!(order_d >= 1.9, "gradient order {order_d}");
        assert!(order_l >= 1.9, "laplacian order {order_l}");
    }

    #[test]
    fn clamped_edge_convergence_order() {
        let errs: Vec<f64> = [64, 128]
            .iter()
            .map(|&n| {
                let g = Grid::line(0.0, 1.0, n, Boundary::Clamped).unwrap();
                let xs = g.xs();
                let f = ScalarField::from_fn(&g, |x| (3.0 * x[0]).exp()).unwrap();
                let l = laplacian(&f);
                max_err(l.values(), |i| 9.0 * (3.0 * xs[i]).exp())
            })
            .collect();
        assert!((errs[0] / errs[1]).log2() > 1.8);
    }

    #[test]
    fn quadrature_examples() {
        let g = Grid::line(0.0, 1.0, 11, Boundary::Clamped).unwrap();
        assert!((integrate(&ScalarField::constant(&g, 1.0)) - 1.0).abs() < 1e-14);

        let s = ScalarField::from_fn(&periodic(64), |x| x[0].sin()).unwrap();
        assert!(integrate(&s).abs() < 1e-12);

        let sigma = 0.7;
        let g = Grid::line(-8.0 * sigma, 8.0 * sigma, 801, Boundary::Clamped).unwrap();
        let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
        let gauss =
            ScalarField::from_fn(&g, |x| norm * (-x[0] * x[0] / (2.0 * sigma * sigma)).exp())
                .unwrap();
        assert!((integrate(&gauss) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn periodic_gradient_integrates_to_zero() {
        let g = periodic(128);
        let f = ScalarField::from_fn(&g, |x| (x[0].sin() + 0.3 * (2.0 * x[0]).cos()).exp()).unwrap();
        assert!(integrate(gradient(&f).component(0)).abs() < 1e-12);
    }

    #[test]
    fn multi_dimensional_gradient_and_laplacian() {
        let ax = Axis::new(0.0, 2.0 * PI, 64);
        let g = Grid::new(vec![ax, ax], Boundary::Periodic).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0].sin() * x[1].cos()).unwrap();
        let d = gradient(&f);
        let l = laplacian(&f);
        for node in (0..g.len()).step_by(37) {
            let x = g.coord(node);
            assert!((d.component(1).values()[node] + x[0].sin() * x[1].sin()).abs() < 2e-3);
            assert!((l.values()[node] + 2.0 * x[0].sin() * x[1].cos()).abs() < 2e-3);
        }
    }

    #[test]
    fn interpolation_is_exact_on_multilinear() {
        let ax = Axis::new(-1.0, 1.0, 9);
        let g = Grid::new(vec![ax, ax], Boundary::Clamped).unwrap();
        let f = ScalarField::from_fn(&g, |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]).unwrap();
        let v = f.interpolate(&[0.33, -0.71]);
        assert!((v - (1.0 + 0.66 + 0.71 + 0.5 * 0.33 * -0.71)).abs() < 1e-13);
    }

    #[test]
    fn log_derivatives_scale_invariant_and_exact_on_gaussians() {
        let g = Grid::line(-6.0, 6.0, 121, Boundary::Clamped).unwrap();
        let rho = ScalarField::from_fn(&g, |x| (-x[0] * x[0] / 2.0).exp()).unwrap();
        let (d, mask) = log_gradient(&rho, VACUUM_FLOOR);
        let (l, _) = log_laplacian(&rho, VACUUM_FLOOR);
        let xs = g.xs();
        for i in 0..xs.len() {
            if mask[i] {
                assert!((d.component(0).values()[i] + xs[i]).abs() < 1e-9);
                assert!((l.values()[i] + 1.0).abs() < 1e-8);
            }
        }
        let (d2, _) = log_gradient(&rho.scaled(4.0), VACUUM_FLOOR);
        assert_eq!(d, d2);
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        let xa: Vec<f64> = (0..16).map(|_| a.uniform()).collect();
        let xb: Vec<f64> = (0..16).map(|_| b.uniform()).collect();
        assert_eq!(xa, xb);
        let mut c = RngStream::new(43);
        assert_ne!(xa[0], c.uniform());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gradient_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 1u32..4) {
                let g = Grid::line(0.0, 1.0, 24, Boundary::Clamped).unwrap();
                let f = ScalarField::from_fn(&g, |x| (k as f64 * x[0]).sin()).unwrap();
                let h = ScalarField::from_fn(&g, |x| x[0].powi(3)).unwrap();
                let combo = ScalarField::new(
                    g.clone(),
                    f.values().iter().zip(h.values()).map(|(u, v)| a * u + b * v).collect(),
                ).unwrap();
                let lhs = gradient(&combo);
                let gf = gradient(&f);
                let gh = gradient(&h);
                for i in 0..g.len() {
                    let rhs = a * gf.component(0).values()[i] + b * gh.component(0).values()[i];
                    prop_assert!((lhs.component(0).values()[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
                }
            }
        }
    }
}
