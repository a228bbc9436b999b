//! Sample representation of a pure ensemble `F = rho delta(p - P)` evolved along
//! Hamiltonian characteristics.

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianModel;
use crate::numerics::{integrate, Boundary, Grid, RngStream, ScalarField, VectorField};

/// One ensemble member. The label is fixed at construction and never changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    x: Vec<f64>,
    p: Vec<f64>,
    label: Vec<f64>,
}

impl Sample {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if x.len() != p.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                got: p.len(),
            });
        }
        if let Some(i) = x.iter().chain(&p).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: i });
        }
        let label = x.clone();
        Ok(Self { x, p, label })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn label(&self) -> &[f64] {
        &self.label
    }
}

/// Equal-weight samples; `seed` records the stream used to draw them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    samples: Vec<Sample>,
    seed: u64,
    time: f64,
}

impl ParticleEnsemble {
    pub fn from_samples(samples: Vec<Sample>, seed: u64) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::EmptyEnsemble);
        };
        let d = first.x.len();
        if let Some(s) = samples.iter().find(|s| s.x.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: s.x.len(),
            });
        }
        Ok(Self {
            samples,
            seed,
            time: 0.0,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.samples.len() as f64
    }

    /// Sample mean of `f(x, p)`.
    pub fn mean(&self, f: impl Fn(&Sample) -> f64) -> f64 {
        self.samples.iter().map(f).sum::<f64>() * self.weight()
    }
}

/// Draws `n` positions from the piecewise-linear interpolant of `rho0` (1D grids)
/// and assigns each the interpolated momentum `P0(x)` and label `x`.
pub fn init_pure(
    rho0: &ScalarField,
    p0: &VectorField,
    n: usize,
    rng: &mut RngStream,
) -> Result<ParticleEnsemble> {
    let grid = rho0.grid();
    if grid.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: grid.dim(),
        });
    }
    if p0.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let rho = rho0.values();
    if let Some(i) = rho.iter().position(|&v| v < 0.0) {
        return Err(Error::Density(format!("negative initial density at node {i}")));
    }
    let h = grid.spacing(0);
    let periodic = grid.boundary() == Boundary::Periodic;
    let cells = if periodic { rho.len() } else { rho.len() - 1 };
    let ends = |j: usize| (rho[j], rho[(j + 1) % rho.len()]);
    let mut cumulative = Vec::with_capacity(cells);
    let mut total = 0.0;
    for j in 0..cells {
        let (a, b) = ends(j);
        total += 0.5 * h * (a + b);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Density("initial density vanishes everywhere".into()));
    }
    let x0 = grid.axis(0).min;
    let length = grid.length(0);
    let samples = (0..n)
        .map(|_| {
            let r = rng.uniform() * total;
            let j = cumulative.partition_point(|&c| c <= r).min(cells - 1);
            let start = if j == 0 { 0.0 } else { cumulative[j - 1] };
            let (a, b) = ends(j);
            // solve a s + (b - a) s^2 / 2h = r - start for s in [0, h]
            let q = (r - start).max(0.0);
            let disc = (a * a + 2.0 * (b - a) * q / h).max(0.0);
            let denom = a + disc.sqrt();
            let s = if denom > 0.0 { (2.0 * q / denom).clamp(0.0, h) } else { 0.0 };
            let mut x = grid.axis_coord(0, j) + s;
            if periodic && x >= x0 + length {
                x -= length;
            }
            let p = p0.interpolate(&[x]);
            Sample::new(vec![x], p)
        })
        .collect::<Result<Vec<_>>>()?;
    ParticleEnsemble::from_samples(samples, rng.seed())
}

const MIDPOINT_TOL: f64 = 1e-15;
const MIDPOINT_MAX_ITER: usize = 100;

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn classical_step(model: &HamiltonianModel, t: f64, dt: f64, s: &Sample) -> Result<Sample> {
    let half = axpy(0.5 * dt, &model.force(t, &s.x, &s.p)?, &s.p);
    let x = axpy(dt, &model.velocity(t, &s.x, &half)?, &s.x);
    let p = axpy(0.5 * dt, &model.force(t + dt, &x, &half)?, &half);
    Ok(Sample {
        x,
        p,
        label: s.label.clone(),
    })
}

fn midpoint_step(model: &HamiltonianModel, t: f64, dt: f64, s: &Sample) -> Result<Sample> {
    let (mut x, mut p) = (s.x.clone(), s.p.clone());
    let tm = t + 0.5 * dt;
    for _ in 0..MIDPOINT_MAX_ITER {
        let xm: Vec<f64> = x.iter().zip(&s.x).map(|(a, b)| 0.5 * (a + b)).collect();
        let pm: Vec<f64> = p.iter().zip(&s.p).map(|(a, b)| 0.5 * (a + b)).collect();
        let nx = axpy(dt, &model.velocity(tm, &xm, &pm)?, &s.x);
        let np = axpy(dt, &model.force(tm, &xm, &pm)?, &s.p);
        let change = nx
            .iter()
            .zip(&x)
            .chain(np.iter().zip(&p))
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0, f64::max);
        x = nx;
        p = np;
        if change <= MIDPOINT_TOL {
            break;
        }
    }
    Ok(Sample {
        x,
        p,
        label: s.label.clone(),
    })
}

/// One step of `dx/dt = dH/dp`, `dp/dt = -dH/dx`: velocity Verlet for the
/// classical (separable) variant, implicit midpoint for the relativistic one.
pub fn step(ensemble: &ParticleEnsemble, model: &HamiltonianModel, dt: f64) -> Result<ParticleEnsemble> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    let t = ensemble.time;
    let advance: fn(&HamiltonianModel, f64, f64, &Sample) -> Result<Sample> = match model {
        HamiltonianModel::Classical { .. } => classical_step,
        HamiltonianModel::Relativistic { .. } => midpoint_step,
        HamiltonianModel::EffectiveStochastic { .. } => {
            return Err(Error::Variant {
                op: "ensemble step",
                variant: model.variant_name(),
            })
        }
    };
    let samples = ensemble
        .samples
        .iter()
        .map(|s| advance(model, t, dt, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParticleEnsemble {
        samples,
        seed: ensemble.seed,
        time: t + dt,
    })
}

const KERNEL_REACH: f64 = 6.0;

/// Gaussian kernel density on `grid`, normalized to unit integral.
pub fn density_estimate(ensemble: &ParticleEnsemble, grid: &Grid, bandwidth: f64) -> Result<ScalarField> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let d = grid.dim();
    if ensemble.samples[0].x.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: ensemble.samples[0].x.len(),
        });
    }
    let periodic = grid.boundary() == Boundary::Periodic;
    let mut acc = vec![0.0; grid.len()];
    let inv2 = 1.0 / (2.0 * bandwidth * bandwidth);
    for s in &ensemble.samples {
        // per-axis (node index, kernel factor) lists
        let factors: Vec<Vec<(usize, f64)>> = (0..d)
            .map(|a| {
                let ax = grid.axis(a);
                let h = grid.spacing(a);
                let n = ax.n_points as i64;
                let reach = (KERNEL_REACH * bandwidth / h).ceil() as i64;
                let centre = ((s.x[a] - ax.min) / h).round() as i64;
                let mut out = Vec::new();
                let span = if periodic { reach.min((n - 1) / 2) } else { reach };
                for j in centre - span..=centre + span {
                    let node = if periodic {
                        j.rem_euclid(n)
                    } else if (0..n).contains(&j) {
                        j
                    } else {
                        continue;
                    };
                    let dx = ax.min + j as f64 * h - s.x[a];
                    out.push((node as usize, (-dx * dx * inv2).exp()));
                }
                out
            })
            .collect();
        let mut idx = [0usize; 3];
        accumulate(grid, &factors, 0, 1.0, &mut idx, &mut acc);
    }
    let field = ScalarField::new(grid.clone(), acc)?;
    let total = integrate(&field);
    if !(total > 0.0) {
        return Err(Error::Density("no sample lies within kernel reach of the grid".into()));
    }
    Ok(field.scaled(1.0 / total))
}

fn accumulate(
    grid: &Grid,
    factors: &[Vec<(usize, f64)>],
    axis: usize,
    weight: f64,
    idx: &mut [usize; 3],
    acc: &mut [f64],
) {
    if axis == factors.len() {
        acc[grid.ravel(&idx[..factors.len()])] += weight;
        return;
    }
    for &(node, w) in &factors[axis] {
        idx[axis] = node;
        accumulate(grid, factors, axis + 1, weight * w, idx, acc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Potential;

    fn single(x: f64, p: f64) -> ParticleEnsemble {
        ParticleEnsemble::from_samples(vec![Sample::new(vec![x], vec![p]).unwrap()], 0).unwrap()
    }

    #[test]
    fn free_classical_step() {
        let e = step(&single(0.0, 1.0), &HamiltonianModel::free(1.0).unwrap(), 0.1).unwrap();
        assert_eq!(e.samples()[0].x(), &[0.1]);
        assert_eq!(e.samples()[0].p(), &[1.0]);
        assert_eq!(e.samples()[0].label(), &[0.0]);
    }

    #[test]
    fn harmonic_energy_drift_is_small() {
        let model = HamiltonianModel::classical(1.0, Potential::Harmonic { stiffness: 1.0 }).unwrap();
        let mut e = ParticleEnsemble::from_samples(
            vec![
                Sample::new(vec![1.0], vec![0.0]).unwrap(),
                Sample::new(vec![-0.3], vec![0.8]).unwrap(),
            ],
            0,
        )
        .unwrap();
        let energy = |e: &ParticleEnsemble| -> Vec<f64> {
            e.samples()
                .iter()
                .map(|s| model.energy(0.0, s.x(), s.p()).unwrap())
                .collect()
        };
        let e0 = energy(&e);
        for _ in 0..10_000 {
            e = step(&e, &model, 1e-3).unwrap();
        }
        for (a, b) in energy(&e).iter().zip(&e0) {
            assert!(((a - b) / b).abs() < 1e-6);
        }
        assert_eq!(e.samples()[1].label(), &[-0.3]);
    }

    #[test]
    fn relativistic_free_motion_is_straight() {
        let model = HamiltonianModel::relativistic(1.0, 1.0).unwrap();
        let mut e = single(0.0, 0.75);
        for _ in 0..1000 {
            e = step(&e, &model, 1e-3).unwrap();
        }
        assert!((e.samples()[0].x()[0] - 0.6 * e.time()).abs() < 1e-12);
    }

    #[test]
    fn effective_variant_rejected() {
        let model = HamiltonianModel::effective_stochastic(1.0, 1.0, 1.0, 0.5).unwrap();
        assert!(matches!(step(&single(0.0, 1.0), &model, 0.1), Err(Error::Variant { .. })));
    }

    #[test]
    fn harmonic_phase_area_preserved() {
        let model = HamiltonianModel::classical(1.0, Potential::Harmonic { stiffness: 1.0 }).unwrap();
        let pts = [(0.5, 0.2), (0.51, 0.2), (0.5, 0.21)];
        let mut e = ParticleEnsemble::from_samples(
            pts.iter().map(|&(x, p)| Sample::new(vec![x], vec![p]).unwrap()).collect(),
            0,
        )
        .unwrap();
        let area = |e: &ParticleEnsemble| {
            let s = e.samples();
            let (ax, ap) = (s[1].x()[0] - s[0].x()[0], s[1].p()[0] - s[0].p()[0]);
            let (bx, bp) = (s[2].x()[0] - s[0].x()[0], s[2].p()[0] - s[0].p()[0]);
            ax * bp - ap * bx
        };
        let a0 = area(&e);
        let dt = std::f64::consts::TAU / 1000.0;
        for _ in 0..1000 {
            e = step(&e, &model, dt).unwrap();
        }
        assert!(((area(&e) - a0) / a0).abs() < 1e-6);
    }

    fn unit_line(n: usize) -> Grid {
        Grid::line(0.0, 1.0, n, Boundary::Clamped).unwrap()
    }

    #[test]
    fn momenta_equal_interpolated_field() {
        let g = unit_line(101);
        let rho = ScalarField::from_fn(&g, |x| 1.0 + x[0]).unwrap();
        let p0 = VectorField::new(vec![ScalarField::from_fn(&g, |x| (4.0 * x[0]).sin()).unwrap()]).unwrap();
        let e = init_pure(&rho, &p0, 500, &mut RngStream::new(1)).unwrap();
        for s in e.samples() {
            assert_eq!(s.p(), p0.interpolate(s.x()).as_slice());
            assert_eq!(s.label(), s.x());
        }
    }

    #[test]
    fn uniform_sampling_passes_ks() {
        let g = unit_line(64);
        let rho = ScalarField::constant(&g, 1.0);
        let e = init_pure(&rho, &VectorField::zeros(&g), 10_000, &mut RngStream::new(2024)).unwrap();
        let mut xs: Vec<f64> = e.samples().iter().map(|s| s.x()[0]).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS = {ks}");
    }

    #[test]
    fn samples_stay_in_support() {
        let g = unit_line(101);
        let rho = ScalarField::from_fn(&g, |x| {
            if (0.4..=0.6).contains(&x[0]) {
                ((x[0] - 0.4) * (0.6 - x[0])).max(0.0)
            } else {
                0.0
            }
        })
        .unwrap();
        let e = init_pure(&rho, &VectorField::zeros(&g), 5000, &mut RngStream::new(9)).unwrap();
        assert!(e.samples().iter().all(|s| (0.4..=0.6).contains(&s.x()[0])));
    }

    #[test]
    fn sampling_errors() {
        let g = unit_line(16);
        assert!(init_pure(&ScalarField::constant(&g, 0.0), &VectorField::zeros(&g), 10, &mut RngStream::new(0)).is_err());
        assert!(init_pure(&ScalarField::constant(&g, 1.0), &VectorField::zeros(&g), 0, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn point_cloud_density_peaks_at_its_location() {
        let g = unit_line(101);
        let e = ParticleEnsemble::from_samples(vec![Sample::new(vec![0.5], vec![0.0]).unwrap(); 10], 0).unwrap();
        let d = density_estimate(&e, &g, 0.05).unwrap();
        assert!((integrate(&d) - 1.0).abs() < 1e-12);
        let peak = d.values().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(d.values()[50], peak);
    }

    #[test]
    fn uniform_density_is_flat() {
        let g = Grid::line(0.0, 1.0, 200, Boundary::Periodic).unwrap();
        let e = init_pure(&ScalarField::constant(&g, 1.0), &VectorField::zeros(&g), 100_000, &mut RngStream::new(4)).unwrap();
        let d = density_estimate(&e, &g, 2.0 * g.spacing(0)).unwrap();
        assert!(d.values().iter().all(|v| (v - 1.0).abs() < 0.05));
    }

    #[test]
    fn gaussian_density_recovered() {
        let g = Grid::line(-6.0, 6.0, 241, Boundary::Clamped).unwrap();
        let rho = ScalarField::from_fn(&g, |x| (-0.5 * x[0] * x[0]).exp() / (std::f64::consts::TAU).sqrt()).unwrap();
        let e = init_pure(&rho, &VectorField::zeros(&g), 100_000, &mut RngStream::new(8)).unwrap();
        let d = density_estimate(&e, &g, 0.1).unwrap();
        let l1: f64 = integrate(
            &ScalarField::new(g.clone(), d.values().iter().zip(rho.values()).map(|(a, b)| (a - b).abs()).collect()).unwrap(),
        );
        assert!(l1 < 0.05, "L1 = {l1}");
    }

    #[test]
    fn empty_and_bad_bandwidth_rejected() {
        let g = unit_line(16);
        assert!(density_estimate(&single(0.5, 0.0), &g, 0.0).is_err());
        assert!(matches!(ParticleEnsemble::from_samples(vec![], 0), Err(Error::EmptyEnsemble)));
    }
}
