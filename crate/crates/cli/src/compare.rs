//! Per-time distances between density series `rho(t, x)`.
//!
//! The second series of a pair is resampled onto the first: linearly in `x` onto the
//! first grid (zero outside its own grid) and linearly in `t` between its bracketing
//! frames. Times of the first series outside the second's range are skipped.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::output::{num, RunManifest, Table};

/// Relative slack when matching times and grid coordinates.
const COORD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    /// One density vector per time, on `xs`.
    pub frames: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMetric {
    pub t: f64,
    pub l1: f64,
    pub l2: f64,
    pub max: f64,
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= COORD_TOL * scale.max(1.0)
}

impl Series {
    /// From a `t, x, rho` table with frames in time order and the same grid per frame.
    pub fn from_table(table: &Table) -> Result<Self> {
        let col = |name: &str| table.column(name).with_context(|| format!("density table lacks column '{name}'"));
        let (ct, cx, cr) = (col("t")?, col("x")?, col("rho")?);
        let mut times: Vec<f64> = Vec::new();
        let mut xs_per: Vec<Vec<f64>> = Vec::new();
        let mut frames: Vec<Vec<f64>> = Vec::new();
        for (i, row) in table.rows.iter().enumerate() {
            let parse = |c: usize| {
                row[c]
                    .parse::<f64>()
                    .with_context(|| format!("row {}: '{}' is not a number", i + 2, row[c]))
            };
            let (t, x, r) = (parse(ct)?, parse(cx)?, parse(cr)?);
            if times.last() != Some(&t) {
                if times.last().is_some_and(|&last| t < last) {
                    bail!("row {}: time {t} goes backwards", i + 2);
                }
                times.push(t);
                xs_per.push(Vec::new());
                frames.push(Vec::new());
            }
            xs_per.last_mut().expect("frame pushed").push(x);
            frames.last_mut().expect("frame pushed").push(r);
        }
        let Some(xs) = xs_per.first().cloned() else {
            bail!("density table has no rows");
        };
        if xs.len() < 2 || xs.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            bail!("grid must have at least two increasing coordinates");
        }
        if xs_per.iter().any(|g| g != &xs) {
            bail!("grid changes between frames");
        }
        Ok(Self { times, xs, frames })
    }

    /// Linear interpolation of one frame at `x`, zero outside the grid.
    fn at_x(&self, frame: &[f64], x: f64) -> f64 {
        let (lo, hi) = (self.xs[0], self.xs[self.xs.len() - 1]);
        let span = hi - lo;
        if x < lo - COORD_TOL * span || x > hi + COORD_TOL * span {
            return 0.0;
        }
        let j = self.xs.partition_point(|&v| v <= x).clamp(1, self.xs.len() - 1);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let w = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        (1.0 - w) * frame[j - 1] + w * frame[j]
    }

    /// The series at time `t` on grid `xs`, or `None` outside the time range.
    fn sample(&self, t: f64, xs: &[f64]) -> Option<Vec<f64>> {
        let (first, last) = (self.times[0], self.times[self.times.len() - 1]);
        let scale = first.abs().max(last.abs());
        let frame: Vec<f64> = if let Some(k) = self.times.iter().position(|&s| close(s, t, scale)) {
            self.frames[k].clone()
        } else {
            if t < first || t > last {
                return None;
            }
            let k = self.times.partition_point(|&s| s <= t);
            let (t0, t1) = (self.times[k - 1], self.times[k]);
            let w = (t - t0) / (t1 - t0);
            self.frames[k - 1]
                .iter()
                .zip(&self.frames[k])
                .map(|(a, b)| (1.0 - w) * a + w * b)
                .collect()
        };
        if xs.len() == self.xs.len() && xs.iter().zip(&self.xs).all(|(a, b)| close(*a, *b, a.abs())) {
            return Some(frame);
        }
        Some(xs.iter().map(|&x| self.at_x(&frame, x)).collect())
    }
}

/// Trapezoid weights on a possibly non-uniform grid.
fn trapezoid(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { xs[i] - xs[i - 1] } else { 0.0 };
            let right = if i + 1 < n { xs[i + 1] - xs[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// L1, L2 and max distance at every time of `a` inside the time range of `b`.
pub fn pair_metrics(a: &Series, b: &Series) -> Result<Vec<PairMetric>> {
    let w = trapezoid(&a.xs);
    let rows: Vec<PairMetric> = a
        .times
        .iter()
        .zip(&a.frames)
        .filter_map(|(&t, fa)| {
            let fb = b.sample(t, &a.xs)?;
            let (mut l1, mut l2, mut max) = (0.0, 0.0, 0.0f64);
            for ((x, y), w) in fa.iter().zip(&fb).zip(&w) {
                let d = (x - y).abs();
                l1 += d * w;
                l2 += d * d * w;
                max = max.max(d);
            }
            Some(PairMetric { t, l1, l2: l2.sqrt(), max })
        })
        .collect();
    if rows.is_empty() {
        bail!(
            "time ranges [{}, {}] and [{}, {}] do not overlap",
            a.times[0],
            a.times[a.times.len() - 1],
            b.times[0],
            b.times[b.times.len() - 1]
        );
    }
    Ok(rows)
}

/// A density series named after the run that produced it.
#[derive(Debug, Clone)]
pub struct NamedSeries {
    pub name: String,
    pub source: PathBuf,
    pub series: Series,
}

/// Loads `density.csv` listed in a run manifest.
pub fn load_run(manifest_path: &Path) -> Result<NamedSeries> {
    let manifest = RunManifest::read(manifest_path)?;
    let file = manifest
        .outputs
        .iter()
        .find(|o| o.as_str() == "density.csv")
        .with_context(|| format!("{}: run has no density.csv output", manifest_path.display()))?;
    let source = manifest_path.parent().unwrap_or(Path::new(".")).join(file);
    let table = Table::read(&source)?;
    let series = Series::from_table(&table).with_context(|| format!("in {}", source.display()))?;
    Ok(NamedSeries {
        name: manifest.scenario,
        source,
        series,
    })
}

/// Comparison table over all pairs of runs, in argument order.
pub fn compare_runs(runs: &[NamedSeries]) -> Result<Table> {
    if runs.len() < 2 {
        bail!("need at least two runs to compare");
    }
    let mut table = Table::new(&["t", "run_a", "run_b", "l1", "l2", "max"]);
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let rows = pair_metrics(&runs[i].series, &runs[j].series).with_context(|| {
                format!(
                    "comparing {} with {}",
                    runs[i].source.display(),
                    runs[j].source.display()
                )
            })?;
            for r in rows {
                table.push(vec![
                    num(r.t),
                    runs[i].name.clone(),
                    runs[j].name.clone(),
                    num(r.l1),
                    num(r.l2),
                    num(r.max),
                ]);
            }
        }
    }
    Ok(table)
}
