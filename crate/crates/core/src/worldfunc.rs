//! Minkowski world function and its distorted modification by a small constant area.
//!
//! `sigma_M = (c^2 (t - t')^2 - |x - x'|^2) / 2`, and the distorted value
//! `sigma = sigma_M + D(sigma_M)` with `D = d = hbar / (2 b c)` on timelike pairs
//! beyond `sigma0` and `D = 0` on spacelike and null pairs. Between `0` and `sigma0`
//! the distortion is interpolated, see [`GapRule`].

use crate::error::{Error, Result};

/// Reduced Planck constant in erg s.
pub const HBAR_CGS: f64 = 1.0546e-27;
/// Universal constant `b` in g/cm.
pub const B_CGS: f64 = 1e-17;
/// Speed of light in cm/s.
pub const C_CGS: f64 = 3e10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacetimePoint {
    pub t: f64,
    pub x: [f64; 3],
}

impl SpacetimePoint {
    pub fn new(t: f64, x: [f64; 3]) -> Result<Self> {
        if !(t.is_finite() && x.iter().all(|v| v.is_finite())) {
            return Err(Error::Parameter("spacetime point must be finite".into()));
        }
        Ok(Self { t, x })
    }
}

/// How `D` is continued across `0 < sigma_M <= sigma0`, where it is not fixed by the
/// two limiting branches. Neither choice is canonical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapRule {
    /// `D = d sigma_M / sigma0`, continuous at both ends.
    #[default]
    LinearRamp,
    /// `D = 0` up to and including `sigma0`.
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionParams {
    pub hbar: f64,
    pub b: f64,
    pub c: f64,
    pub sigma0: f64,
    pub gap: GapRule,
}

impl DistortionParams {
    pub fn new(hbar: f64, b: f64, c: f64, sigma0: f64) -> Result<Self> {
        for (name, v) in [("hbar", hbar), ("b", b), ("c", c), ("sigma0", sigma0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            hbar,
            b,
            c,
            sigma0,
            gap: GapRule::default(),
        })
    }

    /// CGS constants with the given `sigma0` (cm^2).
    pub fn cgs(sigma0: f64) -> Result<Self> {
        Self::new(HBAR_CGS, B_CGS, C_CGS, sigma0)
    }

    pub fn with_gap(mut self, gap: GapRule) -> Self {
        self.gap = gap;
        self
    }

    /// `d = hbar / (2 b c)`.
    pub fn d(&self) -> f64 {
        self.hbar / (2.0 * self.b * self.c)
    }

    /// `D(sigma_M)`.
    pub fn distortion(&self, sigma_m: f64) -> f64 {
        if sigma_m > self.sigma0 {
            self.d()
        } else if sigma_m <= 0.0 {
            0.0
        } else {
            match self.gap {
                GapRule::LinearRamp => self.d() * sigma_m / self.sigma0,
                GapRule::Step => 0.0,
            }
        }
    }
}

pub fn sigma_minkowski(a: &SpacetimePoint, b: &SpacetimePoint, c_light: f64) -> f64 {
    let dt = a.t - b.t;
    let dx2: f64 = a.x.iter().zip(&b.x).map(|(p, q)| (p - q) * (p - q)).sum();
    0.5 * (c_light * c_light * dt * dt - dx2)
}

pub fn sigma_distorted(a: &SpacetimePoint, b: &SpacetimePoint, params: &DistortionParams) -> f64 {
    let s = sigma_minkowski(a, b, params.c);
    s + params.distortion(s)
}
