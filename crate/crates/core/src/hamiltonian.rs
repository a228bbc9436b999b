//! Hamilton functions `H(t, x, p)` with analytic derivatives.
//!
//! Point Hamiltonians (classical and relativistic) act on single phase-space points.
//! The effective stochastic Hamiltonian also depends on the ensemble density through
//! the stochastic momentum `p_st = lambda * hbar * grad ln rho`, so it is only
//! evaluated on whole fields via [`HamiltonianModel::eval_effective`].

use crate::error::{Error, Result};
use crate::numerics::{log_gradient, ScalarField, VectorField, VACUUM_FLOOR};

/// Default stochastic coefficient: `p_st = (hbar / 2) grad ln rho`.
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// External potential from a small closed-form family.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Zero,
    /// `V = k |x|^2 / 2`
    Harmonic { stiffness: f64 },
    /// `V = sum_axes sum_j c_j x_a^j`
    Polynomial { coeffs: Vec<f64> },
}

impl Potential {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Harmonic { stiffness } => {
                0.5 * stiffness * x.iter().map(|v| v * v).sum::<f64>()
            }
            Potential::Polynomial { coeffs } => x
                .iter()
                .map(|&xa| coeffs.iter().rev().fold(0.0, |acc, c| acc * xa + c))
                .sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Potential::Zero => vec![0.0; x.len()],
            Potential::Harmonic { stiffness } => x.iter().map(|v| stiffness * v).collect(),
            Potential::Polynomial { coeffs } => x
                .iter()
                .map(|&xa| {
                    coeffs
                        .iter()
                        .enumerate()
                        .skip(1)
                        .rev()
                        .fold(0.0, |acc, (j, c)| acc * xa + j as f64 * c)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HamiltonianModel {
    /// `p^2 / 2m + V(x)`
    Classical { mass: f64, potential: Potential },
    /// `sqrt(m^2 c^4 + p^2 c^2)`
    Relativistic { mass: f64, light_speed: f64 },
    /// `sqrt(m^2 c^4 + p^2 c^2 + c^2 p_st^2)` with `p_st = lambda hbar grad ln rho`
    EffectiveStochastic {
        mass: f64,
        light_speed: f64,
        hbar: f64,
        lambda: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive, got {v}")))
    }
}

impl HamiltonianModel {
    pub fn classical(mass: f64, potential: Potential) -> Result<Self> {
        positive("mass", mass)?;
        Ok(HamiltonianModel::Classical { mass, potential })
    }

    pub fn free(mass: f64) -> Result<Self> {
        Self::classical(mass, Potential::Zero)
    }

    pub fn relativistic(mass: f64, light_speed: f64) -> Result<Self> {
        positive("mass", mass)?;
        positive("light speed", light_speed)?;
        Ok(HamiltonianModel::Relativistic { mass, light_speed })
    }

    pub fn effective_stochastic(mass: f64, light_speed: f64, hbar: f64, lambda: f64) -> Result<Self> {
        positive("mass", mass)?;
        positive("light speed", light_speed)?;
        positive("hbar", hbar)?;
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Parameter(format!(
                "stochastic coefficient must be non-negative, got {lambda}"
            )));
        }
        Ok(HamiltonianModel::EffectiveStochastic {
            mass,
            light_speed,
            hbar,
            lambda,
        })
    }

    pub fn mass(&self) -> f64 {
        match *self {
            HamiltonianModel::Classical { mass, .. }
            | HamiltonianModel::Relativistic { mass, .. }
            | HamiltonianModel::EffectiveStochastic { mass, .. } => mass,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            HamiltonianModel::Classical { .. } => "classical",
            HamiltonianModel::Relativistic { .. } => "relativistic",
            HamiltonianModel::EffectiveStochastic { .. } => "effective-stochastic",
        }
    }

    fn reject(&self, op: &'static str) -> Error {
        Error::Variant {
            op,
            variant: self.variant_name(),
        }
    }

    /// `H(t, x, p)` for the point variants.
    pub fn energy(&self, _t: f64, x: &[f64], p: &[f64]) -> Result<f64> {
        let p2: f64 = p.iter().map(|v| v * v).sum();
        match self {
            HamiltonianModel::Classical { mass, potential } => {
                Ok(p2 / (2.0 * mass) + potential.value(x))
            }
            HamiltonianModel::Relativistic { mass, light_speed: c } => {
                Ok((mass * mass * c.powi(4) + p2 * c * c).sqrt())
            }
            HamiltonianModel::EffectiveStochastic { .. } => Err(self.reject("eval_H")),
        }
    }

    /// `dH/dp`, the velocity conjugate to `p`.
    pub fn velocity(&self, t: f64, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        match self {
            HamiltonianModel::Classical { mass, .. } => Ok(p.iter().map(|v| v / mass).collect()),
            HamiltonianModel::Relativistic { light_speed: c, .. } => {
                let e = self.energy(t, x, p)?;
                Ok(p.iter().map(|v| v * c * c / e).collect())
            }
            HamiltonianModel::EffectiveStochastic { .. } => {
                Err(self.reject("velocity_from_momentum"))
            }
        }
    }

    /// `-dH/dx`.
    pub fn force(&self, _t: f64, x: &[f64], _p: &[f64]) -> Result<Vec<f64>> {
        match self {
            HamiltonianModel::Classical { potential, .. } => {
                Ok(potential.gradient(x).into_iter().map(|g| -g).collect())
            }
            HamiltonianModel::Relativistic { .. } => Ok(vec![0.0; x.len()]),
            HamiltonianModel::EffectiveStochastic { .. } => Err(self.reject("force")),
        }
    }

    /// Effective Hamiltonian evaluated node by node on a momentum field and density.
    pub fn eval_effective(&self, p: &VectorField, rho: &ScalarField) -> Result<ScalarField> {
        let HamiltonianModel::EffectiveStochastic {
            mass,
            light_speed: c,
            hbar,
            lambda,
        } = *self
        else {
            return Err(self.reject("eval_effective"));
        };
        if p.grid() != rho.grid() {
            return Err(Error::GridMismatch);
        }
        let p_st = stochastic_momentum_field(rho, lambda, hbar)?;
        let p2 = p.norm_squared();
        let st2 = p_st.norm_squared();
        let rest = mass * mass * c.powi(4);
        ScalarField::new(
            rho.grid().clone(),
            p2.values()
                .iter()
                .zip(st2.values())
                .map(|(a, b)| (rest + c * c * (a + b)).sqrt())
                .collect(),
        )
    }
}

/// `lambda * hbar * grad ln rho`, zero at vacuum nodes.
pub(crate) fn stochastic_momentum_field(
    rho: &ScalarField,
    lambda: f64,
    hbar: f64,
) -> Result<VectorField> {
    check_density(rho)?;
    let (g, _) = log_gradient(rho, VACUUM_FLOOR);
    VectorField::new(
        g.components()
            .iter()
            .map(|c| c.scaled(lambda * hbar))
            .collect(),
    )
}

pub(crate) fn check_density(rho: &ScalarField) -> Result<()> {
    if let Some(i) = rho.values().iter().position(|&v| v < 0.0) {
        return Err(Error::Density(format!(
            "negative density {} at node {i}",
            rho.values()[i]
        )));
    }
    if rho.max() <= 0.0 {
        return Err(Error::Density("density vanishes everywhere".into()));
    }
    Ok(())
}
