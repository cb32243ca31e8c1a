//! Control-affine system abstraction and fixed-step simulation.
//!
//! Every model is written as `ẋ = f(x) + g(x) u` with a task output
//! `z = γ(x)` whose Jacobian `J(x)` links state rates to task rates. The
//! product `φ(x) = J(x) g(x)` is the input-output mapping whose rank loss is
//! what the barriers in this crate keep away from.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_shape, Error, Result};

pub type StateVector = DVector<f64>;
pub type InputVector = DVector<f64>;
pub type TaskOutput = DVector<f64>;

/// A control-affine system with a differentiable task output.
///
/// Implementations must be pure: the same state always yields the same
/// matrices, so that finite-difference checks and parallel sweeps are valid.
pub trait SystemModel: Send + Sync {
    /// State dimension `n`.
    fn state_dim(&self) -> usize;
    /// Input dimension `m`.
    fn input_dim(&self) -> usize;
    /// Task output dimension `d`.
    fn task_dim(&self) -> usize;

    /// Drift `f(x)`, length `n`.
    fn drift(&self, x: &StateVector) -> DVector<f64>;
    /// Input matrix `g(x)`, `n x m`.
    fn input_matrix(&self, x: &StateVector) -> DMatrix<f64>;
    /// Task map `γ(x)`, length `d`.
    fn task_map(&self, x: &StateVector) -> TaskOutput;
    /// Task Jacobian `J(x) = ∂γ/∂x`, `d x n`.
    fn task_jacobian(&self, x: &StateVector) -> DMatrix<f64>;
}

/// Optional per-component box on the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl InputBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_len("input bounds", lower.len(), upper.len())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameter {
                name: "bounds",
                reason: "every lower bound must be <= its upper bound".into(),
            });
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-limit, limit]` on each of `m` channels.
    pub fn symmetric(m: usize, limit: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(m, -limit),
            DVector::from_element(m, limit),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &InputVector, tol: f64) -> bool {
        u.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    /// Clamps `u` into the box and reports whether any channel moved.
    pub fn saturate(&self, u: &InputVector) -> (InputVector, bool) {
        let mut clipped = false;
        let out = DVector::from_iterator(
            u.len(),
            u.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (l, h))| {
                    let c = v.clamp(*l, *h);
                    clipped |= c != *v;
                    c
                }),
        );
        (out, clipped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 10.0,
            integrator: Integrator::Rk4,
        }
    }
}

impl SimulatorConfig {
    pub fn new(dt: f64, t_end: f64, integrator: Integrator) -> Result<Self> {
        let cfg = Self {
            dt,
            t_end,
            integrator,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {}", self.dt),
            });
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "t_end",
                reason: format!("must be >= dt ({}), got {}", self.dt, self.t_end),
            });
        }
        Ok(())
    }

    /// Number of integration steps; the log holds one more row than this.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn time_at(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

fn check_state(model: &dyn SystemModel, x: &StateVector) -> Result<()> {
    check_len("state", model.state_dim(), x.len())
}

fn check_input(model: &dyn SystemModel, u: &InputVector) -> Result<()> {
    check_len("input", model.input_dim(), u.len())
}

/// `φ(x) = J(x) g(x)`, the `d x m` input-output mapping.
pub fn mapping_matrix(model: &dyn SystemModel, x: &StateVector) -> Result<DMatrix<f64>> {
    check_state(model, x)?;
    let j = model.task_jacobian(x);
    let g = model.input_matrix(x);
    let (n, m, d) = (model.state_dim(), model.input_dim(), model.task_dim());
    check_shape("task jacobian", (d, n), j.shape())?;
    check_shape("input matrix", (n, m), g.shape())?;
    Ok(j * g)
}

/// `ż = J(x) f(x) + φ(x) u`.
pub fn task_velocity(
    model: &dyn SystemModel,
    x: &StateVector,
    u: &InputVector,
) -> Result<DVector<f64>> {
    check_input(model, u)?;
    let phi = mapping_matrix(model, x)?;
    let f = model.drift(x);
    check_len("drift", model.state_dim(), f.len())?;
    Ok(model.task_jacobian(x) * f + phi * u)
}

/// `ẋ = f(x) + g(x) u`.
pub fn state_derivative(model: &dyn SystemModel, x: &StateVector, u: &InputVector) -> DVector<f64> {
    model.drift(x) + model.input_matrix(x) * u
}

/// Advances one step with `u` held constant over the interval.
pub fn step(
    model: &dyn SystemModel,
    x: &StateVector,
    u: &InputVector,
    cfg: &SimulatorConfig,
) -> Result<StateVector> {
    check_state(model, x)?;
    check_input(model, u)?;
    let dt = cfg.dt;
    let next = match cfg.integrator {
        Integrator::Euler => x + state_derivative(model, x, u) * dt,
        Integrator::Rk4 => {
            let k1 = state_derivative(model, x, u);
            let k2 = state_derivative(model, &(x + &k1 * (0.5 * dt)), u);
            let k3 = state_derivative(model, &(x + &k2 * (0.5 * dt)), u);
            let k4 = state_derivative(model, &(x + &k3 * dt), u);
            x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    };
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::IntegrationBlowup { state: next })
    }
}

/// Central-difference Jacobian of `f` at `x` with step `h`.
pub fn central_difference_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}
