//! Barrier constraints, the task-space weighted cost, and the safety filter.
//!
//! A barrier `h` with class-K function `α` yields one row affine in `u`:
//!
//! ```text
//! L_f h(x) + L_g h(x) u ≥ −α(h(x))    ⇔    aᵀu ≥ b,  a = L_g h,  b = −L_f h − α(h)
//! ```
//!
//! The filter keeps the input closest to a reference in the metric
//! `Q = φᵀWφ (+ Γ)`, i.e. it minimises the induced task-velocity deviation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{mapping_matrix, InputBounds, InputVector, StateVector, SystemModel};
use crate::error::{check_len, check_shape, Error, Result};
use crate::qp::{solve_qp, QpProblem, QpSolution, QpStatus};
use crate::spectrum::{eigenvalue_gradient, mapping_spectrum, symmetric_eigen, GradientSpec};

/// Extended class-K function shaping how hard a barrier pushes back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClassK {
    /// `α(h) = γ h`
    Linear { gamma: f64 },
    /// `α(h) = γ h |h|`, the signed square, so `α` stays increasing for `h < 0`.
    Quadratic { gamma: f64 },
}

impl ClassK {
    pub fn gamma(&self) -> f64 {
        match *self {
            ClassK::Linear { gamma } | ClassK::Quadratic { gamma } => gamma,
        }
    }

    pub fn eval(&self, h: f64) -> f64 {
        match *self {
            ClassK::Linear { gamma } => gamma * h,
            ClassK::Quadratic { gamma } => gamma * h * h.abs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gamma = self.gamma();
        if gamma > 0.0 && gamma.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("class-K gain must be positive, got {gamma}"),
            })
        }
    }
}

pub fn class_k_eval(alpha: &ClassK, h: f64) -> f64 {
    alpha.eval(h)
}

/// `aᵀu ≥ b`, derived from a barrier value and its Lie derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierConstraint {
    pub a: DVector<f64>,
    pub b: f64,
    pub h_value: f64,
    pub label: String,
}

impl BarrierConstraint {
    pub fn new(a: DVector<f64>, b: f64, h_value: f64, label: impl Into<String>) -> Self {
        Self {
            a,
            b,
            h_value,
            label: label.into(),
        }
    }

    /// `aᵀu − b`; non-negative when `u` satisfies the row.
    pub fn slack(&self, u: &InputVector) -> f64 {
        self.a.dot(u) - self.b
    }
}

/// Anything that contributes barrier rows at a state.
pub trait Barrier: Send + Sync {
    fn constraints(
        &self,
        model: &dyn SystemModel,
        x: &StateVector,
    ) -> Result<Vec<BarrierConstraint>>;
}

/// `hᵢ(x) = λᵢ(x) − ε` on a Gram eigenvalue (0-based index, ascending).
#[derive(Debug, Clone)]
pub struct EigenvalueBarrier {
    pub index: usize,
    pub epsilon: f64,
    pub alpha: ClassK,
    pub gradient: GradientSpec,
}

impl Barrier for EigenvalueBarrier {
    fn constraints(
        &self,
        model: &dyn SystemModel,
        x: &StateVector,
    ) -> Result<Vec<BarrierConstraint>> {
        assemble_eigenvalue_barrier(
            model,
            x,
            self.index,
            self.epsilon,
            &self.alpha,
            &self.gradient,
        )
        .map(|c| vec![c])
    }
}

/// Row for `hᵢ = λᵢ − ε`: `a = gᵀ∇λᵢ`, `b = −∇λᵢᵀf − α(λᵢ − ε)`.
pub fn assemble_eigenvalue_barrier(
    model: &dyn SystemModel,
    x: &StateVector,
    index: usize,
    epsilon: f64,
    alpha: &ClassK,
    gradient: &GradientSpec,
) -> Result<BarrierConstraint> {
    let grad = eigenvalue_gradient(model, x, index, gradient)?;
    let lambda = mapping_spectrum(model, x)?.eigenvalues[index];
    let h = lambda - epsilon;
    let a = model.input_matrix(x).transpose() * &grad;
    let b = -grad.dot(&model.drift(x)) - alpha.eval(h);
    Ok(BarrierConstraint::new(
        a,
        b,
        h,
        format!("lambda{}", index + 1),
    ))
}

/// Row for the distance barrier `h = ½(‖p − p_O‖² − δ²)`.
///
/// `point` and `closest` live in the (possibly rescaled) obstacle frame;
/// `metric` holds the per-axis derivative of that frame with respect to the
/// state, so `∇ₓh = metric ∘ (point − closest)`. The closest point is frozen
/// at this instant. `phi` is the mapping from inputs to state rates.
pub fn assemble_distance_barrier(
    point: &DVector<f64>,
    closest: &DVector<f64>,
    metric: &DVector<f64>,
    delta: f64,
    alpha: &ClassK,
    phi: &DMatrix<f64>,
    label: impl Into<String>,
) -> Result<BarrierConstraint> {
    check_len("distance barrier closest point", point.len(), closest.len())?;
    check_len("distance barrier metric", point.len(), metric.len())?;
    check_len("distance barrier mapping rows", point.len(), phi.nrows())?;
    let diff = point - closest;
    let h = 0.5 * (diff.norm_squared() - delta * delta);
    let grad = diff.component_mul(metric);
    let a = phi.transpose() * grad;
    Ok(BarrierConstraint::new(a, -alpha.eval(h), h, label))
}

/// Cost weights for the safety filter: `Q = φᵀWφ + Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    /// Task-velocity weight `W`, `d x d`, positive definite.
    pub weight: DMatrix<f64>,
    /// Input regularisation `Γ`, `m x m`; required when `d < m`.
    pub regularization: Option<DMatrix<f64>>,
}

impl CostSpec {
    pub fn new(weight: DMatrix<f64>, regularization: Option<DMatrix<f64>>) -> Self {
        Self {
            weight,
            regularization,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d), None)
    }
}

fn require_spd(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    let min = symmetric_eigen(m)?.smallest();
    if min > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be positive definite (smallest eigenvalue {min:e})"),
        })
    }
}

/// `Q = φᵀWφ`, plus `Γ` when given (mandatory for `d < m`).
pub fn build_cost(
    phi: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    regularization: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let (d, m) = phi.shape();
    check_shape("cost weight", (d, d), weight.shape())?;
    require_spd("W", weight)?;
    let mut q = phi.transpose() * weight * phi;
    match regularization {
        Some(gamma) => {
            check_shape("cost regularisation", (m, m), gamma.shape())?;
            require_spd("Gamma", gamma)?;
            q += gamma;
        }
        None if d < m => return Err(Error::MissingRegularization),
        None => {}
    }
    let q = (&q + q.transpose()) * 0.5;
    let min_eigenvalue = symmetric_eigen(&q)?.smallest();
    if min_eigenvalue <= 1e-12 {
        return Err(Error::SingularCost { min_eigenvalue });
    }
    Ok(q)
}

/// Output of one safety-filter evaluation.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub u: InputVector,
    pub constraints: Vec<BarrierConstraint>,
    pub solution: QpSolution,
    /// `‖u − u_ref‖`
    pub deviation: f64,
}

impl FilterOutput {
    pub fn h_values(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.h_value).collect()
    }

    /// Active barrier rows only (bound rows are excluded).
    pub fn active_barriers(&self) -> Vec<usize> {
        self.solution
            .active_set
            .iter()
            .copied()
            .filter(|&i| i < self.constraints.len())
            .collect()
    }
}

/// Assembles every barrier row at `x`, builds the weighted cost and solves
/// the QP. Returns [`Error::QpInfeasible`] if no admissible input exists.
pub fn safety_filter(
    model: &dyn SystemModel,
    x: &StateVector,
    u_ref: &InputVector,
    barriers: &[&dyn Barrier],
    cost: &CostSpec,
    bounds: Option<&InputBounds>,
) -> Result<FilterOutput> {
    check_len("reference input", model.input_dim(), u_ref.len())?;
    let mut constraints = Vec::new();
    for barrier in barriers {
        constraints.extend(barrier.constraints(model, x)?);
    }
    let phi = mapping_matrix(model, x)?;
    let q = build_cost(&phi, &cost.weight, cost.regularization.as_ref())?;
    let problem = QpProblem::new(q, u_ref.clone())
        .with_constraints(constraints)
        .with_bounds(bounds.cloned());
    let solution = solve_qp(&problem)?;
    if solution.status == QpStatus::Infeasible {
        return Err(Error::QpInfeasible {
            rows: problem.rows().len(),
        });
    }
    let deviation = (&solution.u - u_ref).norm();
    Ok(FilterOutput {
        u: solution.u.clone(),
        constraints: problem.constraints,
        solution,
        deviation,
    })
}

/// Per-step filter record, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub h: Vec<f64>,
    pub active: Vec<usize>,
    pub u: Vec<f64>,
    pub u_ref: Vec<f64>,
    pub deviation: f64,
}

impl StepDiagnostics {
    pub fn from_filter(t: f64, u_ref: &InputVector, out: &FilterOutput) -> Self {
        Self {
            t,
            h: out.h_values(),
            active: out.active_barriers(),
            u: out.u.iter().copied().collect(),
            u_ref: u_ref.iter().copied().collect(),
            deviation: out.deviation,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("diagnostics are plain numbers")
    }
}
