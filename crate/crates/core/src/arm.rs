//! Two-link planar manipulator driven at the velocity level.
//!
//! Joint rates are the inputs (`f = 0`, `g = I₂`) and the end-effector
//! position is the task output, so `φ = J(q)`. The arm is singular when it
//! straightens (`q₂ = 0`) or folds back on itself (`q₂ = π`); both show up as
//! a vanishing smallest eigenvalue of `JJᵀ`, which for unit links has a
//! closed form in `q₂` alone.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::cbf::{safety_filter, ClassK, CostSpec, EigenvalueBarrier, StepDiagnostics};
use crate::dynamics::{step, InputVector, SimulatorConfig, StateVector, SystemModel, TaskOutput};
use crate::error::{Error, Result};
use crate::linalg::{pseudo_inverse, PINV_TOL};
use crate::spectrum::{mapping_spectrum, GradientSpec, DEFAULT_FD_STEP};
use crate::trajectory::{EventKind, TrajectoryLog};

/// Columns of an arm trajectory log.
pub const ARM_LOG_COLUMNS: [&str; 10] = [
    "t", "q1", "q2", "u1", "u2", "lambda1", "h", "ex", "ey", "active",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmParameters {
    /// Link lengths, m.
    pub l1: f64,
    pub l2: f64,
    /// Proportional task-space gain, 1/s.
    pub kp: f64,
    /// Barrier margin on `λ₁`.
    pub epsilon: f64,
}

impl Default for ArmParameters {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            kp: 2.0,
            epsilon: 0.1,
        }
    }
}

impl ArmParameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l1", self.l1),
            ("l2", self.l2),
            ("kp", self.kp),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn has_unit_links(&self) -> bool {
        self.l1 == 1.0 && self.l2 == 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub q1: f64,
    pub q2: f64,
}

impl ArmState {
    pub fn new(q1: f64, q2: f64) -> Self {
        Self { q1, q2 }
    }

    pub fn to_vector(self) -> StateVector {
        DVector::from_vec(vec![self.q1, self.q2])
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self::new(x[0], x[1])
    }
}

pub fn forward_kinematics(p: &ArmParameters, q: &ArmState) -> Vector2<f64> {
    let q12 = q.q1 + q.q2;
    Vector2::new(
        p.l1 * q.q1.cos() + p.l2 * q12.cos(),
        p.l1 * q.q1.sin() + p.l2 * q12.sin(),
    )
}

pub fn jacobian(p: &ArmParameters, q: &ArmState) -> Matrix2<f64> {
    let (s1, c1) = q.q1.sin_cos();
    let (s12, c12) = (q.q1 + q.q2).sin_cos();
    Matrix2::new(
        -p.l1 * s1 - p.l2 * s12,
        -p.l2 * s12,
        p.l1 * c1 + p.l2 * c12,
        p.l2 * c12,
    )
}

fn radicand(q2: f64) -> f64 {
    let c = q2.cos();
    12.0 * c + 8.0 * c * c + 5.0
}

/// `(λ₁, λ₂)` of `JJᵀ` for unit links, `λ₁ ≤ λ₂`.
pub fn analytic_eigenvalues(p: &ArmParameters, q2: f64) -> Result<(f64, f64)> {
    if !p.has_unit_links() {
        return Err(Error::UnsupportedParameters { l1: p.l1, l2: p.l2 });
    }
    let c = q2.cos();
    let root = radicand(q2).sqrt();
    Ok((c - 0.5 * root + 1.5, c + 0.5 * root + 1.5))
}

/// `∂λ₁/∂q₂` for unit links.
pub fn analytic_lambda1_gradient(q2: f64) -> f64 {
    let (s, c) = q2.sin_cos();
    -s + (12.0 * s + 16.0 * c * s) / (4.0 * radicand(q2).sqrt())
}

/// `∂λ₂/∂q₂` for unit links.
pub fn analytic_lambda2_gradient(q2: f64) -> f64 {
    let (s, c) = q2.sin_cos();
    -s - (12.0 * s + 16.0 * c * s) / (4.0 * radicand(q2).sqrt())
}

/// Closed-form eigenvalue gradients over the state `(q₁, q₂)`; unit links only.
pub fn analytic_gradient_spec() -> GradientSpec {
    GradientSpec::Analytic(Arc::new(|x: &StateVector, index: usize| {
        let d = if index == 0 {
            analytic_lambda1_gradient(x[1])
        } else {
            analytic_lambda2_gradient(x[1])
        };
        DVector::from_vec(vec![0.0, d])
    }))
}

/// The arm as a [`SystemModel`]: `q̇ = u`, `z = FK(q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarArm {
    pub params: ArmParameters,
}

impl PlanarArm {
    pub fn new(params: ArmParameters) -> Self {
        Self { params }
    }

    /// `λ₁` of `JJᵀ`, closed form when available.
    pub fn lambda1(&self, q: &ArmState) -> Result<f64> {
        if self.params.has_unit_links() {
            Ok(analytic_eigenvalues(&self.params, q.q2)?.0)
        } else {
            Ok(mapping_spectrum(self, &q.to_vector())?.smallest())
        }
    }
}

impl SystemModel for PlanarArm {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn task_dim(&self) -> usize {
        2
    }
    fn drift(&self, _x: &StateVector) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn input_matrix(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }
    fn task_map(&self, x: &StateVector) -> TaskOutput {
        let z = forward_kinematics(&self.params, &ArmState::from_vector(x));
        DVector::from_column_slice(z.as_slice())
    }
    fn task_jacobian(&self, x: &StateVector) -> DMatrix<f64> {
        let j = jacobian(&self.params, &ArmState::from_vector(x));
        DMatrix::from_column_slice(2, 2, j.as_slice())
    }
}

/// `u_ref = J†(q) K_p (z_d − z)` with a truncated pseudoinverse.
pub fn reference_controller(p: &ArmParameters, q: &ArmState, target: &Vector2<f64>) -> InputVector {
    let z_dot = (target - forward_kinematics(p, q)) * p.kp;
    let j = jacobian(p, q);
    let pinv = pseudo_inverse(&DMatrix::from_column_slice(2, 2, j.as_slice()), PINV_TOL);
    pinv * DVector::from_column_slice(z_dot.as_slice())
}

/// A task target held until `until` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub target: [f64; 2],
    pub until: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmScenario {
    pub q0: ArmState,
    /// Targets in order; the last one is held to the end of the run.
    pub waypoints: Vec<Waypoint>,
    pub cbf_enabled: bool,
    pub alpha: ClassK,
    pub gradient: GradientMode,
}

impl ArmScenario {
    /// Straighten toward `(√2, √2)` for 5 s, then move to `(0.5, 1.2)`.
    pub fn two_task(cbf_enabled: bool) -> Self {
        let r = std::f64::consts::SQRT_2;
        Self {
            q0: ArmState::new(std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_2),
            waypoints: vec![
                Waypoint {
                    target: [r, r],
                    until: 5.0,
                },
                Waypoint {
                    target: [0.5, 1.2],
                    until: f64::INFINITY,
                },
            ],
            cbf_enabled,
            alpha: ClassK::Linear { gamma: 1.0 },
            gradient: GradientMode::Analytic,
        }
    }

    /// Reachability: `|l1 − l2| < ‖z_d‖ ≤ l1 + l2`. The outer bound is closed
    /// so that a fully stretched target (the singular configuration this
    /// scenario exists to approach) is admissible.
    pub fn validate(&self, p: &ArmParameters) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::InvalidParameter {
                name: "waypoints",
                reason: "at least one waypoint is required".into(),
            });
        }
        self.alpha.validate()?;
        let inner = (p.l1 - p.l2).abs();
        let outer = p.l1 + p.l2;
        for w in &self.waypoints {
            let r = w.target[0].hypot(w.target[1]);
            if !(r > inner && r <= outer * (1.0 + 1e-12)) {
                return Err(Error::InvalidParameter {
                    name: "waypoints",
                    reason: format!(
                        "target ({}, {}) at radius {r} is outside the reachable annulus ({inner}, {outer}]",
                        w.target[0], w.target[1]
                    ),
                });
            }
        }
        if self
            .waypoints
            .windows(2)
            .any(|w| !(w[1].until > w[0].until))
        {
            return Err(Error::InvalidParameter {
                name: "waypoints",
                reason: "switch times must increase".into(),
            });
        }
        if self.cbf_enabled && PlanarArm::new(*p).lambda1(&self.q0)? < p.epsilon {
            return Err(Error::InvalidParameter {
                name: "q0",
                reason: format!(
                    "initial configuration violates lambda1 >= epsilon = {}",
                    p.epsilon
                ),
            });
        }
        Ok(())
    }

    pub fn target_at(&self, t: f64) -> Vector2<f64> {
        let w = self
            .waypoints
            .iter()
            .find(|w| t < w.until)
            .unwrap_or_else(|| self.waypoints.last().expect("validated non-empty"));
        Vector2::new(w.target[0], w.target[1])
    }
}

/// Closed-loop run: proportional task controller, optionally filtered by the
/// `λ₁ − ε` barrier. One log row per step including `t = 0`.
pub fn run_arm_scenario(
    p: &ArmParameters,
    scenario: &ArmScenario,
    sim: &SimulatorConfig,
) -> Result<TrajectoryLog> {
    p.validate()?;
    sim.validate()?;
    scenario.validate(p)?;
    let model = PlanarArm::new(*p);
    let gradient = match scenario.gradient {
        GradientMode::Analytic if p.has_unit_links() => analytic_gradient_spec(),
        _ => GradientSpec::FiniteDifference {
            step: DEFAULT_FD_STEP,
        },
    };
    let barrier = EigenvalueBarrier {
        index: 0,
        epsilon: p.epsilon,
        alpha: scenario.alpha,
        gradient,
    };
    let cost = CostSpec::identity(2);

    let mut log = TrajectoryLog::new(&ARM_LOG_COLUMNS);
    let mut x = scenario.q0.to_vector();
    let mut u_prev = DVector::zeros(2);
    let steps = sim.steps();
    for k in 0..=steps {
        let t = sim.time_at(k);
        let q = ArmState::from_vector(&x);
        let target = scenario.target_at(t);
        let u_ref = reference_controller(p, &q, &target);
        let (u, active) = if scenario.cbf_enabled {
            match safety_filter(&model, &x, &u_ref, &[&barrier], &cost, None) {
                Ok(out) => {
                    log.diagnostics
                        .push(StepDiagnostics::from_filter(t, &u_ref, &out));
                    let active = !out.active_barriers().is_empty();
                    (out.u, active)
                }
                Err(Error::QpInfeasible { .. }) => {
                    log.event(t, EventKind::QpInfeasible, "holding previous input");
                    (u_prev.clone(), false)
                }
                Err(e) => return Err(e),
            }
        } else {
            (u_ref, false)
        };
        let lambda1 = model.lambda1(&q)?;
        let e = forward_kinematics(p, &q) - target;
        log.push(vec![
            t,
            q.q1,
            q.q2,
            u[0],
            u[1],
            lambda1,
            lambda1 - p.epsilon,
            e[0],
            e[1],
            if active { 1.0 } else { 0.0 },
        ]);
        if k < steps {
            x = step(&model, &x, &u, sim)?;
        }
        u_prev = u;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn unit() -> ArmParameters {
        ArmParameters::default()
    }

    #[test]
    fn forward_kinematics_poses() {
        let p = unit();
        let z = forward_kinematics(&p, &ArmState::new(0.0, 0.0));
        assert_relative_eq!(z, Vector2::new(2.0, 0.0));
        let z = forward_kinematics(&p, &ArmState::new(FRAC_PI_2, 0.0));
        assert_relative_eq!(z, Vector2::new(0.0, 2.0), epsilon = 1e-15);
        let z = forward_kinematics(&p, &ArmState::new(0.0, FRAC_PI_2));
        assert_relative_eq!(z, Vector2::new(1.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn jacobian_at_right_angle_and_straight() {
        let p = unit();
        let j = jacobian(&p, &ArmState::new(0.0, FRAC_PI_2));
        assert_relative_eq!(j, Matrix2::new(-1.0, -1.0, 1.0, 0.0), epsilon = 1e-15);
        let j = jacobian(&p, &ArmState::new(0.0, 0.0));
        assert_relative_eq!(j, Matrix2::new(0.0, 0.0, 2.0, 1.0), epsilon = 1e-15);
        assert_eq!(j.determinant(), 0.0);
    }

    #[test]
    fn closed_form_eigenvalues() {
        let p = unit();
        assert_eq!(analytic_eigenvalues(&p, 0.0).unwrap(), (0.0, 5.0));
        let (l1, l2) = analytic_eigenvalues(&p, PI).unwrap();
        assert!(l1.abs() < 1e-12);
        assert_relative_eq!(l2, 1.0, epsilon = 1e-12);
        let (l1, l2) = analytic_eigenvalues(&p, FRAC_PI_2).unwrap();
        assert_relative_eq!(l1, (3.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(l2, (3.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_requires_unit_links() {
        let p = ArmParameters {
            l1: 1.0,
            l2: 0.5,
            ..unit()
        };
        assert!(matches!(
            analytic_eigenvalues(&p, 0.3),
            Err(Error::UnsupportedParameters { .. })
        ));
    }

    #[test]
    fn lambda1_gradient_values() {
        assert!(analytic_lambda1_gradient(2.0 * PI / 3.0).abs() < 1e-12);
        assert_relative_eq!(
            analytic_lambda1_gradient(FRAC_PI_2),
            -1.0 + 3.0 / 5f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn reference_controller_cases() {
        let p = unit();
        let q = ArmState::new(0.0, FRAC_PI_2);
        let z = forward_kinematics(&p, &q);
        assert_eq!(reference_controller(&p, &q, &z), DVector::zeros(2));

        let p1 = ArmParameters { kp: 1.0, ..p };
        let u = reference_controller(&p1, &q, &(z + Vector2::new(0.0, 1.0)));
        assert_relative_eq!(u[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(u[1], -1.0, epsilon = 1e-12);

        // singular: J = [[0,0],[2,1]], row space spanned by (2,1)
        let q = ArmState::new(0.0, 0.0);
        let u = reference_controller(&p, &q, &Vector2::new(0.3, 1.1));
        assert!(u.iter().all(|v| v.is_finite()));
        assert!((u[0] * 1.0 - u[1] * 2.0).abs() < 1e-12);
    }

    #[test]
    fn barrier_row_at_right_angle() {
        let model = PlanarArm::new(unit());
        let x = DVector::from_vec(vec![0.4, FRAC_PI_2]);
        let row = crate::cbf::assemble_eigenvalue_barrier(
            &model,
            &x,
            0,
            0.1,
            &ClassK::Linear { gamma: 1.0 },
            &analytic_gradient_spec(),
        )
        .unwrap();
        assert_eq!(row.a[0], 0.0);
        assert_relative_eq!(row.a[1], 0.341640786, epsilon = 1e-9);
        assert_relative_eq!(row.b, -(0.381966011 - 0.1), epsilon = 1e-9);
    }

    #[test]
    fn barrier_row_at_flat_gradient_point() {
        let model = PlanarArm::new(unit());
        let x = DVector::from_vec(vec![1.0, 2.0 * PI / 3.0]);
        let alpha = ClassK::Linear { gamma: 1.0 };
        let row = crate::cbf::assemble_eigenvalue_barrier(
            &model,
            &x,
            0,
            0.1,
            &alpha,
            &analytic_gradient_spec(),
        )
        .unwrap();
        assert!(row.a.amax() < 1e-12);
        assert_relative_eq!(row.b, -alpha.eval(0.5 - 0.1), epsilon = 1e-12);
        // 0 ≥ b holds since α(h) ≥ 0
        assert!(row.slack(&DVector::zeros(2)) >= 0.0);
    }

    #[test]
    fn stationary_target_keeps_arm_still() {
        let p = unit();
        let mut scenario = ArmScenario::two_task(true);
        let z0 = forward_kinematics(&p, &scenario.q0);
        scenario.waypoints = vec![Waypoint {
            target: [z0[0], z0[1]],
            until: f64::INFINITY,
        }];
        let sim = SimulatorConfig::new(1e-3, 0.5, crate::dynamics::Integrator::Rk4).unwrap();
        let log = run_arm_scenario(&p, &scenario, &sim).unwrap();
        assert_eq!(log.len(), 501);
        for name in ["u1", "u2"] {
            assert!(log.column(name).unwrap().iter().all(|u| *u == 0.0));
        }
    }

    #[test]
    fn scenario_validation() {
        let p = unit();
        let mut s = ArmScenario::two_task(true);
        assert!(s.validate(&p).is_ok());
        s.waypoints[1].target = [3.0, 0.0];
        assert!(s.validate(&p).is_err());
        let mut s = ArmScenario::two_task(true);
        s.waypoints[1].until = 1.0;
        assert!(s.validate(&p).is_err());
    }
}
