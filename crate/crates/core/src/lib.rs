//! Control-barrier-function safety filters that keep control-affine systems
//! away from configurations where the input-output mapping loses rank.
//!
//! Two case studies ship with the crate: a two-link planar arm whose barrier
//! is the closed-form smallest eigenvalue of `JJᵀ` ([`arm`]), and a four-coil
//! magnetic actuation rig whose singular set is sampled numerically, meshed,
//! and avoided with distance barriers ([`magnetic`], [`geometry`]).

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arm;
pub mod cbf;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod magnetic;
mod mc_tables;
pub mod metrics;
pub mod qp;
pub mod spectrum;
pub mod trajectory;

pub use arm::{run_arm_scenario, ArmParameters, ArmScenario, ArmState, PlanarArm};
pub use cbf::{
    assemble_distance_barrier, assemble_eigenvalue_barrier, build_cost, class_k_eval,
    safety_filter, Barrier, BarrierConstraint, ClassK, CostSpec, EigenvalueBarrier, FilterOutput,
    StepDiagnostics,
};
pub use dynamics::{
    mapping_matrix, step, task_velocity, InputBounds, InputVector, Integrator, SimulatorConfig,
    StateVector, SystemModel, TaskOutput,
};
pub use error::{Error, Result};
pub use geometry::{
    closest_point_on_mesh, closest_point_on_triangle, distance_barrier_value_and_gradient,
    extract_boundary_mesh, scale_to_unit_cube, ClosestPointResult, Feature, Point3, PointCloud,
    TriangleMesh, UnitCubeScale,
};
pub use grid::{GridAxis, GridField, GridSpec};
pub use magnetic::{
    actuation_matrix, reference_current_controller, run_suturing_scenario, AgentParams, AgentState,
    CoilConfig, MagneticRig, MagneticScenario, ObstacleBarrier, ObstacleSet, PosePath,
};
pub use metrics::{compute_metrics, MetricsRefs, MetricsReport};
pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus};
pub use spectrum::{
    eigen_spectrum, eigenvalue_gradient, gram_matrix, sample_singular_set, smallest_singular_value,
    EigenSpectrum, GradientSpec, GramMatrix, SingularitySample,
};
pub use trajectory::{EventKind, LogEvent, TrajectoryLog};
