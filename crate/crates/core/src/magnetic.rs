//! Four-coil magnetic actuation of a planar dipole agent.
//!
//! State is `(x, y, θ)`; inputs are coil currents. Each coil is a point
//! dipole whose moment scales with its current, so the map from currents to
//! the agent's force and torque is linear and the system is driftless:
//! `ẋ = g(X) I` with the friction coefficients folded into `g`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use std::f64::consts::PI;

use crate::cbf::{
    assemble_distance_barrier, safety_filter, Barrier, BarrierConstraint, ClassK, CostSpec,
    StepDiagnostics,
};
use crate::dynamics::{
    mapping_matrix, step, InputBounds, InputVector, SimulatorConfig, StateVector, SystemModel,
    TaskOutput,
};
use crate::error::{Error, Result};
use crate::geometry::{
    distance_barrier_value_and_gradient, extract_boundary_mesh, ClosestPointResult, Point3,
    TriangleMesh, UnitCubeScale,
};
use crate::grid::{GridAxis, GridField, GridSpec};
use crate::linalg::{pseudo_inverse, PINV_TOL};
use crate::metrics::wrap_angle;
use crate::spectrum::sigma_min_field;
use crate::trajectory::{EventKind, TrajectoryLog};

/// μ₀/4π in T·m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;

/// Sources closer than this to a query point are rejected.
pub const MIN_SOURCE_DISTANCE: f64 = 1e-9;

/// Diameter of the circular workspace, metres.
pub const WORKSPACE_DIAMETER: f64 = 0.035;

fn lift(v: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, 0.0)
}

/// Field of a point dipole `m` at offset `r` from it.
pub fn dipole_field_3d(k: f64, r: &Vector3<f64>, m: &Vector3<f64>) -> Vector3<f64> {
    let d = r.norm();
    let rh = r / d;
    (rh * (3.0 * m.dot(&rh)) - m) * (k / d.powi(3))
}

/// Jacobian `∂Bᵢ/∂rⱼ` of [`dipole_field_3d`].
pub fn dipole_gradient_3d(k: f64, r: &Vector3<f64>, m: &Vector3<f64>) -> Matrix3<f64> {
    let d2 = r.norm_squared();
    let d = d2.sqrt();
    let r5 = d2 * d2 * d;
    let r7 = r5 * d2;
    let mr = m.dot(r);
    Matrix3::from_fn(|i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        k * (3.0 * (m[j] * r[i] + m[i] * r[j] + mr * delta) / r5 - 15.0 * mr * r[i] * r[j] / r7)
    })
}

fn source_offset(source: &Vector2<f64>, query: &Vector2<f64>) -> Result<Vector3<f64>> {
    let r = query - source;
    let distance = r.norm();
    if !(distance > MIN_SOURCE_DISTANCE) {
        return Err(Error::TooCloseToSource { distance });
    }
    Ok(lift(&r))
}

/// In-plane field of an in-plane dipole, Tesla.
pub fn dipole_field(
    source_pos: &Vector2<f64>,
    source_moment: &Vector2<f64>,
    query_pos: &Vector2<f64>,
) -> Result<Vector2<f64>> {
    let r = source_offset(source_pos, query_pos)?;
    Ok(dipole_field_3d(MU0_OVER_4PI, &r, &lift(source_moment)).xy())
}

/// In-plane block of the field Jacobian, `[∂Bᵢ/∂xⱼ]`, T/m.
pub fn field_gradient(
    source_pos: &Vector2<f64>,
    source_moment: &Vector2<f64>,
    query_pos: &Vector2<f64>,
) -> Result<Matrix2<f64>> {
    let r = source_offset(source_pos, query_pos)?;
    Ok(dipole_gradient_3d(MU0_OVER_4PI, &r, &lift(source_moment))
        .fixed_view::<2, 2>(0, 0)
        .into())
}

/// Coil dipoles, one column of `g` each. Moments are per ampere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilConfig {
    pub positions: Vec<[f64; 2]>,
    pub moments: Vec<[f64; 2]>,
    #[serde(default = "default_mu0_over_4pi")]
    pub mu0_over_4pi: f64,
}

fn default_mu0_over_4pi() -> f64 {
    MU0_OVER_4PI
}

impl CoilConfig {
    /// Coils on a circle of `radius`, starting on +x and spaced evenly,
    /// each moment pointing at the centre.
    pub fn radial(count: usize, radius: f64, moment: f64) -> Self {
        let mut positions = Vec::with_capacity(count);
        let mut moments = Vec::with_capacity(count);
        for i in 0..count {
            let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let (s, c) = a.sin_cos();
            positions.push([radius * c, radius * s]);
            moments.push([-moment * c, -moment * s]);
        }
        Self {
            positions,
            moments,
            mu0_over_4pi: MU0_OVER_4PI,
        }
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, i: usize) -> Vector2<f64> {
        Vector2::from(self.positions[i])
    }

    pub fn moment(&self, i: usize) -> Vector2<f64> {
        Vector2::from(self.moments[i])
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidParameter {
            name: "coils",
            reason,
        };
        if self.positions.is_empty() || self.positions.len() != self.moments.len() {
            return Err(invalid(format!(
                "need matching, non-empty position and moment lists (got {} and {})",
                self.positions.len(),
                self.moments.len()
            )));
        }
        if !(self.mu0_over_4pi > 0.0 && self.mu0_over_4pi.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "mu0_over_4pi",
                reason: format!("must be positive, got {}", self.mu0_over_4pi),
            });
        }
        for i in 0..self.count() {
            let p = self.position(i);
            if !p.iter().all(|v| v.is_finite()) || p.norm() <= WORKSPACE_DIAMETER / 2.0 {
                return Err(invalid(format!(
                    "coil {} at ({}, {}) must lie outside the workspace disk",
                    i + 1,
                    p.x,
                    p.y
                )));
            }
            if !(self.moment(i).norm() > 0.0) {
                return Err(invalid(format!("coil {} has a zero moment", i + 1)));
            }
            for j in 0..i {
                if (self.position(j) - p).norm() <= MIN_SOURCE_DISTANCE {
                    return Err(invalid(format!("coils {} and {} coincide", j + 1, i + 1)));
                }
            }
        }
        Ok(())
    }

    /// Field and in-plane field Jacobian of coil `i` at 1 A.
    pub fn field_and_gradient(
        &self,
        i: usize,
        query: &Vector2<f64>,
    ) -> Result<(Vector2<f64>, Matrix2<f64>)> {
        let r = source_offset(&self.position(i), query)?;
        let m = lift(&self.moment(i));
        let b = dipole_field_3d(self.mu0_over_4pi, &r, &m).xy();
        let g = dipole_gradient_3d(self.mu0_over_4pi, &r, &m)
            .fixed_view::<2, 2>(0, 0)
            .into();
        Ok((b, g))
    }
}

impl Default for CoilConfig {
    fn default() -> Self {
        Self::radial(4, 0.04, 5.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentParams {
    /// Dipole moment magnitude, A·m².
    pub m0: f64,
    /// Translational friction, N·s/m.
    pub c_t: f64,
    /// Rotational friction, N·m·s/rad.
    pub c_r: f64,
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m0", self.m0), ("c_t", self.c_t), ("c_r", self.c_r)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            m0: 5e-3,
            c_t: 1.0,
            c_r: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn to_vector(&self) -> StateVector {
        DVector::from_vec(vec![self.x, self.y, self.theta])
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn in_workspace(&self) -> bool {
        self.position().norm() <= WORKSPACE_DIAMETER / 2.0
    }
}

/// Force and torque on the agent from a given field and field Jacobian.
pub fn wrench_from_field(
    b: &Vector2<f64>,
    grad: &Matrix2<f64>,
    theta: f64,
    params: &AgentParams,
) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    let m = Vector2::new(params.m0 * c, params.m0 * s);
    let f = grad * m;
    Vector3::new(f.x, f.y, m.x * b.y - m.y * b.x)
}

/// `(F_x, F_y, τ)` produced by coil `i` at 1 A.
pub fn unit_wrench(
    cfg: &CoilConfig,
    i: usize,
    agent: &AgentState,
    params: &AgentParams,
) -> Result<Vector3<f64>> {
    let (b, grad) = cfg.field_and_gradient(i, &agent.position())?;
    Ok(wrench_from_field(&b, &grad, agent.theta, params))
}

/// The 3×n input matrix `g(X)`: column i is coil i's unit wrench divided
/// by the matching friction coefficient.
pub fn actuation_matrix(
    cfg: &CoilConfig,
    agent: &AgentState,
    params: &AgentParams,
) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(3, cfg.count());
    for i in 0..cfg.count() {
        let w = unit_wrench(cfg, i, agent, params)?;
        g[(0, i)] = w.x / params.c_t;
        g[(1, i)] = w.y / params.c_t;
        g[(2, i)] = w.z / params.c_r;
    }
    Ok(g)
}

/// Driftless rig model with identity task map.
#[derive(Debug, Clone, PartialEq)]
pub struct MagneticRig {
    pub coils: CoilConfig,
    pub params: AgentParams,
}

impl MagneticRig {
    pub fn new(coils: CoilConfig, params: AgentParams) -> Result<Self> {
        coils.validate()?;
        params.validate()?;
        Ok(Self { coils, params })
    }
}

impl SystemModel for MagneticRig {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        self.coils.count()
    }

    fn task_dim(&self) -> usize {
        3
    }

    fn drift(&self, _x: &StateVector) -> DVector<f64> {
        DVector::zeros(3)
    }

    /// Poses on top of a coil give a non-finite matrix, which the
    /// integrator reports as a blowup.
    fn input_matrix(&self, x: &StateVector) -> DMatrix<f64> {
        actuation_matrix(&self.coils, &AgentState::from_vector(x), &self.params)
            .unwrap_or_else(|_| DMatrix::from_element(3, self.coils.count(), f64::NAN))
    }

    fn task_map(&self, x: &StateVector) -> TaskOutput {
        x.clone()
    }

    fn task_jacobian(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::identity(3, 3)
    }
}

/// Pose error `reference − pose` with the angle wrapped to `(−π, π]`.
pub fn pose_error(pose: &AgentState, pose_ref: &AgentState) -> Vector3<f64> {
    Vector3::new(
        pose_ref.x - pose.x,
        pose_ref.y - pose.y,
        wrap_angle(pose_ref.theta - pose.theta),
    )
}

/// Minimum-norm currents for `ẋ_des = ṗ_ref + K (p_ref − p)`.
pub fn reference_current_controller(
    cfg: &CoilConfig,
    agent: &AgentState,
    params: &AgentParams,
    pose_ref: &AgentState,
    pose_ref_rate: &Vector3<f64>,
    gains: &Vector3<f64>,
) -> Result<InputVector> {
    let g = actuation_matrix(cfg, agent, params)?;
    let e = pose_error(agent, pose_ref);
    let desired = pose_ref_rate + gains.component_mul(&e);
    Ok(pseudo_inverse(&g, PINV_TOL) * DVector::from_column_slice(desired.as_slice()))
}

/// Unit-cube map for poses: the workspace square in `(x, y)` and one turn
/// `[−π, π]` in `θ`.
pub fn workspace_scale() -> UnitCubeScale {
    let r = WORKSPACE_DIAMETER / 2.0;
    UnitCubeScale::from_ranges([-r, -r, -PI], [r, r, PI]).expect("finite ranges")
}

/// Default sampling grid for the singular set: the workspace square at
/// 40 × 40 and one heading turn at 60 nodes.
pub fn default_singularity_grid() -> GridSpec {
    let r = WORKSPACE_DIAMETER / 2.0;
    GridSpec::new(vec![
        GridAxis::new(-r, r, 40),
        GridAxis::new(-r, r, 40),
        GridAxis::new(-PI, PI, 60),
    ])
    .expect("valid default grid")
}

/// Singular-set obstacles as a mesh in unit-cube pose coordinates.
#[derive(Debug, Clone)]
pub struct ObstacleSet {
    /// Isosurface `σ_min = iso` of the heading-periodic field, replicated
    /// one turn either side so distances across `θ = ±π` are correct.
    pub mesh: TriangleMesh,
    pub scale: UnitCubeScale,
    /// Minimum allowed distance to the surface, unit-cube units.
    pub delta: f64,
    /// At most this many nearest components contribute a barrier row.
    pub max_rows: usize,
}

impl ObstacleSet {
    /// An obstacle-free set, for unconstrained runs.
    pub fn empty(scale: UnitCubeScale) -> Self {
        Self {
            mesh: TriangleMesh::empty(),
            scale,
            delta: 0.0,
            max_rows: 0,
        }
    }

    /// Samples `σ_min` on `grid` (third axis must span one heading turn),
    /// replicates it at `θ ± 2π`, and meshes the level set `iso`. `delta`
    /// is given in grid cells of the coarsest axis.
    pub fn build(
        rig: &MagneticRig,
        grid: &GridSpec,
        iso: f64,
        delta_cells: f64,
        max_rows: usize,
    ) -> Result<Self> {
        let field = sigma_min_field(rig, grid)?;
        Self::from_field(&field, iso, delta_cells, max_rows)
    }

    pub fn from_field(
        field: &GridField,
        iso: f64,
        delta_cells: f64,
        max_rows: usize,
    ) -> Result<Self> {
        let grid = &field.grid;
        if grid.dim() != 3 {
            return Err(Error::MalformedGrid(format!(
                "pose grid needs 3 axes, got {}",
                grid.dim()
            )));
        }
        let heading = grid.axes[2];
        if ((heading.max - heading.min) - 2.0 * PI).abs() > 1e-9 {
            return Err(Error::MalformedGrid(format!(
                "heading axis must span one turn, spans {}",
                heading.max - heading.min
            )));
        }
        if !(delta_cells >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "delta_cells",
                reason: format!("must be non-negative, got {delta_cells}"),
            });
        }
        let scale = UnitCubeScale::from_ranges(
            [grid.axes[0].min, grid.axes[1].min, heading.min],
            [grid.axes[0].max, grid.axes[1].max, heading.max],
        )?;
        let period = heading.count - 1;
        let unit = |a: &GridAxis, k: usize| {
            GridAxis::new(
                (a.min - scale.min[k]) / scale.extent[k],
                (a.max - scale.min[k]) / scale.extent[k],
                a.count,
            )
        };
        let tiled = GridSpec::new(vec![
            unit(&grid.axes[0], 0),
            unit(&grid.axes[1], 1),
            GridAxis::new(-1.0, 2.0, 3 * period + 1),
        ])?;
        let mut values = Vec::with_capacity(tiled.node_count());
        let counts = grid.counts();
        for i in 0..counts[0] {
            for j in 0..counts[1] {
                for k in 0..=3 * period {
                    values.push(field.at(&[i, j, k % period]));
                }
            }
        }
        let tiled = GridField::new(tiled, values)?;
        let mesh = extract_boundary_mesh(&tiled, iso)?;
        let cell = grid
            .axes
            .iter()
            .zip(scale.extent)
            .map(|(a, e)| a.spacing() / e)
            .fold(0.0, f64::max);
        Ok(Self {
            mesh,
            scale,
            delta: delta_cells * cell,
            max_rows,
        })
    }

    /// Pose in unit-cube coordinates with the heading wrapped into the
    /// base turn.
    pub fn unit_pose(&self, x: &StateVector) -> Point3 {
        let lo = self.scale.min[2];
        let theta = lo + (x[2] - lo).rem_euclid(2.0 * PI);
        self.scale.to_unit(&Point3::new(x[0], x[1], theta))
    }

    /// Nearest point of the closest `max_rows` components, ordered by
    /// component id.
    pub fn nearest(&self, x: &StateVector) -> Vec<ClosestPointResult> {
        if self.max_rows == 0 {
            return Vec::new();
        }
        let q = self.unit_pose(x);
        let mut hits = self.mesh.closest_per_component(&q);
        hits.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.component_id.cmp(&b.component_id))
        });
        hits.truncate(self.max_rows);
        hits.sort_by_key(|h| h.component_id);
        hits
    }

    /// Smallest barrier value over all components, with its component.
    pub fn h_min(&self, x: &StateVector) -> Option<(f64, usize)> {
        let q = self.unit_pose(x);
        self.nearest(x)
            .iter()
            .map(|r| {
                let (h, _) = distance_barrier_value_and_gradient(&q, r, self.delta);
                (h, r.component_id)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// One distance-barrier row per nearby obstacle component.
#[derive(Debug, Clone, Copy)]
pub struct ObstacleBarrier<'a> {
    pub obstacles: &'a ObstacleSet,
    pub alpha: ClassK,
}

pub const OBSTACLE_LABEL: &str = "obstacle";

impl Barrier for ObstacleBarrier<'_> {
    fn constraints(
        &self,
        model: &dyn SystemModel,
        x: &StateVector,
    ) -> Result<Vec<BarrierConstraint>> {
        let set = self.obstacles;
        let q = DVector::from_column_slice(set.unit_pose(x).as_slice());
        let metric = DVector::from_column_slice(set.scale.metric().as_slice());
        let phi = mapping_matrix(model, x)?;
        set.nearest(x)
            .iter()
            .map(|r| {
                assemble_distance_barrier(
                    &q,
                    &DVector::from_column_slice(r.point.as_slice()),
                    &metric,
                    set.delta,
                    &self.alpha,
                    &phi,
                    format!("{OBSTACLE_LABEL}{}", r.component_id),
                )
            })
            .collect()
    }
}

/// Timed pose reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PosePath {
    /// Linear interpolation between timed poses; the last pose is held.
    Waypoints { points: Vec<TimedPose> },
    /// Counter-clockwise circle at constant heading.
    Circle {
        center: [f64; 2],
        radius: f64,
        period: f64,
        theta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedPose {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PosePath {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidParameter {
            name: "path",
            reason,
        };
        match self {
            PosePath::Waypoints { points } => {
                if points.is_empty() {
                    return Err(invalid("needs at least one pose".into()));
                }
                for w in points.windows(2) {
                    if !(w[1].t > w[0].t) {
                        return Err(invalid(format!(
                            "times must increase ({} then {})",
                            w[0].t, w[1].t
                        )));
                    }
                }
                for p in points {
                    if !AgentState::new(p.x, p.y, p.theta).in_workspace() {
                        return Err(invalid(format!(
                            "pose ({}, {}) is outside the workspace",
                            p.x, p.y
                        )));
                    }
                }
            }
            PosePath::Circle {
                center,
                radius,
                period,
                ..
            } => {
                if !(*period > 0.0) || !(*radius >= 0.0) {
                    return Err(invalid("circle needs a positive period and radius".into()));
                }
                if Vector2::from(*center).norm() + radius > WORKSPACE_DIAMETER / 2.0 {
                    return Err(invalid("circle leaves the workspace".into()));
                }
            }
        }
        Ok(())
    }

    /// Reference pose and its time derivative at `t`.
    pub fn sample(&self, t: f64) -> (AgentState, Vector3<f64>) {
        match self {
            PosePath::Waypoints { points } => {
                let first = points[0];
                if t <= first.t {
                    return (
                        AgentState::new(first.x, first.y, first.theta),
                        Vector3::zeros(),
                    );
                }
                for w in points.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    if t < b.t {
                        let dt = b.t - a.t;
                        let s = (t - a.t) / dt;
                        let pose = AgentState::new(
                            a.x + s * (b.x - a.x),
                            a.y + s * (b.y - a.y),
                            a.theta + s * (b.theta - a.theta),
                        );
                        let rate = Vector3::new(b.x - a.x, b.y - a.y, b.theta - a.theta) / dt;
                        return (pose, rate);
                    }
                }
                let last = points[points.len() - 1];
                (
                    AgentState::new(last.x, last.y, last.theta),
                    Vector3::zeros(),
                )
            }
            PosePath::Circle {
                center,
                radius,
                period,
                theta,
            } => {
                let w = 2.0 * PI / period;
                let (s, c) = (w * t).sin_cos();
                (
                    AgentState::new(center[0] + radius * c, center[1] + radius * s, *theta),
                    Vector3::new(-radius * w * s, radius * w * c, 0.0),
                )
            }
        }
    }

    pub fn duration(&self) -> f64 {
        match self {
            PosePath::Waypoints { points } => points[points.len() - 1].t,
            PosePath::Circle { period, .. } => *period,
        }
    }

    /// Running stitch across an incision along the x-axis: at each entry
    /// point the needle crosses from `y = −half_width` to `+half_width`,
    /// then travels back under the incision to the next entry point.
    pub fn stitch(entries: &[f64], half_width: f64, theta: f64, speed: f64, dwell: f64) -> Self {
        let mut points = Vec::new();
        let mut t = 0.0;
        let mut push = |x: f64, y: f64, t: f64| points.push(TimedPose { t, x, y, theta });
        let mut at = (entries[0], -half_width);
        push(at.0, at.1, t);
        t += dwell;
        push(at.0, at.1, t);
        for (n, &x) in entries.iter().enumerate() {
            if n > 0 {
                let next = (x, -half_width);
                t += ((next.0 - at.0).powi(2) + (next.1 - at.1).powi(2)).sqrt() / speed;
                push(next.0, next.1, t);
            }
            t += 2.0 * half_width / speed;
            push(x, half_width, t);
            at = (x, half_width);
        }
        t += dwell;
        push(at.0, at.1, t);
        PosePath::Waypoints { points }
    }
}

/// Closed-loop settings for the rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagneticScenario {
    pub start: AgentState,
    pub path: PosePath,
    /// Tracking gains on `(x, y, θ)`, 1/s.
    pub gains: [f64; 3],
    /// Velocity weights on unit-cube pose rates.
    pub weight: [f64; 3],
    /// Diagonal current regularisation `Γ`.
    pub regularization: f64,
    /// Current bound, A.
    pub current_limit: f64,
    pub alpha: ClassK,
    pub cbf_enabled: bool,
}

impl MagneticScenario {
    /// Three-bite running stitch across a 10 mm incision at
    /// `x ∈ {−6, 0, 6} mm`, with a reference heading just off the
    /// incision direction.
    pub fn suture(cbf_enabled: bool) -> Self {
        let path = PosePath::stitch(&[-6e-3, 0.0, 6e-3], 5e-3, 0.1, 2e-3, 1.0);
        let (start, _) = path.sample(0.0);
        Self {
            start,
            path,
            gains: [2.0, 2.0, 2.0],
            weight: [100.0, 100.0, 1.0],
            regularization: 1e-6,
            current_limit: 4.0,
            alpha: ClassK::Quadratic { gamma: 2000.0 },
            cbf_enabled,
        }
    }

    /// One lap of an 8 mm circle, heading held at 45°.
    pub fn circle() -> Self {
        Self {
            start: AgentState::new(8e-3, 0.0, PI / 4.0),
            path: PosePath::Circle {
                center: [0.0, 0.0],
                radius: 8e-3,
                period: 20.0,
                theta: PI / 4.0,
            },
            cbf_enabled: false,
            ..Self::suture(false)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.path.validate()?;
        if !self.start.in_workspace() {
            return Err(Error::InvalidParameter {
                name: "start",
                reason: "start pose is outside the workspace".into(),
            });
        }
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {v}"),
                })
            }
        };
        for g in self.gains {
            positive("gains", g)?;
        }
        for w in self.weight {
            positive("weight", w)?;
        }
        positive("regularization", self.regularization)?;
        positive("current_limit", self.current_limit)?;
        self.alpha.validate()
    }

    /// `W` on raw pose rates: the unit-cube weights pulled back through the
    /// per-axis scale.
    pub fn raw_weight(&self) -> DMatrix<f64> {
        let s = workspace_scale().metric();
        DMatrix::from_diagonal(&DVector::from_fn(3, |k, _| self.weight[k] * s[k] * s[k]))
    }
}

/// Columns of a rig trajectory log.
pub const MAGNETIC_LOG_COLUMNS: [&str; 13] = [
    "t",
    "x",
    "y",
    "theta",
    "I1",
    "I2",
    "I3",
    "I4",
    "h_min",
    "ex",
    "ey",
    "etheta",
    "active_obstacle",
];

/// Closed loop: pseudoinverse tracking currents, filtered through one
/// distance barrier per nearby obstacle, with the current box inside the
/// QP. Infeasible steps hold the previous currents. `h_min` is `inf` when
/// there are no obstacles and `active_obstacle` is −1 when no row binds.
pub fn run_suturing_scenario(
    rig: &MagneticRig,
    scenario: &MagneticScenario,
    obstacles: &ObstacleSet,
    sim: &SimulatorConfig,
) -> Result<TrajectoryLog> {
    rig.coils.validate()?;
    rig.params.validate()?;
    scenario.validate()?;
    sim.validate()?;
    let n = rig.coils.count();
    if n != 4 {
        return Err(Error::DimensionMismatch {
            context: "rig coil count",
            expected: "4".into(),
            actual: n.to_string(),
        });
    }
    let mut x = scenario.start.to_vector();
    if scenario.cbf_enabled {
        if let Some((h, c)) = obstacles.h_min(&x) {
            if h < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "start",
                    reason: format!("start pose is inside the margin of obstacle {c} (h = {h:e})"),
                });
            }
        }
    }
    let bounds = InputBounds::symmetric(n, scenario.current_limit)?;
    let cost = CostSpec::new(
        scenario.raw_weight(),
        Some(DMatrix::identity(n, n) * scenario.regularization),
    );
    let gains = Vector3::from(scenario.gains);
    let barrier = ObstacleBarrier {
        obstacles,
        alpha: scenario.alpha,
    };

    let mut log = TrajectoryLog::new(&MAGNETIC_LOG_COLUMNS);
    let mut u_prev = DVector::zeros(n);
    let steps = sim.steps();
    for k in 0..=steps {
        let t = sim.time_at(k);
        let pose = AgentState::from_vector(&x);
        let (pose_ref, rate_ref) = scenario.path.sample(t);
        let u_ref = reference_current_controller(
            &rig.coils,
            &pose,
            &rig.params,
            &pose_ref,
            &rate_ref,
            &gains,
        )?;
        let mut active = -1.0;
        let mut h_min = None;
        let candidate = if scenario.cbf_enabled {
            match safety_filter(rig, &x, &u_ref, &[&barrier], &cost, Some(&bounds)) {
                Ok(out) => {
                    if let Some(&row) = out.active_barriers().first() {
                        active = out.constraints[row]
                            .label
                            .strip_prefix(OBSTACLE_LABEL)
                            .and_then(|c| c.parse::<f64>().ok())
                            .unwrap_or(-1.0);
                    }
                    // The rows cover the nearest components, so their
                    // minimum is the global one.
                    h_min = out.h_values().into_iter().reduce(f64::min);
                    log.diagnostics
                        .push(StepDiagnostics::from_filter(t, &u_ref, &out));
                    out.u
                }
                Err(Error::QpInfeasible { .. }) => {
                    log.event(t, EventKind::QpInfeasible, "holding previous currents");
                    u_prev.clone()
                }
                Err(e) => return Err(e),
            }
        } else {
            u_ref
        };
        let (u, clipped) = bounds.saturate(&candidate);
        if clipped {
            log.event(
                t,
                EventKind::InputClipped,
                "currents saturated at the bound",
            );
        }
        let h_min = h_min
            .or_else(|| obstacles.h_min(&x).map(|(h, _)| h))
            .unwrap_or(f64::INFINITY);
        let e = pose_error(&pose, &pose_ref);
        log.push(vec![
            t, pose.x, pose.y, pose.theta, u[0], u[1], u[2], u[3], h_min, e.x, e.y, e.z, active,
        ]);
        if k < steps {
            x = step(rig, &x, &u, sim)?;
        }
        u_prev = u;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn v2(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }

    #[test]
    fn on_axis_and_equatorial_fields() {
        let (m0, d) = (2.0, 0.05);
        let m = v2(m0, 0.0);
        let axial = dipole_field(&Vector2::zeros(), &m, &v2(d, 0.0)).unwrap();
        assert_relative_eq!(
            axial,
            v2(MU0_OVER_4PI * 2.0 * m0 / d.powi(3), 0.0),
            max_relative = 1e-14
        );
        let eq = dipole_field(&Vector2::zeros(), &m, &v2(0.0, d)).unwrap();
        assert_relative_eq!(eq.x, -MU0_OVER_4PI * m0 / d.powi(3), max_relative = 1e-14);
        assert!(eq.y.abs() < 1e-20);
    }

    #[test]
    fn source_distance_is_checked() {
        let r = dipole_field(&v2(0.1, 0.1), &v2(1.0, 0.0), &v2(0.1, 0.1));
        assert!(matches!(r, Err(Error::TooCloseToSource { .. })));
        assert!(field_gradient(&v2(0.0, 0.0), &v2(1.0, 0.0), &v2(1e-10, 0.0)).is_err());
    }

    #[test]
    fn gradient_is_divergence_and_curl_free() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let r = Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            );
            if r.norm() < 0.01 {
                continue;
            }
            let m = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                0.0,
            );
            let g = dipole_gradient_3d(1.0, &r, &m);
            let scale = g.amax();
            assert!(g.trace().abs() < 1e-12 * scale);
            assert!((g - g.transpose()).amax() < 1e-12 * scale);
        }
    }

    #[test]
    fn parallel_moment_has_no_torque() {
        let b = v2(0.3, 0.4);
        let w = wrench_from_field(
            &b,
            &Matrix2::zeros(),
            b.y.atan2(b.x),
            &AgentParams::default(),
        );
        assert!(w.z.abs() < 1e-18);
    }

    #[test]
    fn uniform_field_gives_no_force() {
        for theta in [0.0, 1.0, -2.5] {
            let w = wrench_from_field(
                &v2(1e-3, -2e-3),
                &Matrix2::zeros(),
                theta,
                &AgentParams::default(),
            );
            assert_eq!((w.x, w.y), (0.0, 0.0));
        }
    }

    #[test]
    fn wrench_is_linear_in_moment() {
        let cfg = CoilConfig::default();
        let mut doubled = cfg.clone();
        doubled.moments[1] = [2.0 * cfg.moments[1][0], 2.0 * cfg.moments[1][1]];
        let agent = AgentState::new(0.003, -0.004, 0.7);
        let p = AgentParams::default();
        let g1 = actuation_matrix(&cfg, &agent, &p).unwrap();
        let g2 = actuation_matrix(&doubled, &agent, &p).unwrap();
        assert_eq!(g2.column(1), g1.column(1) * 2.0);
        assert_eq!(g2.column(0), g1.column(0));
    }

    #[test]
    fn opposite_coils_mirror_at_centre() {
        let cfg = CoilConfig::default();
        let p = AgentParams::default();
        let theta = 0.4;
        let g = actuation_matrix(&cfg, &AgentState::new(0.0, 0.0, theta), &p).unwrap();
        // A half turn maps coil 1 onto coil 3 and flips the agent's moment.
        // Both the source moment and the offset change sign, so the field
        // negates while its Jacobian (and hence the force) is unchanged.
        let scale = g.amax();
        for (a, b) in [(0, 2), (1, 3)] {
            assert!((g[(0, a)] - g[(0, b)]).abs() < 1e-12 * scale);
            assert!((g[(1, a)] - g[(1, b)]).abs() < 1e-12 * scale);
            assert!((g[(2, a)] + g[(2, b)]).abs() < 1e-12 * scale);
        }
        assert!(g[(0, 0)].abs() > 1e-3 * scale);
    }

    #[test]
    fn zero_moment_gives_zero_column() {
        let mut cfg = CoilConfig::default();
        cfg.moments[2] = [0.0, 0.0];
        let g = actuation_matrix(
            &cfg,
            &AgentState::new(0.002, 0.001, 0.3),
            &AgentParams::default(),
        )
        .unwrap();
        assert!(g.column(2).iter().all(|v| *v == 0.0));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn coils_inside_workspace_are_rejected() {
        let mut cfg = CoilConfig::default();
        cfg.positions[0] = [0.01, 0.0];
        assert!(cfg.validate().is_err());
        assert!(CoilConfig::default().validate().is_ok());
    }

    #[test]
    fn controller_zero_at_reference() {
        let cfg = CoilConfig::default();
        let p = AgentParams::default();
        let pose = AgentState::new(0.004, 0.002, 0.5);
        let u = reference_current_controller(
            &cfg,
            &pose,
            &p,
            &pose,
            &Vector3::zeros(),
            &Vector3::repeat(2.0),
        )
        .unwrap();
        assert_eq!(u, DVector::zeros(4));
    }

    #[test]
    fn controller_wraps_heading_error() {
        let e = pose_error(
            &AgentState::new(0.0, 0.0, 3.0),
            &AgentState::new(0.0, 0.0, -3.0),
        );
        assert_relative_eq!(e.z, 2.0 * std::f64::consts::PI - 6.0, epsilon = 1e-12);
    }

    #[test]
    fn waypoint_path_interpolates_and_holds() {
        let path = PosePath::Waypoints {
            points: vec![
                TimedPose {
                    t: 0.0,
                    x: 0.0,
                    y: 0.0,
                    theta: 0.0,
                },
                TimedPose {
                    t: 2.0,
                    x: 2e-3,
                    y: -4e-3,
                    theta: 1.0,
                },
            ],
        };
        let (p, r) = path.sample(0.5);
        assert_relative_eq!(p.x, 0.5e-3, epsilon = 1e-18);
        assert_relative_eq!(p.theta, 0.25);
        assert_relative_eq!(r, Vector3::new(1e-3, -2e-3, 0.5));
        let (end, rate) = path.sample(9.0);
        assert_eq!((end.x, end.y, end.theta), (2e-3, -4e-3, 1.0));
        assert_eq!(rate, Vector3::zeros());
    }

    #[test]
    fn stitch_crosses_incision_at_each_entry() {
        let path = PosePath::stitch(&[-6e-3, 0.0, 6e-3], 5e-3, 0.1, 2e-3, 1.0);
        path.validate().unwrap();
        let PosePath::Waypoints { points } = &path else {
            panic!("stitch is a waypoint path")
        };
        let far_side: Vec<f64> = points.iter().filter(|p| p.y > 0.0).map(|p| p.x).collect();
        assert_eq!(far_side, vec![-6e-3, 0.0, 6e-3, 6e-3]);
        assert!(points.iter().all(|p| p.theta == 0.1));
        // 3 crossings of 10 mm, 2 returns of √(6² + 10²) mm, 1 s dwell at each end
        let expected = 2.0 + (30.0 + 2.0 * 136f64.sqrt()) / 2.0;
        assert_relative_eq!(path.duration(), expected, epsilon = 1e-12);
    }

    #[test]
    fn circle_rate_is_tangent() {
        let path = MagneticScenario::circle().path;
        let (p, r) = path.sample(3.0);
        assert!(r.xy().dot(&p.position()).abs() < 1e-18);
        assert_relative_eq!(r.xy().norm(), 2.0 * PI * 8e-3 / 20.0, epsilon = 1e-15);
    }

    #[test]
    fn path_outside_workspace_is_rejected() {
        let mut s = MagneticScenario::circle();
        s.path = PosePath::Circle {
            center: [0.0, 0.0],
            radius: 0.02,
            period: 10.0,
            theta: 0.0,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn raw_weight_pulls_back_unit_weights() {
        let w = MagneticScenario::suture(true).raw_weight();
        assert_relative_eq!(w[(0, 0)], 100.0 / 0.035f64.powi(2), max_relative = 1e-12);
        assert_relative_eq!(w[(2, 2)], 1.0 / (2.0 * PI).powi(2), max_relative = 1e-12);
    }

    #[test]
    fn filter_without_obstacles_passes_reference_through() {
        let rig = MagneticRig::new(CoilConfig::default(), AgentParams::default()).unwrap();
        let sim = SimulatorConfig::new(1e-2, 2.0, crate::dynamics::Integrator::Rk4).unwrap();
        let none = ObstacleSet::empty(workspace_scale());
        let mut s = MagneticScenario::circle();
        let plain = run_suturing_scenario(&rig, &s, &none, &sim).unwrap();
        s.cbf_enabled = true;
        let filtered = run_suturing_scenario(&rig, &s, &none, &sim).unwrap();
        assert_eq!(plain.rows, filtered.rows);
        assert!(filtered.diagnostics.iter().all(|d| d.deviation == 0.0));
        assert_eq!(plain.len(), 201);
    }

    #[test]
    fn unit_pose_wraps_heading() {
        let set = ObstacleSet::empty(workspace_scale());
        let a = set.unit_pose(&DVector::from_vec(vec![0.0, 0.0, 0.5]));
        let b = set.unit_pose(&DVector::from_vec(vec![0.0, 0.0, 0.5 + 4.0 * PI]));
        assert_relative_eq!(a, b, epsilon = 1e-12);
        assert_relative_eq!(
            a,
            Point3::new(0.5, 0.5, 0.5 + 0.5 / (2.0 * PI)),
            epsilon = 1e-12
        );
    }
}
