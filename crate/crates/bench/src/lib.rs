//! Fixed inputs for the benchmarks, seeded so runs compare like with like.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use singular_cbf::magnetic::default_singularity_grid;
use singular_cbf::{
    extract_boundary_mesh, AgentParams, BarrierConstraint, CoilConfig, GridAxis, GridField,
    GridSpec, MagneticRig, ObstacleSet, Point3, QpProblem, TriangleMesh,
};

pub fn rng() -> StdRng {
    StdRng::seed_from_u64(0x5eed)
}

/// Strictly convex QP in `m` inputs with `k` rows sharing a feasible point.
pub fn qp(rng: &mut StdRng, m: usize, k: usize) -> QpProblem {
    let l = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let q = &l * l.transpose() + DMatrix::identity(m, m) * 0.1;
    let u_ref = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
    let inside = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let rows = (0..k)
        .map(|i| {
            let a = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let b = a.dot(&inside) - rng.random_range(0.0..0.5);
            BarrierConstraint::new(a, b, 0.0, format!("c{i}"))
        })
        .collect();
    QpProblem::new(q, u_ref).with_constraints(rows)
}

pub fn matrix(rng: &mut StdRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Marching-cubes sphere of radius 0.35 in the unit cube, `n` nodes per
/// axis; one connected component.
pub fn sphere(n: usize) -> TriangleMesh {
    let axis = GridAxis::new(0.0, 1.0, n);
    let grid = GridSpec::new(vec![axis; 3]).expect("valid grid");
    let step = axis.spacing();
    let mut values = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p = Point3::new(i as f64, j as f64, k as f64) * step - Point3::repeat(0.5);
                values.push(p.norm() - 0.35);
            }
        }
    }
    extract_boundary_mesh(&GridField::new(grid, values).expect("sized field"), 0.0).expect("mesh")
}

pub fn query_points(rng: &mut StdRng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
        .collect()
}

pub fn rig() -> MagneticRig {
    MagneticRig::new(CoilConfig::default(), AgentParams::default()).expect("default rig")
}

/// The default sampling grid with every axis `1/factor` as fine.
pub fn coarse_grid(factor: usize) -> GridSpec {
    let g = default_singularity_grid();
    GridSpec::new(
        g.axes
            .iter()
            .map(|a| GridAxis::new(a.min, a.max, a.count / factor))
            .collect(),
    )
    .expect("valid grid")
}

/// Obstacles with the default settings on the full grid.
pub fn obstacles(rig: &MagneticRig) -> ObstacleSet {
    ObstacleSet::build(rig, &default_singularity_grid(), 1e-3, 1.0, 16).expect("obstacles build")
}
