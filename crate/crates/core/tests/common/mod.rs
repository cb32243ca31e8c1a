//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use singular_cbf::{BarrierConstraint, QpProblem};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut StdRng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random orthogonal matrix from the QR factor of a random matrix.
pub fn random_rotation(rng: &mut StdRng, n: usize) -> DMatrix<f64> {
    random_matrix(rng, n, n).qr().q()
}

/// Squared singular values of `phi`, ascending, padded with zeros to the
/// Gram size `min(d, m)`.
pub fn squared_singular_values(phi: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = phi
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .map(|v| v * v)
        .collect();
    s.sort_by(f64::total_cmp);
    s
}

pub fn sigma_min_svd(phi: &DMatrix<f64>) -> f64 {
    phi.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Random strictly convex QP whose constraints share a feasible point.
pub fn random_qp(rng: &mut StdRng) -> QpProblem {
    let m = rng.random_range(1..=4);
    let l = random_matrix(rng, m, m);
    let q = &l * l.transpose() + DMatrix::identity(m, m) * 0.1;
    let u_ref = random_vector(rng, m, 2.0);
    let inside = random_vector(rng, m, 1.0);
    let k = rng.random_range(0..=5);
    let constraints = (0..k)
        .map(|i| {
            let a = random_vector(rng, m, 1.0);
            let b = a.dot(&inside) - rng.random_range(0.0..0.5);
            BarrierConstraint::new(a, b, 0.0, format!("c{i}"))
        })
        .collect();
    QpProblem::new(q, u_ref).with_constraints(constraints)
}

/// Exhaustive active-set enumeration: solves the equality-constrained
/// problem for every subset of rows and keeps the best feasible candidate.
pub fn brute_force_qp(problem: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let rows = problem.rows();
    let m = problem.dim();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << rows.len()) {
        let active: Vec<usize> = (0..rows.len()).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > m {
            continue;
        }
        let n = m + active.len();
        let mut kkt = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        kkt.view_mut((0, 0), (m, m)).copy_from(&problem.q);
        rhs.rows_mut(0, m).copy_from(&(&problem.q * &problem.u_ref));
        for (k, &i) in active.iter().enumerate() {
            for j in 0..m {
                kkt[(j, m + k)] = -rows[i].a[j];
                kkt[(m + k, j)] = rows[i].a[j];
            }
            rhs[m + k] = rows[i].b;
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            continue;
        };
        let u = sol.rows(0, m).into_owned();
        let feasible = rows
            .iter()
            .all(|r| r.a.dot(&u) >= r.b - 1e-9 * (1.0 + r.b.abs()));
        if feasible {
            let f = problem.objective(&u);
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((u, f));
            }
        }
    }
    best
}

/// Best feasible objective on a regular grid over `[lo, hi]^m` (m ≤ 2).
pub fn grid_search_qp(problem: &QpProblem, lo: f64, hi: f64, n: usize) -> Option<f64> {
    let rows = problem.rows();
    let m = problem.dim();
    let axis: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let mut best: Option<f64> = None;
    let mut visit = |u: DVector<f64>| {
        if rows.iter().all(|r| r.a.dot(&u) >= r.b) {
            let f = problem.objective(&u);
            best = Some(best.map_or(f, |b: f64| b.min(f)));
        }
    };
    match m {
        1 => axis.iter().for_each(|&a| visit(DVector::from_vec(vec![a]))),
        2 => {
            for &a in &axis {
                for &b in &axis {
                    visit(DVector::from_vec(vec![a, b]));
                }
            }
        }
        _ => panic!("grid search only covers m ≤ 2"),
    }
    best
}
