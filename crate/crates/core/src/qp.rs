//! Dense strictly convex QP with linear inequality constraints.
//!
//! Solves `min ½(u − u_ref)ᵀ Q (u − u_ref)` subject to `aᵢᵀu ≥ bᵢ` and an
//! optional input box, using the dual active-set method of Goldfarb and
//! Idnani: start from the unconstrained minimiser `u_ref`, add the most
//! violated constraint, take primal/dual steps along the equality-constrained
//! KKT directions and drop constraints whose multipliers would turn negative.
//! Infeasibility is certified when a violated constraint cannot be reduced
//! by any step.
//!
//! Problems here have at most a handful of variables and a few dozen rows,
//! so the projected operators are rebuilt densely at every iteration.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cbf::BarrierConstraint;
use crate::dynamics::InputBounds;
use crate::error::{check_len, check_shape, Error, Result};
use crate::spectrum::symmetric_eigen;

const MAX_CONSTRAINTS: usize = 64;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub u_ref: DVector<f64>,
    pub constraints: Vec<BarrierConstraint>,
    pub bounds: Option<InputBounds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    /// Indices into the row list: barrier constraints first, then the
    /// finite lower bounds, then the finite upper bounds.
    pub active_set: Vec<usize>,
    /// Multiplier of each entry of `active_set`.
    pub multipliers: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

/// One `aᵀu ≥ b` row of the assembled problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub a: DVector<f64>,
    pub b: f64,
}

impl QpProblem {
    pub fn new(q: DMatrix<f64>, u_ref: DVector<f64>) -> Self {
        Self {
            q,
            u_ref,
            constraints: Vec::new(),
            bounds: None,
        }
    }

    pub fn with_constraints(mut self, constraints: Vec<BarrierConstraint>) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn with_bounds(mut self, bounds: Option<InputBounds>) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn dim(&self) -> usize {
        self.u_ref.len()
    }

    /// All inequality rows in solver order.
    pub fn rows(&self) -> Vec<Row> {
        let m = self.dim();
        let mut rows: Vec<Row> = self
            .constraints
            .iter()
            .map(|c| Row {
                a: c.a.clone(),
                b: c.b,
            })
            .collect();
        if let Some(bounds) = &self.bounds {
            for (j, lo) in bounds.lower.iter().enumerate() {
                if lo.is_finite() {
                    let mut a = DVector::zeros(m);
                    a[j] = 1.0;
                    rows.push(Row { a, b: *lo });
                }
            }
            for (j, hi) in bounds.upper.iter().enumerate() {
                if hi.is_finite() {
                    let mut a = DVector::zeros(m);
                    a[j] = -1.0;
                    rows.push(Row { a, b: -hi });
                }
            }
        }
        rows
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        let e = u - &self.u_ref;
        0.5 * e.dot(&(&self.q * &e))
    }

    fn validate(&self) -> Result<()> {
        let m = self.dim();
        check_shape("QP cost", (m, m), self.q.shape())?;
        for c in &self.constraints {
            check_len("QP constraint row", m, c.a.len())?;
            if !c.b.is_finite() || c.a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "constraints",
                    reason: format!("constraint `{}` has non-finite entries", c.label),
                });
            }
        }
        if let Some(bounds) = &self.bounds {
            check_len("QP bounds", m, bounds.dim())?;
        }
        if self.u_ref.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "u_ref",
                reason: "reference input has non-finite entries".into(),
            });
        }
        Ok(())
    }
}

/// KKT residuals of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    /// `‖Q(u − u_ref) − Σ μᵢ aᵢ‖`
    pub stationarity: f64,
    /// `max(0, max bᵢ − aᵢᵀu)`
    pub primal: f64,
    /// `max |μᵢ (aᵢᵀu − bᵢ)|`
    pub complementarity: f64,
    /// `max(0, −min μᵢ)`
    pub dual: f64,
}

pub fn kkt_residuals(problem: &QpProblem, solution: &QpSolution) -> KktResiduals {
    let rows = problem.rows();
    let mut grad = &problem.q * (&solution.u - &problem.u_ref);
    let mut complementarity = 0.0f64;
    let mut dual = 0.0f64;
    for (&i, &mu) in solution.active_set.iter().zip(&solution.multipliers) {
        grad -= &rows[i].a * mu;
        complementarity =
            complementarity.max((mu * (rows[i].a.dot(&solution.u) - rows[i].b)).abs());
        dual = dual.max(-mu);
    }
    let primal = rows
        .iter()
        .map(|r| r.b - r.a.dot(&solution.u))
        .fold(0.0f64, f64::max);
    KktResiduals {
        stationarity: grad.norm(),
        primal,
        complementarity,
        dual,
    }
}

/// Relative size of `n⁺ᵀHn⁺` below which the new row counts as dependent.
const DEPENDENCE_TOL: f64 = 1e-10;

fn violation_tol(row: &Row, x: &DVector<f64>) -> f64 {
    1e-12 * (1.0 + row.b.abs() + row.a.norm() * x.norm())
}

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    problem.validate()?;
    let m = problem.dim();
    let spectrum = symmetric_eigen(&problem.q)?;
    let min_eig = spectrum.smallest();
    if !(min_eig > 0.0) {
        return Err(Error::SingularCost {
            min_eigenvalue: min_eig,
        });
    }
    let rows = problem.rows();
    if rows.len() > MAX_CONSTRAINTS {
        return Err(Error::InvalidParameter {
            name: "constraints",
            reason: format!(
                "{} rows exceed the dense solver limit of {MAX_CONSTRAINTS}",
                rows.len()
            ),
        });
    }
    let q_inv = {
        let v = &spectrum.eigenvectors;
        let inv_diag = DMatrix::from_diagonal(&spectrum.eigenvalues.map(|l| 1.0 / l));
        let full = v * inv_diag * v.transpose();
        (&full + full.transpose()) * 0.5
    };

    let mut x = problem.u_ref.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let max_iterations = 50 * (rows.len() + m + 1);

    let infeasible = |x: DVector<f64>, active: &[usize], mult: &[f64], iterations| {
        Ok(finish(x, active, mult, QpStatus::Infeasible, iterations))
    };

    loop {
        // most violated inactive row, lowest index on ties
        let mut pick: Option<(usize, f64)> = None;
        for (i, row) in rows.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let s = row.a.dot(&x) - row.b;
            if s < -violation_tol(row, &x) && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((i, s));
            }
        }
        let Some((p, _)) = pick else {
            return Ok(finish(x, &active, &mult, QpStatus::Optimal, iterations));
        };
        let n_plus = &rows[p].a;
        let mut u_plus = mult.clone();
        u_plus.push(0.0);

        loop {
            iterations += 1;
            if iterations > max_iterations {
                log::warn!("active-set QP hit its iteration cap; reporting infeasible");
                return infeasible(x, &active, &mult, iterations);
            }
            let (z, r) = step_directions(&q_inv, &rows, &active, n_plus)?;
            let q = active.len();

            // partial step: first active multiplier to reach zero
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for j in 0..q {
                if r[j] > 0.0 {
                    let t = u_plus[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(j);
                    }
                }
            }

            // full step: makes row p active
            let zn = z.dot(n_plus);
            let reach = n_plus.dot(&(&q_inv * n_plus));
            let s_p = n_plus.dot(&x) - rows[p].b;
            // With a full active set z is zero in exact arithmetic; anything
            // left is rounding and must not be mistaken for a primal step.
            let t2 = if q < m && zn > DEPENDENCE_TOL * reach {
                -s_p / zn
            } else {
                f64::INFINITY
            };

            let t = t1.min(t2);
            if t.is_infinite() {
                return infeasible(x, &active, &mult, iterations);
            }

            for j in 0..q {
                u_plus[j] -= t * r[j];
            }
            u_plus[q] += t;

            if t2.is_infinite() {
                // dual step only; row p is dependent on the active set
                let k = drop_at.expect("finite partial step has an index");
                active.remove(k);
                u_plus.remove(k);
                continue;
            }

            x += &z * t;
            if t2 <= t1 {
                active.push(p);
                mult = u_plus;
                break;
            }
            let k = drop_at.expect("finite partial step has an index");
            active.remove(k);
            u_plus.remove(k);
        }
    }
}

/// Primal direction `z = H n⁺` and dual direction `r = N* n⁺` for the
/// current active set, where `H` projects `Q⁻¹` onto the null space of the
/// active rows.
fn step_directions(
    q_inv: &DMatrix<f64>,
    rows: &[Row],
    active: &[usize],
    n_plus: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = n_plus.len();
    let qn = q_inv * n_plus;
    if active.is_empty() {
        return Ok((qn, DVector::zeros(0)));
    }
    let mut n_act = DMatrix::zeros(m, active.len());
    for (col, &i) in active.iter().enumerate() {
        n_act.set_column(col, &rows[i].a);
    }
    let s = n_act.transpose() * q_inv * &n_act;
    let rhs = n_act.transpose() * &qn;
    let r = s
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter {
            name: "constraints",
            reason: "active constraint set became linearly dependent".into(),
        })?;
    let z = &qn - q_inv * (&n_act * &r);
    Ok((z, r))
}

fn finish(
    u: DVector<f64>,
    active: &[usize],
    mult: &[f64],
    status: QpStatus,
    iterations: usize,
) -> QpSolution {
    let mut pairs: Vec<(usize, f64)> = active
        .iter()
        .copied()
        .zip(mult.iter().map(|m| m.max(0.0)))
        .collect();
    pairs.sort_by_key(|(i, _)| *i);
    QpSolution {
        u,
        active_set: pairs.iter().map(|(i, _)| *i).collect(),
        multipliers: pairs.iter().map(|(_, m)| *m).collect(),
        status,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row(a: &[f64], b: f64) -> BarrierConstraint {
        BarrierConstraint::new(DVector::from_row_slice(a), b, 0.0, "row")
    }

    fn assert_kkt(p: &QpProblem, s: &QpSolution) {
        let k = kkt_residuals(p, s);
        assert!(k.stationarity <= 1e-7, "{k:?}");
        assert!(k.primal <= 1e-8, "{k:?}");
        assert!(k.complementarity <= 1e-7, "{k:?}");
        assert!(k.dual <= 0.0, "{k:?}");
    }

    #[test]
    fn unconstrained_returns_reference() {
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0]));
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.u, p.u_ref);
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn halfspace_projection() {
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0]))
            .with_constraints(vec![row(&[1.0, 1.0], 3.0)]);
        let s = solve_qp(&p).unwrap();
        assert_relative_eq!(s.u[0], 1.5, epsilon = 1e-14);
        assert_relative_eq!(s.u[1], 1.5, epsilon = 1e-14);
        assert_eq!(s.active_set, vec![0]);
        assert_relative_eq!(s.multipliers[0], 0.5, epsilon = 1e-14);
        assert_kkt(&p, &s);
    }

    #[test]
    fn satisfied_constraints_leave_reference_untouched() {
        let u_ref = DVector::from_vec(vec![0.3, -0.7]);
        let p = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            u_ref.clone(),
        )
        .with_constraints(vec![row(&[1.0, 0.0], -1.0), row(&[0.0, -1.0], 0.0)]);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.u, u_ref);
    }

    #[test]
    fn row_outside_the_box_is_infeasible() {
        // best reachable value of the row inside the box is 0.6 < 0.75
        let p = QpProblem::new(DMatrix::identity(4, 4), DVector::zeros(4))
            .with_constraints(vec![row(&[0.9, 0.01, -0.2, 0.09], 0.75)])
            .with_bounds(Some(InputBounds::symmetric(4, 0.5).unwrap()));
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let p = QpProblem::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_constraints(vec![row(&[1.0], 1.0), row(&[-1.0], 0.0)]);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn zero_row_with_positive_rhs_is_infeasible() {
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_constraints(vec![row(&[0.0, 0.0], 0.1)]);
        assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_constraints(vec![row(&[0.0, 0.0], -0.1)]);
        assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Optimal);
    }

    #[test]
    fn box_bounds_clip_like_projection_for_identity_cost() {
        let p = QpProblem::new(
            DMatrix::identity(3, 3),
            DVector::from_vec(vec![5.0, -6.0, 0.5]),
        )
        .with_bounds(Some(InputBounds::symmetric(3, 4.0).unwrap()));
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.u.as_slice(), &[4.0, -4.0, 0.5]);
        assert_kkt(&p, &s);
    }

    #[test]
    fn bound_and_barrier_conflict() {
        // u1 >= 5 but |u1| <= 4
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_constraints(vec![row(&[1.0, 0.0], 5.0)])
            .with_bounds(Some(InputBounds::symmetric(2, 4.0).unwrap()));
        assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn degenerate_duplicate_rows() {
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2)).with_constraints(vec![
            row(&[1.0, 1.0], 1.0),
            row(&[1.0, 1.0], 1.0),
            row(&[2.0, 2.0], 2.0),
        ]);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.u[0], 0.5, epsilon = 1e-12);
        assert_kkt(&p, &s);
    }

    #[test]
    fn scaling_the_cost_keeps_the_minimiser() {
        let q = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let u_ref = DVector::from_vec(vec![0.2, -0.4]);
        let rows = vec![row(&[1.0, 2.0], 1.0), row(&[-1.0, 0.5], 0.3)];
        let base =
            solve_qp(&QpProblem::new(q.clone(), u_ref.clone()).with_constraints(rows.clone()))
                .unwrap();
        let scaled = solve_qp(&QpProblem::new(q * 7.5, u_ref).with_constraints(rows)).unwrap();
        assert!((base.u - scaled.u).amax() < 1e-9);
    }

    #[test]
    fn rejects_indefinite_cost() {
        let p = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DVector::zeros(2),
        );
        assert!(matches!(solve_qp(&p), Err(Error::SingularCost { .. })));
    }
}
