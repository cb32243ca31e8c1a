mod common;

use nalgebra::{DMatrix, DVector};
use singular_cbf::qp::kkt_residuals;
use singular_cbf::*;

#[test]
fn active_set_matches_exhaustive_enumeration() {
    let mut rng = common::rng(31);
    for n in 0..1000 {
        let problem = common::random_qp(&mut rng);
        let sol = solve_qp(&problem).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "problem {n}");
        let (_, best) = common::brute_force_qp(&problem).expect("feasible by construction");
        let f = problem.objective(&sol.u);
        assert!(
            (f - best).abs() <= 1e-8 * (1.0 + best.abs()),
            "problem {n}: {f} vs {best}"
        );
        let r = kkt_residuals(&problem, &sol);
        for v in [r.stationarity, r.primal, r.complementarity, r.dual] {
            assert!(v < 1e-7, "problem {n}: {r:?}");
        }
    }
}

#[test]
fn planar_problems_match_grid_search() {
    let mut rng = common::rng(32);
    let mut checked = 0;
    while checked < 100 {
        let problem = common::random_qp(&mut rng);
        if problem.dim() > 2 {
            continue;
        }
        let sol = solve_qp(&problem).unwrap();
        let f = problem.objective(&sol.u);
        let lo = sol.u.min() - 1.0;
        let hi = sol.u.max() + 1.0;
        let grid = common::grid_search_qp(&problem, lo, hi, 801).unwrap();
        // The grid can only be as good as the optimum, and lands close to it.
        assert!(grid >= f - 1e-12);
        assert!(grid - f < 1e-2 * (1.0 + f.abs()), "{grid} vs {f}");
        checked += 1;
    }
}

#[test]
fn feasible_reference_passes_through_bit_for_bit() {
    let mut rng = common::rng(33);
    for _ in 0..200 {
        let mut problem = common::random_qp(&mut rng);
        // Shift every row so the reference satisfies it.
        for c in &mut problem.constraints {
            c.b = c.a.dot(&problem.u_ref) - 0.1;
        }
        let sol = solve_qp(&problem).unwrap();
        assert_eq!(sol.u, problem.u_ref);
        assert!(sol.active_set.is_empty());
    }
}

#[test]
fn scaling_the_cost_keeps_the_minimiser() {
    let mut rng = common::rng(34);
    for _ in 0..200 {
        let problem = common::random_qp(&mut rng);
        let mut scaled = problem.clone();
        scaled.q *= 37.5;
        let a = solve_qp(&problem).unwrap().u;
        let b = solve_qp(&scaled).unwrap().u;
        assert!((a - b).amax() < 1e-9);
    }
}

#[test]
fn class_k_is_increasing_through_zero() {
    let hs: Vec<f64> = (0..=400).map(|i| -2.0 + i as f64 * 0.01).collect();
    for alpha in [
        ClassK::Linear { gamma: 0.7 },
        ClassK::Quadratic { gamma: 3.0 },
    ] {
        assert_eq!(alpha.eval(0.0), 0.0);
        for w in hs.windows(2) {
            assert!(alpha.eval(w[1]) > alpha.eval(w[0]));
        }
    }
}

#[test]
fn box_bounds_are_respected() {
    let mut rng = common::rng(35);
    for _ in 0..200 {
        let problem = common::random_qp(&mut rng);
        let m = problem.dim();
        let limit = 0.5;
        let bounded = problem
            .clone()
            .with_bounds(Some(InputBounds::symmetric(m, limit).unwrap()));
        let sol = solve_qp(&bounded).unwrap();
        match sol.status {
            QpStatus::Optimal => {
                assert!(sol.u.amax() <= limit + 1e-12, "{bounded:?} {sol:?}");
                let r = kkt_residuals(&bounded, &sol);
                assert!(r.stationarity < 1e-7 && r.primal < 1e-9);
                let (_, best) = common::brute_force_qp(&bounded).unwrap();
                assert!((bounded.objective(&sol.u) - best).abs() <= 1e-8 * (1.0 + best.abs()));
            }
            QpStatus::Infeasible => assert!(
                common::brute_force_qp(&bounded).is_none(),
                "{bounded:?} {sol:?} {:?}",
                common::brute_force_qp(&bounded)
            ),
        }
    }
}

#[test]
fn identity_cost_projection_onto_halfspace() {
    let c = BarrierConstraint::new(DVector::from_vec(vec![1.0, 1.0]), 3.0, 0.0, "half");
    let problem =
        QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2)).with_constraints(vec![c]);
    let sol = solve_qp(&problem).unwrap();
    assert_eq!(sol.u, DVector::from_vec(vec![1.5, 1.5]));
    assert_eq!(sol.multipliers, vec![1.5]);
}
