//! Property tests on random problem data.

use proptest::prelude::*;

use pwq_adp::controller::{self, OneStepProblem, DEFAULT_EPSILON};
use pwq_adp::linalg::{Mat, Vector};
use pwq_adp::qp::{self, QpProblem, QpSolver, WarmStart};
use pwq_adp::{LtiSystem, Polyhedron, PwqNetwork};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Mat<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Mat::from_row_slice(rows, cols, &v))
}

fn vector(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vector<f64>> {
    prop::collection::vec(lo..hi, len).prop_map(Vector::from_vec)
}

/// Strictly convex QP together with a point known to be feasible.
fn feasible_qp() -> impl Strategy<Value = (QpProblem<f64>, Vector<f64>)> {
    (1usize..=4, 0usize..=8).prop_flat_map(|(d, c)| {
        (
            matrix(d, d, -2.0, 2.0),
            vector(d, -5.0, 5.0),
            matrix(c, d, -1.0, 1.0),
            vector(d, -1.0, 1.0),
            vector(c, 0.0, 1.0),
        )
            .prop_map(move |(l, q, g, xf, slack)| {
                let p = &l * l.transpose() + Mat::identity(d, d) * 0.05;
                let prob = if c == 0 {
                    QpProblem::unconstrained(p, q).unwrap()
                } else {
                    let h = &g * &xf + slack;
                    QpProblem::new(p, q, g, h).unwrap()
                };
                (prob, xf)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn qp_solution_satisfies_kkt((prob, xf) in feasible_qp()) {
        let r = qp::solve(&prob, None).unwrap();
        prop_assert!(r.is_optimal());
        prop_assert!(prob.kkt(&r.x, &r.lambda).certifies(prob.q.amax()));
        prop_assert!(prob.objective(&r.x) <= prob.objective(&xf) + 1e-9);
    }

    #[test]
    fn warm_start_from_optimum_is_a_fixed_point((prob, _) in feasible_qp()) {
        let r = qp::solve(&prob, None).unwrap();
        let again = QpSolver::default().solve(&prob, Some(&WarmStart::from_result(&r))).unwrap();
        prop_assert!(again.is_optimal());
        prop_assert!((&again.x - &r.x).amax() <= 1e-8 * (1.0 + r.x.amax()));
    }

    #[test]
    fn network_is_convex_along_segments(
        w in matrix(6, 2, -1.0, 1.0),
        b in vector(6, -2.0, -0.01),
        r in vector(6, 0.0, 3.0),
        x1 in vector(2, -3.0, 3.0),
        x2 in vector(2, -3.0, 3.0),
        t in 0.0f64..1.0,
    ) {
        let net = PwqNetwork::new(w, b, r, Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let mid = &x1 * (1.0 - t) + &x2 * t;
        let chord = net.evaluate(&x1) * (1.0 - t) + net.evaluate(&x2) * t;
        prop_assert!(net.evaluate(&mid) <= chord + 1e-9 * (1.0 + chord.abs()));
        let lin = net.evaluate(&x1) + net.gradient_x(&x1).dot(&(&x2 - &x1));
        prop_assert!(net.evaluate(&x2) >= lin - 1e-9 * (1.0 + lin.abs()));
    }

    #[test]
    fn online_algorithms_agree(
        w in matrix(8, 2, -1.0, 1.0),
        b in vector(8, -2.0, -0.01),
        r in vector(8, 0.0, 3.0),
        x in vector(2, -3.0, 3.0),
    ) {
        let sys = LtiSystem::new(
            Mat::from_row_slice(2, 2, &[1.0, 0.1, -0.1, 1.0]),
            Mat::from_row_slice(2, 2, &[1.0, 0.05, 0.5, 1.0]),
            Mat::identity(2, 2),
            Mat::identity(2, 2) * 0.1,
        )
        .unwrap();
        let net = PwqNetwork::new(w, b, r, Mat::identity(2, 2)).unwrap();
        let u_set = Polyhedron::inf_ball(2, 0.5);
        let prob = OneStepProblem::new(&net, &sys, &u_set, None, &x).unwrap();
        let mut solver = QpSolver::default();
        let a = controller::solve_decomposition(&prob, &Vector::zeros(2), &mut solver).unwrap();
        let p = controller::solve_pcp(&prob, &Vector::zeros(2), DEFAULT_EPSILON, &mut solver).unwrap();
        prop_assert!((a.input() - p.input()).amax() <= 1e-6);
        prop_assert!(prob.is_feasible(&a.input()));
    }
}
