//! Invariance and maximality of the computed planar stabilizable set.

use pwq_adp::harness::{preset, PresetName};
use pwq_adp::linalg::{Mat, Vector};
use pwq_adp::qp::{self, QpStatus};
use pwq_adp::{mpc, polytope, Experiment, Polyhedron, ProblemInstance};

/// Whether some admissible input moves `x` into `target` in one step.
fn one_step_reachable(inst: &ProblemInstance, target: &Polyhedron, x: &Vector<f64>) -> bool {
    let (u, sys) = (&inst.input_set, &inst.system);
    let (ru, rt) = (u.n_rows(), target.n_rows());
    let m = sys.m();
    let mut g = Mat::zeros(ru + rt, m);
    let mut h = Vector::zeros(ru + rt);
    g.rows_mut(0, ru).copy_from(&u.hmat);
    h.rows_mut(0, ru).copy_from(&u.hvec);
    g.rows_mut(ru, rt).copy_from(&(&target.hmat * &sys.b));
    h.rows_mut(ru, rt).copy_from(&(&target.hvec - &target.hmat * (&sys.a * x)));
    match qp::solve_lp(&Vector::zeros(m), &g, &h) {
        Ok(r) => r.status == QpStatus::Optimal && r.x.iter().all(|v| v.is_finite()),
        Err(_) => false,
    }
}

fn example3() -> Experiment {
    Experiment::new(preset(PresetName::Example3)).unwrap()
}

#[test]
fn stabilizable_set_is_control_invariant() {
    let e = example3();
    let xbar = &e.instance.region_of_interest;
    let verts = polytope::vertices_2d(xbar).unwrap();
    assert!(verts.len() >= 3);
    for v in &verts {
        assert!(polytope::contains_tol(&e.instance.state_set, v, 1e-9));
        assert!(one_step_reachable(&e.instance, xbar, v), "vertex {v} cannot stay in the set");
    }
}

#[test]
fn stabilizable_set_contains_lqr_invariant_set() {
    let e = example3();
    let olqr = mpc::lqr_invariant_set(&e.instance, &e.riccati, 1000).unwrap();
    assert!(olqr.converged);
    assert!(polytope::is_subset(&olqr.set, &e.instance.region_of_interest, 1e-9));
    // O∞ is invariant under the LQR law
    let acl = e.riccati.closed_loop(&e.instance.system);
    for v in polytope::vertices_2d(&olqr.set).unwrap() {
        assert!(polytope::contains_tol(&olqr.set, &(&acl * &v), 1e-9));
    }
}

#[test]
fn stabilizable_set_is_maximal() {
    let e = example3();
    let xbar = &e.instance.region_of_interest;
    let mut checked = 0;
    for v in polytope::vertices_2d(xbar).unwrap() {
        let out = &v * 1.01;
        if !polytope::contains(&e.instance.state_set, &out) {
            continue;
        }
        checked += 1;
        // the set is a fixpoint of the one-step controllable map
        assert!(!one_step_reachable(&e.instance, xbar, &out), "{out} reaches the set from outside");
    }
    assert!(checked > 0);
}

#[test]
fn vertices_are_mpc_feasible() {
    let e = example3();
    for v in polytope::vertices_2d(&e.instance.region_of_interest).unwrap() {
        let sol = mpc::solve_mpc(&e.mpqp, &v, None).unwrap();
        assert!(sol.value.is_finite() && sol.value > 0.0);
    }
}

#[test]
fn example3_vertices_match_published_figure() {
    let e = example3();
    let published = [
        [3.0, 0.8],
        [-3.0, -0.8],
        [1.8, 2.0],
        [-1.8, -2.0],
        [0.2, -3.0],
        [-0.2, 3.0],
        [3.0, -3.0],
        [-3.0, 3.0],
    ];
    let ours = polytope::vertices_2d(&e.instance.region_of_interest).unwrap();
    assert_eq!(ours.len(), published.len());
    for p in published {
        let p = Vector::from_column_slice(&p);
        let d = ours.iter().map(|v| (v - &p).amax()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-9, "no vertex near {p}: closest at distance {d:e}");
    }
}
