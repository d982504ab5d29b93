//! Finite-horizon MPC as a condensed multi-parametric QP.
//!
//! Cost convention: `J_N(x, U) = ½xᵀYx + ½UᵀHU + xᵀFU`, constraints
//! `GU ≤ w + Sx`. Rows are laid out stage by stage: the rows of `U` for
//! `u_k` followed by the rows of `X` for `x_{k+1}`.

use log::debug;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{LtiSystem, Polyhedron, ProblemInstance};
use crate::polytope;
use crate::qp::{QpProblem, QpSettings, QpSolver, QpStatus, WarmStart};
use crate::riccati::RiccatiSolution;
use crate::scalar::Real;

/// Slack below which a row counts as active.
pub const ACTIVE_SLACK_TOL: f64 = 1e-7;
/// Multiplier above which an active row counts as strongly active.
pub const STRONG_MULTIPLIER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MpqpData<T: Real> {
    pub h: Mat<T>,
    pub f: Mat<T>,
    pub y: Mat<T>,
    pub g: Mat<T>,
    pub w: Vector<T>,
    pub s: Mat<T>,
    pub horizon: usize,
    pub n: usize,
    pub m: usize,
    /// Rows of `U` per stage.
    pub input_rows: usize,
    /// Rows of `X` per stage.
    pub state_rows: usize,
    /// Stacked predictions `[x₁; …; x_N] = sx·x + su·U`.
    pub sx: Mat<T>,
    pub su: Mat<T>,
    /// Terminal weight.
    pub pstar: Mat<T>,
}

impl<T: Real> MpqpData<T> {
    pub fn n_vars(&self) -> usize {
        self.horizon * self.m
    }

    pub fn n_constraints(&self) -> usize {
        self.w.len()
    }

    /// `(stage, kind)` of a constraint row; kind is `true` for input rows.
    pub fn row_stage(&self, row: usize) -> (usize, bool) {
        let stride = self.input_rows + self.state_rows;
        (row / stride, row % stride < self.input_rows)
    }

    pub fn rhs(&self, x: &Vector<T>) -> Vector<T> {
        &self.w + &self.s * x
    }

    pub fn linear_term(&self, x: &Vector<T>) -> Vector<T> {
        self.f.transpose() * x
    }

    pub fn cost(&self, x: &Vector<T>, u: &Vector<T>) -> T {
        let half = T::lit(0.5);
        half * linalg::quad_form(&self.y, x) + half * linalg::quad_form(&self.h, u) + x.dot(&(&self.f * u))
    }

    pub fn qp(&self, x: &Vector<T>) -> Result<QpProblem<T>> {
        QpProblem::new(self.h.clone(), self.linear_term(x), self.g.clone(), self.rhs(x))
    }

    /// State `x_k`, `k = 0..=N`.
    pub fn predicted_state(&self, x: &Vector<T>, u: &Vector<T>, k: usize) -> Vector<T> {
        if k == 0 {
            return x.clone();
        }
        let r = (k - 1) * self.n;
        self.sx.rows(r, self.n) * x + self.su.rows(r, self.n) * u
    }

    pub fn terminal_state(&self, x: &Vector<T>, u: &Vector<T>) -> Vector<T> {
        self.predicted_state(x, u, self.horizon)
    }

    /// `u_k` out of the stacked sequence.
    pub fn input(&self, u: &Vector<T>, k: usize) -> Vector<T> {
        u.rows(k * self.m, self.m).into_owned()
    }
}

/// Builds the condensed problem for horizon `N`.
pub fn condense<T: Real>(
    sys: &LtiSystem<T>,
    state_set: &Polyhedron<T>,
    input_set: &Polyhedron<T>,
    pstar: &Mat<T>,
    horizon: usize,
) -> Result<MpqpData<T>> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let (n, m) = (sys.n(), sys.m());
    if state_set.dim() != n || input_set.dim() != m || pstar.nrows() != n {
        return Err(Error::Dimension("sets or P* do not match the system".into()));
    }
    let nn = horizon;
    let (sx, su) = sys.prediction(nn);

    let mut qbar = Mat::zeros(nn * n, nn * n);
    for k in 0..nn {
        let blk = if k + 1 == nn { pstar } else { &sys.q };
        qbar.view_mut((k * n, k * n), (n, n)).copy_from(blk);
    }
    let mut rbar = Mat::zeros(nn * m, nn * m);
    for k in 0..nn {
        rbar.view_mut((k * m, k * m), (m, m)).copy_from(&sys.r);
    }
    let two = T::lit(2.0);
    let qsu = &qbar * &su;
    let h = linalg::symmetrize(&((su.transpose() * &qsu + rbar) * two));
    let f = sx.transpose() * &qsu * two;
    let y = linalg::symmetrize(&((&sys.q + sx.transpose() * &qbar * &sx) * two));

    let cu = input_set.n_rows();
    let cx = state_set.n_rows();
    let rows = nn * (cu + cx);
    let mut g = Mat::zeros(rows, nn * m);
    let mut w = Vector::zeros(rows);
    let mut s = Mat::zeros(rows, n);
    for k in 0..nn {
        let base = k * (cu + cx);
        g.view_mut((base, k * m), (cu, m)).copy_from(&input_set.hmat);
        w.rows_mut(base, cu).copy_from(&input_set.hvec);
        let sxk = sx.rows(k * n, n);
        let suk = su.rows(k * n, n);
        g.view_mut((base + cu, 0), (cx, nn * m))
            .copy_from(&(&state_set.hmat * suk));
        w.rows_mut(base + cu, cx).copy_from(&state_set.hvec);
        s.view_mut((base + cu, 0), (cx, n))
            .copy_from(&(-(&state_set.hmat * sxk)));
    }

    Ok(MpqpData {
        h,
        f,
        y,
        g,
        w,
        s,
        horizon: nn,
        n,
        m,
        input_rows: cu,
        state_rows: cx,
        sx,
        su,
        pstar: pstar.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution<T: Real> {
    pub u: Vector<T>,
    pub lambda: Vector<T>,
    pub value: T,
    /// Rows with slack ≤ 1e-7.
    pub active_set: Vec<usize>,
    /// Active rows whose multiplier is ≤ 1e-8.
    pub weakly_active: Vec<usize>,
    /// Weakly active rows present or active rows linearly dependent.
    pub degenerate: bool,
    pub qp_iterations: usize,
    pub flops: u64,
}

impl<T: Real> MpcSolution<T> {
    pub fn first_input(&self, m: usize) -> Vector<T> {
        self.u.rows(0, m).into_owned()
    }
}

/// Solves the MPC problem at `x`, optionally warm started.
pub fn solve_mpc<T: Real>(
    mpqp: &MpqpData<T>,
    x: &Vector<T>,
    warm: Option<&MpcSolution<T>>,
) -> Result<MpcSolution<T>> {
    let mut solver = QpSolver::new(QpSettings::default());
    solve_mpc_with(&mut solver, mpqp, x, warm)
}

/// Same as [`solve_mpc`] with a caller-owned solver (flop tally persists).
pub fn solve_mpc_with<T: Real>(
    solver: &mut QpSolver,
    mpqp: &MpqpData<T>,
    x: &Vector<T>,
    warm: Option<&MpcSolution<T>>,
) -> Result<MpcSolution<T>> {
    if x.len() != mpqp.n {
        return Err(Error::Dimension(format!(
            "state has {} entries, expected {}",
            x.len(),
            mpqp.n
        )));
    }
    let prob = mpqp.qp(x)?;
    let ws = warm.map(|w| WarmStart {
        x: Some(w.u.clone()),
        active: w.active_set.clone(),
    });
    let res = solver.solve(&prob, ws.as_ref())?;
    match res.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(Error::Infeasible(format!(
                "state {:?} is outside the MPC feasible region",
                linalg::to_vec_f64(x)
            )))
        }
        QpStatus::MaxIter => {
            return Err(Error::MaxIterations("MPC quadratic program".into()))
        }
        QpStatus::Unbounded => {
            return Err(Error::Internal("MPC quadratic program reported unbounded".into()))
        }
    }
    let rhs = &prob.h;
    let slack = rhs - &mpqp.g * &res.x;
    let act_tol = T::tol(ACTIVE_SLACK_TOL);
    let mul_tol = T::tol(STRONG_MULTIPLIER_TOL);
    let active_set: Vec<usize> = (0..slack.len()).filter(|&i| slack[i] <= act_tol).collect();
    let weakly_active: Vec<usize> = active_set
        .iter()
        .copied()
        .filter(|&i| res.lambda[i] <= mul_tol)
        .collect();
    let dependent = if active_set.is_empty() {
        false
    } else {
        let ga = Mat::from_fn(active_set.len(), mpqp.n_vars(), |i, j| {
            mpqp.g[(active_set[i], j)]
        });
        linalg::rank(&ga, T::tol(1e-10)) < active_set.len()
    };
    let value = mpqp.cost(x, &res.x);
    Ok(MpcSolution {
        value,
        active_set,
        degenerate: dependent || !weakly_active.is_empty(),
        weakly_active,
        qp_iterations: res.iterations,
        flops: res.flops,
        u: res.x,
        lambda: res.lambda,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueGradient<T: Real> {
    pub gradient: Vector<T>,
    /// The gradient may not be the derivative of the value function.
    pub degenerate: bool,
}

/// `∇J*(x) = −Sᵀλ + Yx + FU*`.
pub fn value_gradient<T: Real>(
    mpqp: &MpqpData<T>,
    sol: &MpcSolution<T>,
    x: &Vector<T>,
) -> ValueGradient<T> {
    let gradient = &mpqp.y * x + &mpqp.f * &sol.u - mpqp.s.transpose() * &sol.lambda;
    if sol.degenerate {
        debug!("value gradient requested at a degenerate solution");
    }
    ValueGradient {
        gradient,
        degenerate: sol.degenerate,
    }
}

/// Quadratic coefficient of the value function on the region of `active`:
/// `P* + ½ S̃_Aᵀ Γ⁻¹ S̃_A` with `S̃ = S + G H⁻¹ Fᵀ` and `Γ = G_A H⁻¹ G_Aᵀ`.
pub fn region_hessian<T: Real>(
    mpqp: &MpqpData<T>,
    active: &[usize],
    pstar: &Mat<T>,
) -> Result<Mat<T>> {
    if active.is_empty() {
        return Ok(pstar.clone());
    }
    let hchol = linalg::cholesky(&mpqp.h, "H")?;
    let ga = Mat::from_fn(active.len(), mpqp.n_vars(), |i, j| mpqp.g[(active[i], j)]);
    let sa = Mat::from_fn(active.len(), mpqp.n, |i, j| mpqp.s[(active[i], j)]);
    let hinv_gat = hchol.solve(&ga.transpose());
    let gamma = linalg::symmetrize(&(&ga * &hinv_gat));
    let gchol = linalg::cholesky(&gamma, "Γ")
        .map_err(|_| Error::Degenerate(format!("active rows {active:?} are linearly dependent")))?;
    let st = sa + hinv_gat.transpose() * mpqp.f.transpose();
    let inner = gchol.solve(&st);
    Ok(linalg::symmetrize(&(pstar + st.transpose() * inner * T::lit(0.5))))
}

/// Smallest `N ≤ nmax` for which every test state steers its MPC terminal
/// state into `olqr`.
pub fn choose_horizon<T: Real>(
    instance: &ProblemInstance<T>,
    ric: &RiccatiSolution<T>,
    olqr: &Polyhedron<T>,
    test_states: &[Vector<T>],
    nmax: usize,
) -> Result<usize> {
    let tol = T::tol(1e-7);
    for n in 1..=nmax {
        let mpqp = condense(
            &instance.system,
            &instance.state_set,
            &instance.input_set,
            &ric.p,
            n,
        )?;
        let mut ok = true;
        for x in test_states {
            let sol = solve_mpc(&mpqp, x, None)?;
            let xn = mpqp.terminal_state(x, &sol.u);
            if !polytope::contains_tol(olqr, &xn, tol) {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(n);
        }
    }
    Err(Error::HorizonExceeded { nmax })
}

/// Maximal LQR invariant set `O∞` of the instance.
pub fn lqr_invariant_set<T: Real>(
    instance: &ProblemInstance<T>,
    ric: &RiccatiSolution<T>,
    max_iter: usize,
) -> Result<polytope::InvariantSetResult<T>> {
    let seed = polytope::admissible_set(&instance.state_set, &instance.input_set, &ric.k)?;
    polytope::max_positively_invariant(&ric.closed_loop(&instance.system), &seed, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_dare_default;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_sys() -> LtiSystem<f64> {
        let one = Mat::from_row_slice(1, 1, &[1.0]);
        LtiSystem::new(one.clone(), one.clone(), one.clone(), one).unwrap()
    }

    fn example3() -> ProblemInstance<f64> {
        let sys = LtiSystem::new(
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            Mat::from_row_slice(2, 1, &[0.4, 0.6]),
            Mat::identity(2, 2),
            Mat::identity(1, 1) * 0.1,
        )
        .unwrap();
        ProblemInstance::new(
            sys,
            Polyhedron::inf_ball(2, 3.0),
            Polyhedron::inf_ball(1, 2.0),
            Polyhedron::inf_ball(2, 3.0),
        )
        .unwrap()
    }

    #[test]
    fn scalar_condensing_by_hand() {
        let sys = scalar_sys();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let p = Mat::from_row_slice(1, 1, &[phi]);
        let d = condense(&sys, &Polyhedron::universe(1), &Polyhedron::universe(1), &p, 1).unwrap();
        assert_relative_eq!(d.y[(0, 0)], 5.236_067_977_499_79, epsilon = 1e-12);
        assert_relative_eq!(d.h[(0, 0)], 5.236_067_977_499_79, epsilon = 1e-12);
        assert_relative_eq!(d.f[(0, 0)], 3.236_067_977_499_79, epsilon = 1e-12);
    }

    #[test]
    fn zero_dynamics_have_no_cross_term() {
        let z = Mat::from_row_slice(1, 1, &[0.0]);
        let one = Mat::from_row_slice(1, 1, &[1.0]);
        let sys = LtiSystem::new(z, one.clone(), one.clone(), one.clone()).unwrap();
        let d = condense(&sys, &Polyhedron::universe(1), &Polyhedron::universe(1), &one, 1).unwrap();
        assert_eq!(d.f[(0, 0)], 0.0);
    }

    #[test]
    fn example3_shapes() {
        let inst = example3();
        let ric = solve_dare_default(&inst.system).unwrap();
        let d = condense(&inst.system, &inst.state_set, &inst.input_set, &ric.p, 6).unwrap();
        assert_eq!(d.h.shape(), (6, 6));
        assert_eq!(d.g.nrows(), 36);
        assert!(linalg::is_positive_definite(&d.h, 1e-10));
    }

    #[test]
    fn unconstrained_solution_is_lqr() {
        let inst = example3();
        let ric = solve_dare_default(&inst.system).unwrap();
        let d = condense(&inst.system, &inst.state_set, &inst.input_set, &ric.p, 6).unwrap();
        let x0 = Vector::from_column_slice(&[0.1, -0.05]);
        let sol = solve_mpc(&d, &x0, None).unwrap();
        assert!(sol.active_set.is_empty());
        let acl = ric.closed_loop(&inst.system);
        let mut x = x0.clone();
        for k in 0..6 {
            let u = -&ric.k * &x;
            assert!((d.input(&sol.u, k) - &u).amax() < 1e-7);
            x = &acl * x;
        }
        assert_relative_eq!(sol.value, linalg::quad_form(&ric.p, &x0), epsilon = 1e-12);
        let g = value_gradient(&d, &sol, &x0);
        assert!((g.gradient - &ric.p * &x0 * 2.0).amax() < 1e-9);

        let z = solve_mpc(&d, &Vector::zeros(2), None).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(z.u.amax() == 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let inst = example3();
        let ric = solve_dare_default(&inst.system).unwrap();
        let d = condense(&inst.system, &inst.state_set, &inst.input_set, &ric.p, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tested = 0;
        while tested < 30 {
            let x = Vector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let Ok(sol) = solve_mpc(&d, &x, None) else { continue };
            if sol.degenerate {
                continue;
            }
            let g = value_gradient(&d, &sol, &x).gradient;
            let hstep = 1e-5;
            let mut fd = Vector::zeros(2);
            let mut ok = true;
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += hstep;
                xm[i] -= hstep;
                match (solve_mpc(&d, &xp, None), solve_mpc(&d, &xm, None)) {
                    (Ok(a), Ok(b)) => fd[i] = (a.value - b.value) / (2.0 * hstep),
                    _ => ok = false,
                }
            }
            if !ok {
                continue;
            }
            let rel = (&fd - &g).norm() / g.norm().max(1e-8);
            assert!(rel < 1e-4, "x={x:?} fd={fd:?} g={g:?}");
            tested += 1;
        }
    }

    #[test]
    fn region_hessians_dominate_pstar() {
        let inst = example3();
        let ric = solve_dare_default(&inst.system).unwrap();
        let d = condense(&inst.system, &inst.state_set, &inst.input_set, &ric.p, 6).unwrap();
        assert_eq!(region_hessian(&d, &[], &ric.p).unwrap(), ric.p);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = 0;
        for _ in 0..200 {
            let x = Vector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let Ok(sol) = solve_mpc(&d, &x, None) else { continue };
            if sol.degenerate {
                continue;
            }
            let pi = region_hessian(&d, &sol.active_set, &ric.p).unwrap();
            assert!(linalg::lambda_min(&(&pi - &ric.p)) >= -1e-10);
            // the value is a quadratic with this curvature along the region
            seen += 1;
        }
        assert!(seen > 50);
    }

    #[test]
    fn horizon_for_small_states_is_one() {
        let inst = example3();
        let ric = solve_dare_default(&inst.system).unwrap();
        let olqr = lqr_invariant_set(&inst, &ric, 500).unwrap();
        assert!(olqr.converged);
        let tiny = vec![Vector::from_column_slice(&[0.01, 0.0])];
        assert_eq!(choose_horizon(&inst, &ric, &olqr.set, &tiny, 20).unwrap(), 1);
    }
}
