//! Online one-step controller: minimizes
//! `Q̂(x, u) = xᵀQx + uᵀRu + Ĵ(Ax + Bu)` over `u ∈ U`, `Ax + Bu ∈ C`
//! with the cutting-plane method (PCP) or the pattern decomposition.

use std::collections::HashSet;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{LtiSystem, Polyhedron};
use crate::pwq_net::{ActivationPattern, PwqNetwork};
use crate::qp::{QpProblem, QpResult, QpSettings, QpSolver, QpStatus, WarmStart};
use crate::scalar::Real;

/// Default PCP stopping tolerance on `‖d − u‖`.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Constraint tolerance used for returned inputs.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pcp,
    #[serde(alias = "decomp")]
    Decomposition,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Pcp => "pcp",
            Algorithm::Decomposition => "decomposition",
        })
    }
}

/// `uᵀP̄u + q̄ᵀu + v̄`, the one-step cost on a fixed activation pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct QhatCoefficients<T: Real> {
    pub pbar: Mat<T>,
    pub qbar: Vector<T>,
    pub vbar: T,
}

impl<T: Real> QhatCoefficients<T> {
    pub fn evaluate(&self, u: &Vector<T>) -> T {
        linalg::quad_form(&self.pbar, u) + self.qbar.dot(u) + self.vbar
    }

    pub fn gradient(&self, u: &Vector<T>) -> Vector<T> {
        &self.pbar * u * T::lit(2.0) + &self.qbar
    }
}

/// Coefficients of `Q̂(x, ·)` on the region where the successor state has
/// the given activation pattern.
pub fn qhat_coefficients<T: Real>(
    net: &PwqNetwork<T>,
    sys: &LtiSystem<T>,
    x: &Vector<T>,
    pattern: &ActivationPattern,
) -> QhatCoefficients<T> {
    let rq = net.region_coefficients(pattern);
    let ax = &sys.a * x;
    let btp = sys.b.transpose() * &rq.phat;
    let pbar = linalg::symmetrize(&(&sys.r + &btp * &sys.b));
    let qbar = &btp * &ax * T::lit(2.0) + sys.b.transpose() * &rq.qhat;
    let vbar = linalg::quad_form(&sys.q, x) + rq.evaluate(&ax);
    QhatCoefficients { pbar, qbar, vbar }
}

/// `f_act = M(2n²+n+m²+5m+2mn+2) + 2mn + m(m+3)/2`, flops to find the
/// pattern and its coefficients.
pub fn f_act(width: usize, n: usize, m: usize) -> u64 {
    let (w, n, m) = (width as u64, n as u64, m as u64);
    w * (2 * n * n + n + m * m + 5 * m + 2 * m * n + 2) + 2 * m * n + m * (m + 3) / 2
}

/// One instance of the one-step problem at a fixed state.
#[derive(Debug, Clone)]
pub struct OneStepProblem<'a, T: Real> {
    pub net: &'a PwqNetwork<T>,
    pub system: &'a LtiSystem<T>,
    pub x: Vector<T>,
    /// `G u ≤ h` collecting `u ∈ U` and `Ax + Bu ∈ C`.
    pub g: Mat<T>,
    pub h: Vector<T>,
    /// `W B` and `W A x + b`, so the pre-activation is `wb·u + z0`.
    wb: Mat<T>,
    z0: Vector<T>,
}

impl<'a, T: Real> OneStepProblem<'a, T> {
    pub fn new(
        net: &'a PwqNetwork<T>,
        system: &'a LtiSystem<T>,
        input_set: &Polyhedron<T>,
        successor_set: Option<&Polyhedron<T>>,
        x: &Vector<T>,
    ) -> Result<Self> {
        let (n, m) = (system.n(), system.m());
        if x.len() != n || net.n() != n || input_set.dim() != m {
            return Err(Error::Dimension(format!(
                "state {} / network {} / input set {} vs system n={n}, m={m}",
                x.len(),
                net.n(),
                input_set.dim()
            )));
        }
        let ax = &system.a * x;
        let (g, h) = match successor_set {
            Some(c) if !c.is_universe() => {
                if c.dim() != n {
                    return Err(Error::Dimension("successor set dimension".into()));
                }
                let (ru, rc) = (input_set.n_rows(), c.n_rows());
                let mut g = Mat::zeros(ru + rc, m);
                let mut h = Vector::zeros(ru + rc);
                g.rows_mut(0, ru).copy_from(&input_set.hmat);
                h.rows_mut(0, ru).copy_from(&input_set.hvec);
                g.rows_mut(ru, rc).copy_from(&(&c.hmat * &system.b));
                h.rows_mut(ru, rc).copy_from(&(&c.hvec - &c.hmat * &ax));
                (g, h)
            }
            _ => (input_set.hmat.clone(), input_set.hvec.clone()),
        };
        Ok(Self {
            net,
            system,
            x: x.clone(),
            g,
            h,
            wb: &net.w * &system.b,
            z0: &net.w * &ax + &net.b,
        })
    }

    pub fn m(&self) -> usize {
        self.system.m()
    }

    pub fn successor(&self, u: &Vector<T>) -> Vector<T> {
        self.system.step(&self.x, u)
    }

    /// Pattern of the successor state.
    pub fn pattern(&self, u: &Vector<T>) -> ActivationPattern {
        self.net.activation_pattern(&self.successor(u))
    }

    /// Exact `Q̂(x, u)`.
    pub fn q_value(&self, u: &Vector<T>) -> T {
        self.system.stage_cost(&self.x, u) + self.net.evaluate(&self.successor(u))
    }

    pub fn coefficients(&self, pattern: &ActivationPattern) -> QhatCoefficients<T> {
        qhat_coefficients(self.net, self.system, &self.x, pattern)
    }

    pub fn max_violation(&self, u: &Vector<T>) -> T {
        if self.h.is_empty() {
            return T::zero();
        }
        (&self.g * u - &self.h).iter().fold(T::zero(), |a, v| a.max(*v))
    }

    pub fn is_feasible(&self, u: &Vector<T>) -> bool {
        self.max_violation(u) <= T::tol(FEASIBILITY_TOL) * (T::one() + linalg::inf_norm(&self.h))
    }

    fn qp(&self, c: &QhatCoefficients<T>, g: Mat<T>, h: Vector<T>) -> Result<QpProblem<T>> {
        QpProblem::new(&c.pbar * T::lit(2.0), c.qbar.clone(), g, h)
    }

    /// Rows `∓(W_i B) u ≤ ±(W_i A x + b_i)` pinning the pattern, stacked
    /// under the feasible-set rows.
    fn region_rows(&self, pattern: &ActivationPattern) -> (Mat<T>, Vector<T>) {
        let m = self.m();
        let width = self.net.width();
        let base = self.g.nrows();
        let mut g = Mat::zeros(base + width, m);
        let mut h = Vector::zeros(base + width);
        g.rows_mut(0, base).copy_from(&self.g);
        h.rows_mut(0, base).copy_from(&self.h);
        for i in 0..width {
            let row = self.wb.row(i);
            // a sliver of slack keeps the current iterate feasible when it
            // sits on a unit boundary
            let slack = T::tol(1e-12) * (T::one() + self.z0[i].abs());
            if pattern.contains(i) {
                g.row_mut(base + i).copy_from(&(-row));
                h[base + i] = self.z0[i] + slack;
            } else {
                g.row_mut(base + i).copy_from(&row);
                h[base + i] = -self.z0[i] + slack;
            }
        }
        (g, h)
    }
}

/// Outcome of one controller call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult<T: Real> {
    pub u: Vec<T>,
    /// Pattern evaluations `s_m`.
    pub iterations: usize,
    pub cycles: usize,
    pub flops: u64,
    /// QP flops spent in each iteration (zero when no QP was solved).
    pub qp_flops: Vec<u64>,
    pub algorithm: Algorithm,
    /// The successor constraint was dropped because it admitted no input.
    #[serde(default)]
    pub relaxed: bool,
}

impl<T: Real> StepResult<T> {
    pub fn input(&self) -> Vector<T> {
        Vector::from_column_slice(&self.u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerOptions {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    /// Hand a cycling decomposition over to PCP.
    pub switch_to_pcp_on_cycle: bool,
    /// Solve without the successor constraint at states where it admits no
    /// input, instead of failing.
    #[serde(default)]
    pub relax_infeasible_successor: bool,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Decomposition,
            epsilon: DEFAULT_EPSILON,
            switch_to_pcp_on_cycle: false,
            relax_infeasible_successor: false,
        }
    }
}

fn iteration_cap(width: usize) -> usize {
    10usize << width.min(20)
}

fn check_qp<T: Real>(r: &QpResult<T>, what: &str) -> Result<()> {
    match r.status {
        QpStatus::Optimal => Ok(()),
        QpStatus::Infeasible => Err(Error::Infeasible(format!("{what} has no feasible input"))),
        QpStatus::MaxIter => Err(Error::MaxIterations(format!("{what} QP"))),
        QpStatus::Unbounded => Err(Error::Internal(format!("{what} QP is unbounded"))),
    }
}

/// Pattern decomposition: solve the QP of the current pattern until the
/// pattern of the minimizer repeats.
pub fn solve_decomposition<T: Real>(
    prob: &OneStepProblem<'_, T>,
    warm_input: &Vector<T>,
    solver: &mut QpSolver,
) -> Result<StepResult<T>> {
    decomposition_impl(prob, warm_input, solver, false)
}

fn decomposition_impl<T: Real>(
    prob: &OneStepProblem<'_, T>,
    warm_input: &Vector<T>,
    solver: &mut QpSolver,
    switch_on_cycle: bool,
) -> Result<StepResult<T>> {
    let (n, m) = (prob.system.n(), prob.m());
    let width = prob.net.width();
    let fa = f_act(width, n, m);
    let cap = iteration_cap(width);
    let mut history: Vec<ActivationPattern> = Vec::new();
    let mut seen: HashSet<ActivationPattern> = HashSet::new();
    let mut inputs: Vec<Vector<T>> = Vec::new();
    let mut qp_flops = Vec::new();
    let mut cycles = 0;
    let mut warm: Option<WarmStart<T>> = None;
    let mut u = warm_input.clone();
    for s in 1..=cap {
        let mut pattern = prob.pattern(&u);
        if s > 1 && history.last() == Some(&pattern) {
            qp_flops.push(0);
            return Ok(finish(u, s, cycles, fa, width, qp_flops, Algorithm::Decomposition));
        }
        if s > 2 && seen.contains(&pattern) {
            cycles += 1;
            debug!("decomposition cycle at iteration {s}");
            if switch_on_cycle {
                let mut r = solve_pcp(prob, &u, DEFAULT_EPSILON, solver)?;
                qp_flops.push(0);
                let extra: u64 = qp_flops.iter().map(|q| fa + width as u64 + q).sum();
                r.flops += extra;
                r.iterations += s;
                r.cycles += cycles;
                let mut all = qp_flops;
                all.append(&mut r.qp_flops);
                r.qp_flops = all;
                return Ok(r);
            }
            pattern = reset_pattern(prob, &u, inputs.last(), &seen, width)?;
        }
        let coef = prob.coefficients(&pattern);
        let qp = prob.qp(&coef, prob.g.clone(), prob.h.clone())?;
        let before = solver.total_flops();
        let r = solver.solve(&qp, warm.as_ref())?;
        qp_flops.push(solver.total_flops() - before);
        check_qp(&r, "one-step problem")?;
        warm = Some(WarmStart::from_result(&r));
        seen.insert(pattern.clone());
        history.push(pattern);
        inputs.push(u);
        u = r.x;
    }
    Err(Error::Internal(format!(
        "decomposition exceeded {cap} iterations without a repeated pattern"
    )))
}

fn finish<T: Real>(
    u: Vector<T>,
    s: usize,
    cycles: usize,
    fa: u64,
    width: usize,
    qp_flops: Vec<u64>,
    algorithm: Algorithm,
) -> StepResult<T> {
    let flops = qp_flops.iter().map(|q| fa + width as u64 + q).sum();
    StepResult {
        u: u.iter().copied().collect(),
        iterations: s,
        cycles,
        flops,
        qp_flops,
        algorithm,
        relaxed: false,
    }
}

/// Pattern at the midpoint of the last two iterates if unseen, otherwise the
/// first unseen pattern in binary counting order.
fn reset_pattern<T: Real>(
    prob: &OneStepProblem<'_, T>,
    u: &Vector<T>,
    prev: Option<&Vector<T>>,
    seen: &HashSet<ActivationPattern>,
    width: usize,
) -> Result<ActivationPattern> {
    if let Some(p) = prev {
        let mid = (u + p) * T::lit(0.5);
        let cand = prob.pattern(&mid);
        if !seen.contains(&cand) {
            return Ok(cand);
        }
    }
    let limit: u128 = if width >= 127 { u128::MAX } else { 1u128 << width };
    let mut code: u128 = 0;
    while code < limit {
        let cand = ActivationPattern::from_code(code, width);
        if !seen.contains(&cand) {
            return Ok(cand);
        }
        code += 1;
    }
    Err(Error::Internal("every activation pattern has been visited".into()))
}

/// Piecewise convex programming: alternate the minimizer over the cut set
/// with the minimizer restricted to the current region, cutting with the
/// gradient at the region minimizer.
pub fn solve_pcp<T: Real>(
    prob: &OneStepProblem<'_, T>,
    warm_input: &Vector<T>,
    epsilon: f64,
    solver: &mut QpSolver,
) -> Result<StepResult<T>> {
    if epsilon <= 0.0 {
        return Err(Error::Config("PCP tolerance must be positive".into()));
    }
    let (n, m) = (prob.system.n(), prob.m());
    let width = prob.net.width();
    let fa = f_act(width, n, m);
    let cut_flops = (2 * m * m + 2 * m).saturating_sub(1) as u64;
    let cap = iteration_cap(width);
    let eps = T::lit(epsilon);
    let mut qp_flops = Vec::new();
    let mut flops = 0u64;

    // U_s as explicit rows
    let mut gs = prob.g.clone();
    let mut hs = prob.h.clone();
    let mut u = warm_input.clone();
    if !prob.is_feasible(&u) {
        // start from the minimizer of the warm input's piece
        let coef = prob.coefficients(&prob.pattern(&u));
        let before = solver.total_flops();
        let r = solver.solve(&prob.qp(&coef, gs.clone(), hs.clone())?, None)?;
        let q = solver.total_flops() - before;
        flops += fa + q;
        check_qp(&r, "one-step problem")?;
        u = r.x;
    }
    let mut warm_u: Option<WarmStart<T>> = None;
    for s in 1..=cap {
        let pattern = prob.pattern(&u);
        let coef = prob.coefficients(&pattern);
        let before = solver.total_flops();
        let ru = solver.solve(&prob.qp(&coef, gs.clone(), hs.clone())?, warm_u.as_ref())?;
        check_qp(&ru, "cut-restricted")?;
        let (gr, hr) = prob.region_rows(&pattern);
        let rd = solver.solve(&prob.qp(&coef, gr, hr)?, Some(&WarmStart {
            x: Some(u.clone()),
            active: Vec::new(),
        }))?;
        check_qp(&rd, "region-restricted")?;
        let q = solver.total_flops() - before;
        qp_flops.push(q);
        flops += fa + q;
        let d = rd.x;
        let gap = (&d - &ru.x).norm();
        if gap <= eps * (T::one() + d.norm()) {
            return Ok(StepResult {
                u: d.iter().copied().collect(),
                iterations: s,
                cycles: 0,
                flops,
                qp_flops,
                algorithm: Algorithm::Pcp,
                relaxed: false,
            });
        }
        // every input improving on d satisfies ∇Q̂(d)ᵀ(u − d) ≤ 0
        let grad = coef.gradient(&d);
        let rows = gs.nrows();
        gs = gs.insert_row(rows, T::zero());
        gs.row_mut(rows).copy_from(&grad.transpose());
        hs = hs.push(grad.dot(&d));
        flops += cut_flops;
        warm_u = Some(WarmStart::from_result(&ru));
        u = ru.x;
    }
    Err(Error::Internal(format!("PCP exceeded {cap} iterations")))
}

/// Per-system controller with warm starting and flop accounting.
#[derive(Debug, Clone)]
pub struct ControllerState<T: Real> {
    pub options: ControllerOptions,
    pub previous_input: Option<Vector<T>>,
    pub total_flops: u64,
    pub total_iterations: usize,
    pub total_cycles: usize,
    pub relaxed_steps: usize,
    pub steps: usize,
    solver: QpSolver,
}

impl<T: Real> ControllerState<T> {
    pub fn new(options: ControllerOptions) -> Self {
        Self {
            options,
            previous_input: None,
            total_flops: 0,
            total_iterations: 0,
            total_cycles: 0,
            relaxed_steps: 0,
            steps: 0,
            solver: QpSolver::new(QpSettings::default()),
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.options);
    }
}

/// Computes the input at `x`, warm-started from the previous input (zero on
/// the first call).
pub fn control_step<T: Real>(
    ctrl: &mut ControllerState<T>,
    net: &PwqNetwork<T>,
    sys: &LtiSystem<T>,
    input_set: &Polyhedron<T>,
    successor_set: Option<&Polyhedron<T>>,
    x: &Vector<T>,
) -> Result<StepResult<T>> {
    let warm = ctrl
        .previous_input
        .clone()
        .unwrap_or_else(|| Vector::zeros(sys.m()));
    let mut prob = OneStepProblem::new(net, sys, input_set, successor_set, x)?;
    let r = match solve_with(ctrl, &prob, &warm) {
        Err(Error::Infeasible(msg))
            if ctrl.options.relax_infeasible_successor && successor_set.is_some() =>
        {
            debug!("successor constraint dropped: {msg}");
            prob = OneStepProblem::new(net, sys, input_set, None, x)?;
            let mut r = solve_with(ctrl, &prob, &warm)?;
            r.relaxed = true;
            ctrl.relaxed_steps += 1;
            r
        }
        r => r?,
    };
    let u = r.input();
    if !prob.is_feasible(&u) {
        return Err(Error::Internal(format!(
            "controller returned an input violating constraints by {:e}",
            prob.max_violation(&u).as_f64()
        )));
    }
    ctrl.previous_input = Some(u);
    ctrl.total_flops += r.flops;
    ctrl.total_iterations += r.iterations;
    ctrl.total_cycles += r.cycles;
    ctrl.steps += 1;
    Ok(r)
}

fn solve_with<T: Real>(
    ctrl: &mut ControllerState<T>,
    prob: &OneStepProblem<'_, T>,
    warm: &Vector<T>,
) -> Result<StepResult<T>> {
    match ctrl.options.algorithm {
        Algorithm::Pcp => solve_pcp(prob, warm, ctrl.options.epsilon, &mut ctrl.solver),
        Algorithm::Decomposition => {
            decomposition_impl(prob, warm, &mut ctrl.solver, ctrl.options.switch_to_pcp_on_cycle)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_dare_default;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example1() -> LtiSystem<f64> {
        LtiSystem::new(
            Mat::from_row_slice(2, 2, &[1.0, 0.1, -0.1, 1.0]),
            Mat::from_row_slice(2, 2, &[1.0, 0.05, 0.5, 1.0]),
            Mat::identity(2, 2),
            Mat::identity(2, 2) * 0.1,
        )
        .unwrap()
    }

    fn random_net(sys: &LtiSystem<f64>, width: usize, seed: u64) -> PwqNetwork<f64> {
        let p = solve_dare_default(sys).unwrap().p;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PwqNetwork::new(
            Mat::from_fn(width, 2, |_, _| rng.random_range(-1.0..1.0)),
            Vector::from_fn(width, |_, _| rng.random_range(-2.0..-0.2)),
            Vector::from_fn(width, |_, _| rng.random_range(0.0..1.0)),
            p,
        )
        .unwrap()
    }

    #[test]
    fn empty_pattern_coefficients() {
        let sys = example1();
        let net = random_net(&sys, 4, 1);
        let x = Vector::from_column_slice(&[0.3, -0.2]);
        let c = qhat_coefficients(&net, &sys, &x, &ActivationPattern::empty());
        let p = &net.pstar;
        assert!((&c.pbar - (&sys.r + sys.b.transpose() * p * &sys.b)).amax() < 1e-14);
        let q = sys.b.transpose() * p * &sys.a * &x * 2.0;
        assert!((&c.qbar - q).amax() < 1e-14);
        let c0 = qhat_coefficients(&net, &sys, &Vector::zeros(2), &ActivationPattern::empty());
        assert_eq!(c0.vbar, 0.0);
    }

    #[test]
    fn coefficients_reproduce_q_value() {
        let sys = example1();
        let net = random_net(&sys, 6, 2);
        let u_set = Polyhedron::inf_ball(2, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let x = Vector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let u = Vector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
            let prob = OneStepProblem::new(&net, &sys, &u_set, None, &x).unwrap();
            let c = prob.coefficients(&prob.pattern(&u));
            assert_relative_eq!(c.evaluate(&u), prob.q_value(&u), max_relative = 1e-12);
        }
    }

    #[test]
    fn f_act_formula() {
        // M=1, n=1, m=1: 2+1+1+5+2+2 + 2 + 2
        assert_eq!(f_act(1, 1, 1), 17);
        assert_eq!(f_act(0, 2, 1), 4 + 2);
    }

    #[test]
    fn origin_gives_zero_input() {
        let sys = example1();
        let net = random_net(&sys, 5, 4);
        let u_set = Polyhedron::inf_ball(2, 0.5);
        let prob = OneStepProblem::new(&net, &sys, &u_set, None, &Vector::zeros(2)).unwrap();
        let mut solver = QpSolver::default();
        let a = solve_decomposition(&prob, &Vector::zeros(2), &mut solver).unwrap();
        assert!(a.input().amax() < 1e-14);
        assert!(a.iterations <= 2);
        let b = solve_pcp(&prob, &Vector::zeros(2), DEFAULT_EPSILON, &mut solver).unwrap();
        assert!(b.input().amax() < 1e-14);
    }

    #[test]
    fn inactive_region_gives_lqr_input() {
        let sys = example1();
        let ric = solve_dare_default(&sys).unwrap();
        let net = random_net(&sys, 5, 5);
        let u_set = Polyhedron::inf_ball(2, 0.5);
        let x = Vector::from_column_slice(&[0.05, -0.04]);
        let prob = OneStepProblem::new(&net, &sys, &u_set, None, &x).unwrap();
        let mut solver = QpSolver::default();
        let lqr = -(&ric.k * &x);
        let a = solve_decomposition(&prob, &Vector::zeros(2), &mut solver).unwrap();
        assert!((a.input() - &lqr).amax() < 1e-10, "{} vs {lqr}", a.input());
        assert!(a.iterations <= 2);
        let b = solve_pcp(&prob, &Vector::zeros(2), DEFAULT_EPSILON, &mut solver).unwrap();
        assert!((b.input() - &lqr).amax() < 1e-10);
    }

    #[test]
    fn algorithms_agree_and_beat_random_inputs() {
        let sys = example1();
        let net = random_net(&sys, 12, 6);
        let u_set = Polyhedron::inf_ball(2, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut solver = QpSolver::default();
        for _ in 0..100 {
            let x = Vector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let prob = OneStepProblem::new(&net, &sys, &u_set, None, &x).unwrap();
            let warm = Vector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
            let a = solve_decomposition(&prob, &warm, &mut solver).unwrap();
            let b = solve_pcp(&prob, &warm, DEFAULT_EPSILON, &mut solver).unwrap();
            assert!((a.input() - b.input()).amax() < 1e-6, "{} vs {}", a.input(), b.input());
            let best = prob.q_value(&a.input());
            for _ in 0..200 {
                let u = Vector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
                assert!(prob.q_value(&u) >= best - 1e-8);
            }
        }
    }

    #[test]
    fn successor_constraint_is_respected() {
        let sys = example1();
        let net = random_net(&sys, 6, 8);
        let u_set = Polyhedron::inf_ball(2, 0.5);
        let c = Polyhedron::inf_ball(2, 1.0);
        let x = Vector::from_column_slice(&[1.0, 0.9]);
        let prob = OneStepProblem::new(&net, &sys, &u_set, Some(&c), &x).unwrap();
        let mut solver = QpSolver::default();
        let r = solve_decomposition(&prob, &Vector::zeros(2), &mut solver).unwrap();
        let next = prob.successor(&r.input());
        assert!(next.amax() <= 1.0 + 1e-8);
        let r2 = solve_pcp(&prob, &Vector::zeros(2), DEFAULT_EPSILON, &mut solver).unwrap();
        assert!((r.input() - r2.input()).amax() < 1e-6);
    }

    #[test]
    fn infeasible_successor_set_is_reported() {
        let sys = example1();
        let net = random_net(&sys, 3, 9);
        let u_set = Polyhedron::inf_ball(2, 0.01);
        let c = Polyhedron::inf_ball(2, 0.1);
        let x = Vector::from_column_slice(&[3.0, 3.0]);
        let prob = OneStepProblem::new(&net, &sys, &u_set, Some(&c), &x).unwrap();
        let mut solver = QpSolver::default();
        assert!(matches!(
            solve_decomposition(&prob, &Vector::zeros(2), &mut solver),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            solve_pcp(&prob, &Vector::zeros(2), DEFAULT_EPSILON, &mut solver),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn relaxed_successor_falls_back_to_unconstrained_problem() {
        let sys = example1();
        let net = random_net(&sys, 3, 9);
        let u_set = Polyhedron::inf_ball(2, 0.01);
        let c = Polyhedron::inf_ball(2, 0.1);
        let x = Vector::from_column_slice(&[3.0, 3.0]);
        let mut strict = ControllerState::new(ControllerOptions::default());
        assert!(matches!(
            control_step(&mut strict, &net, &sys, &u_set, Some(&c), &x),
            Err(Error::Infeasible(_))
        ));
        let mut ctrl = ControllerState::new(ControllerOptions {
            relax_infeasible_successor: true,
            ..ControllerOptions::default()
        });
        let r = control_step(&mut ctrl, &net, &sys, &u_set, Some(&c), &x).unwrap();
        assert!(r.relaxed);
        assert_eq!(ctrl.relaxed_steps, 1);
        let prob = OneStepProblem::new(&net, &sys, &u_set, None, &x).unwrap();
        let mut solver = QpSolver::default();
        let free = solve_decomposition(&prob, &Vector::zeros(2), &mut solver).unwrap();
        assert!((r.input() - free.input()).amax() < 1e-12);
        let inside = Vector::from_column_slice(&[0.01, 0.0]);
        let r = control_step(&mut ctrl, &net, &sys, &u_set, Some(&c), &inside).unwrap();
        assert!(!r.relaxed);
    }

    #[test]
    fn flop_counter_matches_formula() {
        let sys = example1();
        let net = random_net(&sys, 8, 10);
        let u_set = Polyhedron::inf_ball(2, 0.5);
        let x = Vector::from_column_slice(&[2.0, -1.5]);
        let prob = OneStepProblem::new(&net, &sys, &u_set, None, &x).unwrap();
        let mut solver = QpSolver::default();
        let r = solve_decomposition(&prob, &Vector::zeros(2), &mut solver).unwrap();
        assert_eq!(r.qp_flops.len(), r.iterations);
        let fa = f_act(8, 2, 2);
        let expect: u64 = r.qp_flops.iter().map(|q| fa + q + 8).sum();
        assert_eq!(r.flops, expect);
    }

    #[test]
    fn control_step_warm_starts() {
        let sys = example1();
        let net = random_net(&sys, 6, 11);
        let u_set = Polyhedron::inf_ball(2, 0.5);
        let mut ctrl = ControllerState::new(ControllerOptions::default());
        let mut x = Vector::from_column_slice(&[0.0, 2.0]);
        for _ in 0..60 {
            let r = control_step(&mut ctrl, &net, &sys, &u_set, None, &x).unwrap();
            assert_eq!(ctrl.previous_input.as_ref().unwrap(), &r.input());
            x = sys.step(&x, &r.input());
        }
        assert!(x.norm() < 1e-3);
        let last = control_step(&mut ctrl, &net, &sys, &u_set, None, &x).unwrap();
        assert!(last.iterations <= 2);
        assert_eq!(ctrl.steps, 61);
    }
}
