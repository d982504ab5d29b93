//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    ½ xᵀ P x + qᵀ x
//!     subject to  G x ≤ h
//! ```
//!
//! with `P` positive definite. The solver is a primal active-set method:
//! a feasible point is obtained first (either from a warm start or from a
//! phase-1 slack minimization solved by the same kernel), then equality
//! constrained subproblems on the working set are solved through a Cholesky
//! factorization of `P` and of the reduced matrix `A P⁻¹ Aᵀ`. Linear programs
//! are handled as regularized QPs with `P = εI`.
//!
//! Every floating point operation spent in the linear algebra is tallied so
//! callers can report portable complexity figures instead of wall-clock time.

use std::collections::HashMap;

use nalgebra::{Cholesky, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, Mat, Vector};
use crate::scalar::Real;

/// Regularization used by [`solve_lp`].
pub const LP_REGULARIZATION: f64 = 1e-9;
/// Iterates beyond this norm flag an LP as unbounded.
pub const UNBOUNDED_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T: Real> {
    pub p: Mat<T>,
    pub q: Vector<T>,
    pub g: Mat<T>,
    pub h: Vector<T>,
}

impl<T: Real> QpProblem<T> {
    pub fn new(p: Mat<T>, q: Vector<T>, g: Mat<T>, h: Vector<T>) -> Result<Self> {
        let d = q.len();
        if p.nrows() != d || p.ncols() != d {
            return Err(Error::Dimension(format!(
                "P is {}x{}, expected {d}x{d}",
                p.nrows(),
                p.ncols()
            )));
        }
        if g.nrows() != h.len() || (g.nrows() > 0 && g.ncols() != d) {
            return Err(Error::Dimension(format!(
                "G is {}x{}, h has {} rows, d = {d}",
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        let g = if g.nrows() == 0 { Mat::zeros(0, d) } else { g };
        Ok(Self { p, q, g, h })
    }

    /// Unconstrained problem.
    pub fn unconstrained(p: Mat<T>, q: Vector<T>) -> Result<Self> {
        let d = q.len();
        Self::new(p, q, Mat::zeros(0, d), Vector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, x: &Vector<T>) -> T {
        T::lit(0.5) * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Largest constraint violation `max(0, max(Gx - h))`.
    pub fn max_violation(&self, x: &Vector<T>) -> T {
        if self.h.is_empty() {
            return T::zero();
        }
        let s = &self.g * x - &self.h;
        s.iter().fold(T::zero(), |a, v| a.max(*v))
    }

    pub fn kkt(&self, x: &Vector<T>, lambda: &Vector<T>) -> KktReport<T> {
        let mut r = &self.p * x + &self.q;
        if !self.h.is_empty() {
            r += self.g.transpose() * lambda;
        }
        let slack = &self.h - &self.g * x;
        let compl = slack
            .iter()
            .zip(lambda.iter())
            .fold(T::zero(), |a, (s, l)| a.max((*s * *l).abs()));
        let min_mult = lambda.iter().fold(T::zero(), |a, l| a.min(*l));
        KktReport {
            stationarity: inf_norm(&r),
            primal_violation: self.max_violation(x),
            complementarity: compl,
            min_multiplier: min_mult,
        }
    }
}

/// Optimality residuals at a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport<T: Real> {
    pub stationarity: T,
    pub primal_violation: T,
    pub complementarity: T,
    pub min_multiplier: T,
}

impl<T: Real> KktReport<T> {
    /// The certification bounds used throughout the crate.
    pub fn certifies(&self, q_scale: T) -> bool {
        self.stationarity <= T::tol(1e-8) * (T::one() + q_scale)
            && self.primal_violation <= T::tol(1e-8)
            && self.complementarity <= T::tol(1e-7)
            && self.min_multiplier >= -T::tol(1e-10)
    }

    pub fn max(&self) -> T {
        self.stationarity
            .max(self.primal_violation)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct QpResult<T: Real> {
    pub x: Vector<T>,
    pub lambda: Vector<T>,
    pub status: QpStatus,
    pub kkt_residual: T,
    pub iterations: usize,
    /// Final working set, ascending row indices.
    pub working_set: Vec<usize>,
    /// Floating point operations counted during this solve.
    pub flops: u64,
}

impl<T: Real> QpResult<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Warm start data: a primal guess and/or a guessed active set.
#[derive(Debug, Clone, Default)]
pub struct WarmStart<T: Real> {
    pub x: Option<Vector<T>>,
    pub active: Vec<usize>,
}

impl<T: Real> WarmStart<T> {
    pub fn from_result(r: &QpResult<T>) -> Self {
        Self {
            x: Some(r.x.clone()),
            active: r.working_set.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Hard cap on active-set iterations; `None` picks `50 (c + d) + 100`.
    pub max_iter: Option<usize>,
    /// Feasibility tolerance on `Gx - h`.
    pub feas_tol: f64,
    /// Relative tolerance deciding the reduced gradient vanished.
    pub stationarity_tol: f64,
    /// Multiplier sign tolerance.
    pub dual_tol: f64,
    /// Marks a problem as an LP for unboundedness detection.
    pub lp_mode: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: None,
            feas_tol: 1e-9,
            stationarity_tol: 1e-13,
            dual_tol: 1e-12,
            lp_mode: false,
        }
    }
}

/// Active-set solver with its own flop tally.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
    flops: u64,
}

enum Outcome<T: Real> {
    Done(QpResult<T>),
    /// Feasible starting point with an empty working set.
    Start(Vector<T>),
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings, flops: 0 }
    }

    /// Flops accumulated over every solve made by this instance.
    pub fn total_flops(&self) -> u64 {
        self.flops
    }

    pub fn reset_flops(&mut self) {
        self.flops = 0;
    }

    pub fn solve<T: Real>(
        &mut self,
        prob: &QpProblem<T>,
        warm: Option<&WarmStart<T>>,
    ) -> Result<QpResult<T>> {
        let d = prob.dim();
        let chol = crate::linalg::cholesky(&prob.p, "QP Hessian P")?;
        let mut flops = (d * d * d / 3 + d * d) as u64;

        let (x0, w0) = match self.initial_point(prob, &chol, warm, &mut flops)? {
            Outcome::Done(mut r) => {
                r.flops = flops;
                self.flops += flops;
                return Ok(r);
            }
            Outcome::Start(x) => (x, Vec::new()),
        };
        let mut r = active_set(prob, &chol, x0, w0, &self.settings, &mut flops);
        r.flops = flops;
        self.flops += flops;
        Ok(r)
    }

    fn initial_point<T: Real>(
        &self,
        prob: &QpProblem<T>,
        chol: &Cholesky<T, Dyn>,
        warm: Option<&WarmStart<T>>,
        flops: &mut u64,
    ) -> Result<Outcome<T>> {
        let d = prob.dim();
        let feas = T::tol(self.settings.feas_tol) * (T::one() + inf_norm(&prob.h));
        if let Some(w) = warm {
            let guess = independent_rows(&prob.g, &w.active, flops);
            if !guess.is_empty() {
                if let Some(x) = equality_qp(prob, chol, &guess, flops) {
                    if prob.max_violation(&x) <= feas {
                        let r = active_set(prob, chol, x, guess, &self.settings, flops);
                        return Ok(Outcome::Done(r));
                    }
                }
            }
            if let Some(x) = &w.x {
                if x.len() == d && prob.max_violation(x) <= feas {
                    let slack = &prob.h - &prob.g * x;
                    let act: Vec<usize> = (0..prob.n_constraints())
                        .filter(|&i| slack[i] <= feas)
                        .collect();
                    let ws = independent_rows(&prob.g, &act, flops);
                    let r = active_set(prob, chol, x.clone(), ws, &self.settings, flops);
                    return Ok(Outcome::Done(r));
                }
            }
        }
        let guess = warm
            .and_then(|w| w.x.clone())
            .filter(|x| x.len() == d)
            .unwrap_or_else(|| Vector::zeros(d));
        if prob.max_violation(&guess) <= feas {
            return Ok(Outcome::Start(guess));
        }
        // Unconstrained minimizer is a good first candidate.
        let xu = -chol.solve(&prob.q);
        *flops += (2 * d * d) as u64;
        if prob.max_violation(&xu) <= feas {
            return Ok(Outcome::Start(xu));
        }
        match phase_one(prob, &guess, &self.settings, flops) {
            Some(x) => Ok(Outcome::Start(x)),
            None => Ok(Outcome::Done(QpResult {
                x: guess,
                lambda: Vector::zeros(prob.n_constraints()),
                status: QpStatus::Infeasible,
                kkt_residual: T::zero(),
                iterations: 0,
                working_set: Vec::new(),
                flops: *flops,
            })),
        }
    }
}

/// Solves a QP with a fresh solver instance.
pub fn solve<T: Real>(prob: &QpProblem<T>, warm: Option<&WarmStart<T>>) -> Result<QpResult<T>> {
    QpSolver::default().solve(prob, warm)
}

/// Minimizes `qᵀx` subject to `Gx ≤ h` by projected steepest descent over
/// working sets. The `ε‖x‖²/2` term (`ε = 1e-9`) only enters the starting
/// point; unbounded problems report [`QpStatus::Unbounded`].
pub fn solve_lp<T: Real>(q: &Vector<T>, g: &Mat<T>, h: &Vector<T>) -> Result<QpResult<T>> {
    let d = q.len();
    let p = Mat::<T>::identity(d, d) * T::lit(LP_REGULARIZATION);
    let prob = QpProblem::new(p, q.clone(), g.clone(), h.clone())?;
    let settings = QpSettings {
        lp_mode: true,
        ..Default::default()
    };
    let mut r = QpSolver::new(settings).solve(&prob, None)?;
    if r.status == QpStatus::Optimal && inf_norm(&r.x) > T::lit(UNBOUNDED_NORM) {
        r.status = QpStatus::Unbounded;
    }
    Ok(r)
}

/// Greedy selection of linearly independent rows (modified Gram-Schmidt).
fn independent_rows<T: Real>(g: &Mat<T>, rows: &[usize], flops: &mut u64) -> Vec<usize> {
    let d = g.ncols();
    let mut basis: Vec<Vector<T>> = Vec::new();
    let mut chosen = Vec::new();
    let mut sorted: Vec<usize> = rows.iter().copied().filter(|&i| i < g.nrows()).collect();
    sorted.sort_unstable();
    sorted.dedup();
    for i in sorted {
        if basis.len() == d {
            break;
        }
        let row: Vector<T> = g.row(i).transpose();
        let nrm = row.norm();
        if nrm == T::zero() {
            continue;
        }
        let mut v = row / nrm;
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        *flops += (4 * d * (basis.len() + 1)) as u64;
        let r = v.norm();
        if r > T::tol(1e-9) {
            basis.push(v / r);
            chosen.push(i);
        }
    }
    chosen
}

/// Cholesky factor of `A P⁻¹ Aᵀ` for the working-set rows `A`, or `None`
/// when the rows are numerically dependent. Roundoff can leave an exactly
/// dependent set with a tiny positive pivot, so each squared pivot is
/// compared with its row's own diagonal entry.
fn factor_working_set<T: Real>(m: Mat<T>) -> Option<Cholesky<T, Dyn>> {
    let diag = m.diagonal();
    let c = Cholesky::new(m)?;
    let l = c.l_dirty();
    (0..l.nrows())
        .all(|i| l[(i, i)] * l[(i, i)] > T::tol(1e-20) * diag[i])
        .then_some(c)
}

/// Minimizer of the objective on `{x : G_W x = h_W}`.
fn equality_qp<T: Real>(
    prob: &QpProblem<T>,
    chol: &Cholesky<T, Dyn>,
    w: &[usize],
    flops: &mut u64,
) -> Option<Vector<T>> {
    let d = prob.dim();
    let k = w.len();
    let a = prob.g.select_rows(w);
    let hw = Vector::from_iterator(k, w.iter().map(|&i| prob.h[i]));
    let y = chol.solve(&prob.q);
    let z = chol.solve(&a.transpose());
    let m = &a * &z;
    let mc = Cholesky::new(crate::linalg::symmetrize(&m))?;
    let lambda = -mc.solve(&(&a * &y + hw));
    *flops += (2 * d * d * (k + 1) + 2 * k * k * d + k * k * k / 3 + 2 * k * k + 2 * d * k) as u64;
    Some(-(y + z * lambda))
}

/// Phase 1: minimize a slack `t ≥ 0` with `Gx - t ≤ h` from `x0`.
fn phase_one<T: Real>(
    prob: &QpProblem<T>,
    x0: &Vector<T>,
    settings: &QpSettings,
    flops: &mut u64,
) -> Option<Vector<T>> {
    let d = prob.dim();
    let c = prob.n_constraints();
    let viol = prob.max_violation(x0);
    let mut g = Mat::<T>::zeros(c + 1, d + 1);
    g.view_mut((0, 0), (c, d)).copy_from(&prob.g);
    for i in 0..c {
        g[(i, d)] = -T::one();
    }
    g[(c, d)] = -T::one();
    let mut h = Vector::<T>::zeros(c + 1);
    h.rows_mut(0, c).copy_from(&prob.h);
    let reg = T::lit(LP_REGULARIZATION);
    let p = Mat::<T>::identity(d + 1, d + 1) * reg;
    let mut q = Vector::<T>::zeros(d + 1);
    q[d] = T::one();
    let aux = QpProblem { p, q, g, h };
    let chol = crate::linalg::cholesky(&aux.p, "phase-1 Hessian").ok()?;
    let mut z0 = Vector::<T>::zeros(d + 1);
    z0.rows_mut(0, d).copy_from(x0);
    z0[d] = viol + T::one();
    let sub = QpSettings {
        lp_mode: true,
        ..*settings
    };
    let r = active_set(&aux, &chol, z0, Vec::new(), &sub, flops);
    if r.status != QpStatus::Optimal {
        return None;
    }
    let x = r.x.rows(0, d).into_owned();
    let feas = T::tol(settings.feas_tol) * (T::one() + inf_norm(&prob.h));
    if prob.max_violation(&x) <= feas {
        Some(x)
    } else {
        None
    }
}

/// Primal active-set iterations from a feasible `x` and independent working set.
fn active_set<T: Real>(
    prob: &QpProblem<T>,
    chol: &Cholesky<T, Dyn>,
    mut x: Vector<T>,
    mut w: Vec<usize>,
    settings: &QpSettings,
    flops: &mut u64,
) -> QpResult<T> {
    let d = prob.dim();
    let c = prob.n_constraints();
    let max_iter = settings.max_iter.unwrap_or(50 * (c + d) + 100);
    let mut in_w = vec![false; c];
    for &i in &w {
        in_w[i] = true;
    }
    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut repeats = 0usize;
    let stat_tol = T::tol(settings.stationarity_tol);
    let dual_tol = T::tol(settings.dual_tol);
    let row_norms: Vec<T> = (0..c).map(|i| prob.g.row(i).norm()).collect();
    let mut newest: Option<usize> = None;

    let mut status = QpStatus::MaxIter;
    let mut lambda_w = Vector::<T>::zeros(0);
    let mut iterations = 0;
    let mut full_step = false;
    while iterations < max_iter {
        iterations += 1;
        w.sort_unstable();
        let count = seen.entry(w.clone()).or_insert(0);
        *count += 1;
        if *count > 1 {
            repeats += 1;
        }

        let k = w.len();
        let (g, p, lam) = if settings.lp_mode {
            // projected steepest descent on the linear objective
            let g = prob.q.clone();
            if k == 0 {
                (g.clone(), -g, Vector::zeros(0))
            } else {
                let a = prob.g.select_rows(&w);
                let m = crate::linalg::symmetrize(&(&a * a.transpose()));
                *flops += (2 * k * k * d) as u64;
                let Some(mc) = factor_working_set(m) else {
                    // numerically dependent working set; drop the newest row
                    let j = newest
                        .and_then(|i| w.iter().position(|&r| r == i))
                        .unwrap_or(w.len() - 1);
                    let i = w.remove(j);
                    in_w[i] = false;
                    newest = None;
                    continue;
                };
                let mut lam = -mc.solve(&(&a * &g));
                *flops += (k * k * k / 3 + 2 * k * k + 4 * k * d) as u64;
                let p = if k >= d {
                    Vector::zeros(d)
                } else {
                    // one refinement pass pulls A p back to zero
                    let p = -(&g + a.transpose() * &lam);
                    let dl = mc.solve(&(&a * &p));
                    *flops += (4 * k * d + 2 * k * k) as u64;
                    lam += &dl;
                    p - a.transpose() * dl
                };
                (g, p, lam)
            }
        } else {
            let g = &prob.p * &x + &prob.q;
            let y = chol.solve(&g);
            *flops += (4 * d * d + d) as u64;
            if k == 0 {
                (g, -y, Vector::zeros(0))
            } else {
                let a = prob.g.select_rows(&w);
                let z = chol.solve(&a.transpose());
                let m = crate::linalg::symmetrize(&(&a * &z));
                *flops += (2 * d * d * k + 2 * k * k * d) as u64;
                let Some(mc) = factor_working_set(m) else {
                    // numerically dependent working set; drop the newest row
                    let j = newest
                        .and_then(|i| w.iter().position(|&r| r == i))
                        .unwrap_or(w.len() - 1);
                    let i = w.remove(j);
                    in_w[i] = false;
                    newest = None;
                    continue;
                };
                let mut lam = -mc.solve(&(&a * &y));
                *flops += (k * k * k / 3 + 2 * k * k + 2 * k * d) as u64;
                let p = if k >= d {
                    Vector::zeros(d)
                } else {
                    // one refinement pass pulls A p back to zero
                    let p = -(y + &z * &lam);
                    let dl = mc.solve(&(&a * &p));
                    *flops += (2 * d * k + d + 4 * k * d + 2 * k * k) as u64;
                    lam += &dl;
                    p - z * dl
                };
                (g, p, lam)
            }
        };

        // reduced gradient g + Aᵀλ decides stationarity, scale-relative
        let mut red = g.clone();
        for (j, &i) in w.iter().enumerate() {
            red += prob.g.row(i).transpose() * lam[j];
        }
        let scale = T::one()
            + inf_norm(&g)
            + w.iter()
                .enumerate()
                .fold(T::zero(), |a, (j, &i)| a.max((lam[j] * row_norms[i]).abs()));
        // an unblocked full QP step lands on the working-set minimizer exactly
        let stationary = k >= d
            || full_step
            || inf_norm(&red) <= stat_tol * scale
            || inf_norm(&p).is_zero();
        full_step = false;

        if stationary {
            // most negative multiplier leaves; after a repeated working set
            // the lowest row index leaves instead (Bland), which cannot cycle
            let lam_scale = T::one() + inf_norm(&lam);
            let mut drop: Option<(usize, T)> = None;
            for j in 0..w.len() {
                if lam[j] < -dual_tol * lam_scale {
                    match drop {
                        Some(_) if repeats > 0 => {}
                        Some((_, best)) if lam[j] >= best => {}
                        _ => drop = Some((j, lam[j])),
                    }
                }
            }
            match drop {
                None => {
                    status = QpStatus::Optimal;
                    lambda_w = lam;
                    break;
                }
                Some((j, _)) => {
                    let i = w.remove(j);
                    in_w[i] = false;
                    continue;
                }
            }
        }

        // ratio test over rows outside the working set
        let pn = p.norm();
        let mut alpha = if settings.lp_mode {
            T::max_value().unwrap_or_else(|| T::lit(f64::MAX))
        } else {
            T::one()
        };
        let mut block: Option<usize> = None;
        let mut bounded = false;
        // rows in the span of the working set cannot block in exact
        // arithmetic; nearly orthogonal or degenerate blockers are checked
        let mut spanned: Vec<usize> = Vec::new();
        loop {
            for i in 0..c {
                if in_w[i] || spanned.contains(&i) {
                    continue;
                }
                let ap = prob.g.row(i).dot(&p.transpose());
                if ap <= T::tol(1e-12) * row_norms[i] * pn {
                    continue;
                }
                bounded = true;
                let slack = prob.h[i] - prob.g.row(i).dot(&x.transpose());
                let a_i = (slack / ap).max(T::zero());
                if a_i < alpha - T::tol(1e-15) * (T::one() + alpha)
                    || (block.is_none() && a_i < alpha)
                {
                    alpha = a_i;
                    block = Some(i);
                }
            }
            let Some(i) = block else { break };
            let ap = prob.g.row(i).dot(&p.transpose());
            let degenerate = alpha <= T::tol(1e-10) * (T::one() + inf_norm(&x)) / (T::one() + pn);
            if w.is_empty() || (ap > T::tol(1e-6) * row_norms[i] * pn && !degenerate) {
                break;
            }
            let a = prob.g.select_rows(&w);
            let q = a.transpose().qr().q();
            let gi = prob.g.row(i).transpose();
            let resid = &gi - &q * (q.transpose() * &gi);
            *flops += (4 * d * w.len() * w.len() + 4 * d * w.len()) as u64;
            if resid.norm() > T::tol(1e-9) * row_norms[i] {
                break;
            }
            spanned.push(i);
            block = None;
            alpha = if settings.lp_mode {
                T::max_value().unwrap_or_else(|| T::lit(f64::MAX))
            } else {
                T::one()
            };
        }
        *flops += (4 * d * (c - w.len()) + 2 * d) as u64;
        if settings.lp_mode && !bounded && !prob.q.is_empty() {
            // no row limits the descent direction
            x += &p;
            status = QpStatus::Unbounded;
            break;
        }
        x += p * alpha;
        full_step = !settings.lp_mode && block.is_none();
        newest = block;
        if let Some(i) = block {
            w.push(i);
            in_w[i] = true;
        }
    }

    w.sort_unstable();
    let mut lambda = Vector::<T>::zeros(c);
    if status == QpStatus::Optimal {
        for (j, &i) in w.iter().enumerate() {
            if j < lambda_w.len() {
                lambda[i] = lambda_w[j].max(T::zero());
            }
        }
    }
    let kkt = prob.kkt(&x, &lambda);
    QpResult {
        x,
        lambda,
        status,
        kkt_residual: kkt.max(),
        iterations,
        working_set: w,
        flops: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat<f64> {
        Mat::from_row_slice(r, c, v)
    }
    fn v(x: &[f64]) -> Vector<f64> {
        Vector::from_row_slice(x)
    }

    #[test]
    fn unconstrained_identity() {
        let prob = QpProblem::unconstrained(m(2, 2, &[2.0, 0.0, 0.0, 2.0]), v(&[0.0, 0.0])).unwrap();
        let r = solve(&prob, None).unwrap();
        assert!(r.is_optimal());
        assert_eq!(r.x, v(&[0.0, 0.0]));
    }

    #[test]
    fn single_point_feasible_set() {
        // x₀ pinned to 1 by two opposite rows
        let prob = QpProblem::new(
            m(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            v(&[-6.0, 0.0]),
            m(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            v(&[1.0, -1.0, 2.0, 2.0]),
        )
        .unwrap();
        let r = solve(&prob, None).unwrap();
        assert!(r.is_optimal());
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.x[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lp_with_optimal_edge_stays_feasible() {
        let g = m(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let h = v(&[1.0, 0.0, 0.0]);
        let r = solve_lp(&v(&[-1.0, -1.0]), &g, &h).unwrap();
        assert!(r.is_optimal());
        assert_relative_eq!(r.x[0] + r.x[1], 1.0, epsilon = 1e-12);
        assert!((&g * &r.x - &h).max() <= 1e-12);
    }

    #[test]
    fn degenerate_vertex_with_dependent_rows() {
        // bounds x_i ≥ -1 plus nonnegative mixes of them, all tight at -𝟙;
        // some mixes are nearly parallel to a bound

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 4;
        for _ in 0..2000 {
            let extra = 6;
            let mut g = Mat::zeros(d + extra, d);
            let mut h = Vector::zeros(d + extra);
            for i in 0..d {
                g[(i, i)] = -1.0;
                h[i] = 1.0;
            }
            for r in d..d + extra {
                for j in 0..d {
                    let c: f64 = if rng.random_bool(0.5) { rng.random_range(0.1..1.0) } else { 0.0 };
                    g[(r, j)] = -c;
                    h[r] += c;
                }
                if rng.random_bool(0.5) {
                    g[(r, 0)] *= 1e-4;
                    h[r] = -g.row(r).sum();
                }
            }
            let mut order: Vec<usize> = (0..d + extra).collect();
            order.sort_by_key(|_| rng.random_range(0..1000));
            let g = g.select_rows(&order);
            let h = Vector::from_iterator(d + extra, order.iter().map(|&i| h[i]));
            let q = Vector::from_fn(d, |_, _| rng.random_range(2.0..5.0));
            let prob = QpProblem::new(Mat::identity(d, d), q, g, h).unwrap();
            let r = solve(&prob, None).unwrap();
            assert!(r.is_optimal(), "{:?} after {} iterations", r.status, r.iterations);
            assert!((&r.x + Vector::from_element(d, 1.0)).amax() < 1e-9, "{}", r.x);
            assert!(prob.max_violation(&r.x) < 1e-9);
        }
    }

    #[test]
    fn single_constraint_by_hand() {
        // (u-2)² = u² - 4u + 4  →  ½·2u² - 4u, u ≤ 1
        let prob = QpProblem::new(m(1, 1, &[2.0]), v(&[-4.0]), m(1, 1, &[1.0]), v(&[1.0])).unwrap();
        let r = solve(&prob, None).unwrap();
        assert!(r.is_optimal());
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.lambda[0], 2.0, epsilon = 1e-12);
        assert_eq!(r.working_set, vec![0]);
    }

    #[test]
    fn infeasible_is_reported() {
        let prob = QpProblem::new(
            m(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            v(&[0.0, 0.0]),
            m(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            v(&[-1.0, -1.0]),
        )
        .unwrap();
        assert_eq!(solve(&prob, None).unwrap().status, QpStatus::Infeasible);
        let zero_row = QpProblem::new(m(1, 1, &[1.0]), v(&[0.0]), m(1, 1, &[0.0]), v(&[-1.0])).unwrap();
        assert_eq!(solve(&zero_row, None).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn lp_examples() {
        // min x s.t. x ≥ 0
        let r = solve_lp(&v(&[1.0]), &m(1, 1, &[-1.0]), &v(&[0.0])).unwrap();
        assert!(r.is_optimal());
        assert!(r.x[0].abs() < 1e-12);
        // min -x s.t. x ≤ 3
        let r = solve_lp(&v(&[-1.0]), &m(1, 1, &[1.0]), &v(&[3.0])).unwrap();
        assert!(r.is_optimal());
        assert_relative_eq!(r.x[0], 3.0, epsilon = 1e-12);
        // min -x with no upper bound
        let r = solve_lp(&v(&[-1.0]), &m(1, 1, &[-1.0]), &v(&[0.0])).unwrap();
        assert_eq!(r.status, QpStatus::Unbounded);
    }

    #[test]
    fn phase_one_far_start() {
        // feasible region x ≥ 5, y ≥ 5; unconstrained minimum at origin
        let prob = QpProblem::new(
            m(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            v(&[0.0, 0.0]),
            m(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            v(&[-5.0, -5.0]),
        )
        .unwrap();
        let r = solve(&prob, None).unwrap();
        assert!(r.is_optimal());
        assert_relative_eq!(r.x, v(&[5.0, 5.0]), epsilon = 1e-10);
        assert_relative_eq!(r.lambda, v(&[5.0, 5.0]), epsilon = 1e-10);
    }

    #[test]
    fn warm_start_with_active_guess() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = 3;
            let c = 8;
            let l = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let p = &l * l.transpose() + Mat::identity(d, d) * 0.5;
            let q = Vector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
            let g = Mat::from_fn(c, d, |_, _| rng.random_range(-1.0..1.0));
            let h = Vector::from_fn(c, |_, _| rng.random_range(0.1..1.0));
            let prob = QpProblem::new(p, q, g, h).unwrap();
            let cold = solve(&prob, None).unwrap();
            assert!(cold.is_optimal());
            let warm = solve(&prob, Some(&WarmStart::from_result(&cold))).unwrap();
            assert!(warm.is_optimal());
            assert!((&warm.x - &cold.x).norm() < 1e-8);
            assert!(warm.iterations <= 2, "warm start took {} iterations", warm.iterations);
        }
    }

    #[test]
    fn single_precision_path() {
        let prob = QpProblem::new(
            Mat::<f32>::from_row_slice(1, 1, &[2.0]),
            Vector::from_row_slice(&[-4.0f32]),
            Mat::from_row_slice(1, 1, &[1.0f32]),
            Vector::from_row_slice(&[1.0f32]),
        )
        .unwrap();
        let r = solve(&prob, None).unwrap();
        assert!(r.is_optimal());
        assert!((r.x[0] - 1.0).abs() < 1e-5);
        assert!((r.lambda[0] - 2.0).abs() < 1e-4);
    }
}
