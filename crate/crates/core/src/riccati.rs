//! Discrete algebraic Riccati equation and the unconstrained LQR gain.

use nalgebra::LU;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::LtiSystem;
use crate::scalar::Real;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution<T: Real> {
    /// P*, the unconstrained value function is xᵀP*x.
    pub p: Mat<T>,
    /// K*, the unconstrained optimal law is u = -K*x.
    pub k: Mat<T>,
    pub residual_norm: T,
    pub iterations: usize,
}

impl<T: Real> RiccatiSolution<T> {
    /// Closed-loop matrix `A - B K*`.
    pub fn closed_loop(&self, sys: &LtiSystem<T>) -> Mat<T> {
        &sys.a - &sys.b * &self.k
    }
}

/// `(R + BᵀPB)⁻¹ BᵀPA` through a Cholesky factorization.
pub fn lqr_gain<T: Real>(sys: &LtiSystem<T>, p: &Mat<T>) -> Result<Mat<T>> {
    let btp = sys.b.transpose() * p;
    let s = &sys.r + &btp * &sys.b;
    let chol = linalg::cholesky(&s, "R + BᵀPB")?;
    Ok(chol.solve(&(btp * &sys.a)))
}

fn riccati_map<T: Real>(sys: &LtiSystem<T>, p: &Mat<T>) -> Result<Mat<T>> {
    let atp = sys.a.transpose() * p;
    let k = lqr_gain(sys, p)?;
    let next = &atp * &sys.a - &atp * &sys.b * k + &sys.q;
    Ok(linalg::symmetrize(&next))
}

/// Fixed-point iteration `P ← AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA + Q` from `P₀ = Q`.
///
/// The stopping rule is `‖P_{k+1} − P_k‖_F ≤ tol · max(1, ‖P_{k+1}‖_F)`.
pub fn solve_dare<T: Real>(
    sys: &LtiSystem<T>,
    tol: T,
    max_iter: usize,
) -> Result<RiccatiSolution<T>> {
    let mut p = sys.q.clone();
    let mut last = T::zero();
    for it in 1..=max_iter {
        let next = riccati_map(sys, &p)?;
        let step = linalg::frobenius(&(&next - &p));
        p = next;
        last = step;
        if !step.is_finite_val() {
            break;
        }
        if step <= tol * linalg::frobenius(&p).max(T::one()) {
            let k = lqr_gain(sys, &p)?;
            let residual_norm = dare_residual(&p, sys)?;
            return Ok(RiccatiSolution {
                p,
                k,
                residual_norm,
                iterations: it,
            });
        }
    }
    Err(Error::RiccatiDiverged {
        iterations: max_iter,
        last_residual: last.as_f64(),
    })
}

/// Solves with the default tolerance (scaled to the scalar type) and cap.
pub fn solve_dare_default<T: Real>(sys: &LtiSystem<T>) -> Result<RiccatiSolution<T>> {
    solve_dare(sys, T::tol(DEFAULT_TOL), DEFAULT_MAX_ITER)
}

/// Frobenius norm of `AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA + Q − P`.
pub fn dare_residual<T: Real>(p: &Mat<T>, sys: &LtiSystem<T>) -> Result<T> {
    let atp = sys.a.transpose() * p;
    let btp = sys.b.transpose() * p;
    let s = &sys.r + &btp * &sys.b;
    let lu = LU::new(s);
    let gain = lu
        .solve(&(btp * &sys.a))
        .ok_or_else(|| Error::NotPositiveDefinite("R + BᵀPB is singular".into()))?;
    let defect = &atp * &sys.a - &atp * &sys.b * gain + &sys.q - p;
    Ok(linalg::frobenius(&defect))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64, q: f64, r: f64) -> LtiSystem<f64> {
        LtiSystem::new(
            Mat::from_row_slice(1, 1, &[a]),
            Mat::from_row_slice(1, 1, &[b]),
            Mat::from_row_slice(1, 1, &[q]),
            Mat::from_row_slice(1, 1, &[r]),
        )
        .unwrap()
    }

    #[test]
    fn golden_ratio_case() {
        let sys = scalar(1.0, 1.0, 1.0, 1.0);
        let sol = solve_dare_default(&sys).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert_relative_eq!(sol.p[(0, 0)], phi, epsilon = 1e-12);
        assert_relative_eq!(sol.k[(0, 0)], phi - 1.0, epsilon = 1e-12);
        assert!(sol.residual_norm <= 1e-10);
    }

    #[test]
    fn zero_dynamics_collapse_to_q() {
        let sys = LtiSystem::new(
            Mat::zeros(2, 2),
            Mat::from_row_slice(2, 1, &[1.0, 0.5]),
            Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            Mat::identity(1, 1),
        )
        .unwrap();
        let sol = solve_dare_default(&sys).unwrap();
        assert_eq!(sol.p, sys.q);
        assert_eq!(sol.k, Mat::zeros(1, 2));
        assert_eq!(dare_residual(&sys.q, &sys).unwrap(), 0.0);
    }

    #[test]
    fn residual_at_doubled_solution() {
        // P = 1 + √5 gives P²/(1+P) = 2√5 − 2, so the defect is 2√5 − 3.
        let sys = scalar(1.0, 1.0, 1.0, 1.0);
        let p = Mat::from_row_slice(1, 1, &[1.0 + 5f64.sqrt()]);
        let res = dare_residual(&p, &sys).unwrap();
        assert_relative_eq!(res, 2.0 * 5f64.sqrt() - 3.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_loop_is_stable() {
        let sys = LtiSystem::new(
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            Mat::from_row_slice(2, 1, &[0.4, 0.6]),
            Mat::identity(2, 2),
            Mat::identity(1, 1) * 0.1,
        )
        .unwrap();
        let sol = solve_dare_default(&sys).unwrap();
        assert!(linalg::spectral_radius(&sol.closed_loop(&sys)) < 1.0 - 1e-8);
        assert!(linalg::is_positive_definite(&sol.p, 1e-10));
    }

    #[test]
    fn unstabilizable_pair_fails() {
        // unstable mode that the input cannot reach
        let sys = LtiSystem::new(
            Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
            Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
        .unwrap();
        let err = solve_dare(&sys, 1e-12, 2_000).unwrap_err();
        assert!(matches!(err, Error::RiccatiDiverged { .. }));
    }

    #[test]
    fn single_precision() {
        let sys = LtiSystem::new(
            Mat::<f32>::from_row_slice(1, 1, &[1.0]),
            Mat::from_row_slice(1, 1, &[1.0]),
            Mat::from_row_slice(1, 1, &[1.0]),
            Mat::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let sol = solve_dare_default(&sys).unwrap();
        assert!((sol.p[(0, 0)] - 1.618_034).abs() < 1e-5);
    }
}
