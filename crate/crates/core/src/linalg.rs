//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Mat<T> = DMatrix<T>;
pub type Vector<T> = DVector<T>;

/// `(M + Mᵀ) / 2`.
pub fn symmetrize<T: Real>(m: &Mat<T>) -> Mat<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Largest absolute entry of `M - Mᵀ`.
pub fn asymmetry<T: Real>(m: &Mat<T>) -> T {
    let d = m - m.transpose();
    d.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues<T: Real>(m: &Mat<T>) -> Vec<T> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut v: Vec<T> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

pub fn lambda_max<T: Real>(m: &Mat<T>) -> T {
    sym_eigenvalues(m).last().copied().unwrap_or_else(T::zero)
}

pub fn lambda_min<T: Real>(m: &Mat<T>) -> T {
    sym_eigenvalues(m).first().copied().unwrap_or_else(T::zero)
}

/// Positive definiteness by the smallest eigenvalue.
pub fn is_positive_definite<T: Real>(m: &Mat<T>, tol: T) -> bool {
    m.is_square() && (m.nrows() == 0 || lambda_min(m) > tol)
}

pub fn frobenius<T: Real>(m: &Mat<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc + *v * *v).sqrt()
}

pub fn inf_norm<T: Real>(v: &Vector<T>) -> T {
    v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

pub fn cholesky<T: Real>(m: &Mat<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Spectral radius estimate from the Gelfand formula `‖Aᵏ‖^{1/k}` with
/// repeated squaring. Converges from above for every square matrix.
pub fn spectral_radius<T: Real>(a: &Mat<T>) -> T {
    let n = a.nrows();
    if n == 0 {
        return T::zero();
    }
    let mut m = a.clone();
    let mut log_scale = 0.0f64;
    let mut k = 1.0f64;
    let mut estimate = frobenius(&m).as_f64();
    for _ in 0..40 {
        let nrm = frobenius(&m).as_f64();
        if nrm == 0.0 {
            return T::zero();
        }
        // keep the iterate normalized; the scale lives in log space
        m /= T::lit(nrm);
        log_scale += nrm.ln();
        estimate = (log_scale / k).exp();
        m = &m * &m;
        log_scale *= 2.0;
        k *= 2.0;
    }
    T::lit(estimate)
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm<T: Real>(a: &Mat<T>) -> Mat<T> {
    let n = a.nrows();
    let norm = a.iter().fold(0.0f64, |acc, v| acc.max(v.as_f64().abs())) * n as f64;
    let mut squarings = 0u32;
    let mut scaled = norm;
    while scaled > 0.25 {
        scaled *= 0.5;
        squarings += 1;
    }
    let s = a / T::lit(2f64.powi(squarings as i32));
    let mut term = Mat::<T>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=20 {
        term = &term * &s / T::lit(k as f64);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Zero-order-hold discretization of `ẋ = Ac x + Bc u` with period `dt`.
pub fn zoh<T: Real>(ac: &Mat<T>, bc: &Mat<T>, dt: T) -> (Mat<T>, Mat<T>) {
    let n = ac.nrows();
    let m = bc.ncols();
    let mut aug = Mat::<T>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * dt));
    let e = expm(&aug);
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

/// Block-diagonal identity-like helper: `c · I`.
pub fn scaled_identity<T: Real>(n: usize, c: T) -> Mat<T> {
    Mat::<T>::identity(n, n) * c
}

/// Rank of a matrix by SVD with a relative threshold.
pub fn rank<T: Real>(m: &Mat<T>, rel_tol: T) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(T::zero(), |a, b| a.max(*b));
    if smax == T::zero() {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

/// Converts nested rows into a matrix; every row must have `ncols` entries.
pub fn from_rows<T: Real>(rows: &[Vec<f64>], ncols: usize) -> Result<Mat<T>> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Dimension(format!(
                "row {i} has {} entries, expected {ncols}",
                r.len()
            )));
        }
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| T::lit(rows[i][j])))
}

pub fn to_rows<T: Real>(m: &Mat<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect())
        .collect()
}

pub fn to_vec_f64<T: Real>(v: &Vector<T>) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

pub fn from_slice<T: Real>(v: &[f64]) -> Vector<T> {
    Vector::from_iterator(v.len(), v.iter().map(|x| T::lit(*x)))
}

/// `xᵀ M x`.
pub fn quad_form<T: Real>(m: &Mat<T>, x: &Vector<T>) -> T {
    x.dot(&(m * x))
}

pub fn identity<T: Real>(n: usize) -> Mat<T> {
    Mat::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_radius_rotation_and_diag() {
        let a = Mat::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert_relative_eq!(spectral_radius(&a), 0.9, epsilon = 1e-9);
        let d = Mat::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -0.7]);
        assert_relative_eq!(spectral_radius(&d), 0.7, epsilon = 1e-6);
        assert_eq!(spectral_radius(&Mat::<f64>::zeros(3, 3)), 0.0);
    }

    #[test]
    fn expm_matches_scalar_and_rotation() {
        let a = Mat::from_row_slice(1, 1, &[1.3]);
        assert_relative_eq!(expm(&a)[(0, 0)], 1.3f64.exp(), epsilon = 1e-12);
        let t = 0.7f64;
        let r = Mat::from_row_slice(2, 2, &[0.0, t, -t, 0.0]);
        let e = expm(&r);
        assert_relative_eq!(e[(0, 0)], t.cos(), epsilon = 1e-12);
        assert_relative_eq!(e[(0, 1)], t.sin(), epsilon = 1e-12);
    }

    #[test]
    fn zoh_double_integrator() {
        let ac = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let bc = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
        let (a, b) = zoh(&ac, &bc, 0.5);
        assert_relative_eq!(a, Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), epsilon = 1e-12);
        assert_relative_eq!(b, Mat::from_row_slice(2, 1, &[0.125, 0.5]), epsilon = 1e-12);
    }

    #[test]
    fn eigen_helpers() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = sym_eigenvalues(&m);
        assert_relative_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(e[1], 3.0, epsilon = 1e-12);
        assert!(is_positive_definite(&m, 1e-10));
        assert!(!is_positive_definite(&Mat::<f64>::zeros(2, 2), 1e-10));
        assert_eq!(rank(&Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]), 1e-12), 1);
    }
}
