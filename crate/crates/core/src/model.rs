//! Problem instances: the linear system, its cost weights and the polyhedral
//! state, input and initial-condition sets.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::qp;
use crate::riccati;
use crate::scalar::Real;

/// `x⁺ = A x + B u` with stage cost `xᵀQx + uᵀRu`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem<T: Real> {
    pub a: Mat<T>,
    pub b: Mat<T>,
    pub q: Mat<T>,
    pub r: Mat<T>,
}

impl<T: Real> LtiSystem<T> {
    /// Checks dimensions and symmetrizes the weights.
    pub fn new(a: Mat<T>, b: Mat<T>, q: Mat<T>, r: Mat<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B has {} rows, A has {n}",
                b.nrows()
            )));
        }
        let m = b.ncols();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::Dimension(format!(
                "Q is {}x{}, expected {n}x{n}",
                q.nrows(),
                q.ncols()
            )));
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(Error::Dimension(format!(
                "R is {}x{}, expected {m}x{m}",
                r.nrows(),
                r.ncols()
            )));
        }
        let limit = T::lit(1e-12);
        for (name, w) in [("Q", &q), ("R", &r)] {
            let asym = linalg::asymmetry(w);
            if asym > limit {
                warn!("{name} is not symmetric (max |{name} - {name}ᵀ| = {asym}); symmetrizing");
            }
        }
        Ok(Self {
            q: linalg::symmetrize(&q),
            r: linalg::symmetrize(&r),
            a,
            b,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &Vector<T>, u: &Vector<T>) -> Vector<T> {
        &self.a * x + &self.b * u
    }

    pub fn stage_cost(&self, x: &Vector<T>, u: &Vector<T>) -> T {
        linalg::quad_form(&self.q, x) + linalg::quad_form(&self.r, u)
    }

    /// Stacked predictions `[x₁; …; x_N] = Sx x₀ + Su [u₀; …; u_{N−1}]`.
    pub fn prediction(&self, horizon: usize) -> (Mat<T>, Mat<T>) {
        let (n, m) = (self.n(), self.m());
        let mut sx = Mat::zeros(horizon * n, n);
        let mut su = Mat::zeros(horizon * n, horizon * m);
        let mut pow = Mat::<T>::identity(n, n);
        // powers[k] = A^k B
        let mut powers_b = Vec::with_capacity(horizon);
        for k in 0..horizon {
            powers_b.push(&pow * &self.b);
            pow = &self.a * pow;
            sx.view_mut((k * n, 0), (n, n)).copy_from(&pow);
        }
        for k in 0..horizon {
            for j in 0..=k {
                su.view_mut((k * n, j * m), (n, m))
                    .copy_from(&powers_b[k - j]);
            }
        }
        (sx, su)
    }
}

/// `{x : H x ≤ h}`. A polyhedron with no rows is the whole space.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron<T: Real> {
    pub hmat: Mat<T>,
    pub hvec: Vector<T>,
}

impl<T: Real> Polyhedron<T> {
    pub fn new(hmat: Mat<T>, hvec: Vector<T>) -> Result<Self> {
        if hmat.nrows() != hvec.len() {
            return Err(Error::Dimension(format!(
                "halfspace matrix has {} rows but offset vector has {}",
                hmat.nrows(),
                hvec.len()
            )));
        }
        Ok(Self { hmat, hvec })
    }

    /// The whole space `ℝᵈ`.
    pub fn universe(dim: usize) -> Self {
        Self {
            hmat: Mat::zeros(0, dim),
            hvec: Vector::zeros(0),
        }
    }

    /// `{x : ‖x‖∞ ≤ bound}`.
    pub fn inf_ball(dim: usize, bound: T) -> Self {
        Self::boxed(&vec![-bound; dim], &vec![bound; dim])
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`.
    pub fn boxed(lo: &[T], hi: &[T]) -> Self {
        let d = lo.len();
        let mut hmat = Mat::zeros(2 * d, d);
        let mut hvec = Vector::zeros(2 * d);
        for i in 0..d {
            hmat[(2 * i, i)] = T::one();
            hvec[2 * i] = hi[i];
            hmat[(2 * i + 1, i)] = -T::one();
            hvec[2 * i + 1] = -lo[i];
        }
        Self { hmat, hvec }
    }

    pub fn dim(&self) -> usize {
        self.hmat.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.hvec.len()
    }

    pub fn is_universe(&self) -> bool {
        self.n_rows() == 0
    }

    /// Intersection by row stacking.
    pub fn intersect(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "intersecting sets of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let r1 = self.n_rows();
        let r2 = other.n_rows();
        let mut hmat = Mat::zeros(r1 + r2, self.dim());
        hmat.view_mut((0, 0), (r1, self.dim())).copy_from(&self.hmat);
        hmat.view_mut((r1, 0), (r2, self.dim())).copy_from(&other.hmat);
        let mut hvec = Vector::zeros(r1 + r2);
        hvec.rows_mut(0, r1).copy_from(&self.hvec);
        hvec.rows_mut(r1, r2).copy_from(&other.hvec);
        Ok(Self { hmat, hvec })
    }

    /// True when a row reads `0ᵀx ≤ negative`.
    pub fn has_contradictory_row(&self) -> bool {
        (0..self.n_rows()).any(|i| {
            self.hmat.row(i).iter().all(|v| *v == T::zero()) && self.hvec[i] < T::zero()
        })
    }

    /// Emptiness by a phase-1 feasibility problem.
    pub fn is_empty(&self) -> bool {
        if self.has_contradictory_row() {
            return true;
        }
        if self.is_universe() {
            return false;
        }
        let q = Vector::zeros(self.dim());
        match qp::solve_lp(&q, &self.hmat, &self.hvec) {
            Ok(r) => r.status == qp::QpStatus::Infeasible,
            Err(_) => true,
        }
    }

    /// Origin strictly inside: every non-trivial normalized row has `h > 0`.
    pub fn contains_origin_strictly(&self) -> bool {
        (0..self.n_rows()).all(|i| {
            let nrm = self.hmat.row(i).norm();
            if nrm == T::zero() {
                self.hvec[i] >= T::zero()
            } else {
                self.hvec[i] / nrm > T::zero()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance<T: Real> {
    pub system: LtiSystem<T>,
    /// X
    pub state_set: Polyhedron<T>,
    /// U
    pub input_set: Polyhedron<T>,
    /// X₀
    pub region_of_interest: Polyhedron<T>,
}

impl<T: Real> ProblemInstance<T> {
    pub fn new(
        system: LtiSystem<T>,
        state_set: Polyhedron<T>,
        input_set: Polyhedron<T>,
        region_of_interest: Polyhedron<T>,
    ) -> Result<Self> {
        let (n, m) = (system.n(), system.m());
        if state_set.dim() != n || region_of_interest.dim() != n {
            return Err(Error::Dimension(format!(
                "state sets must live in dimension {n}, got {} and {}",
                state_set.dim(),
                region_of_interest.dim()
            )));
        }
        if input_set.dim() != m {
            return Err(Error::Dimension(format!(
                "input set must live in dimension {m}, got {}",
                input_set.dim()
            )));
        }
        Ok(Self {
            system,
            state_set,
            input_set,
            region_of_interest,
        })
    }
}

/// Outcome of [`validate`]. Structural problems are errors; everything that
/// makes an instance unusable but well-formed is listed in `issues`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub issues: Vec<String>,
    pub q_eigenvalues: Vec<f64>,
    pub r_eigenvalues: Vec<f64>,
    pub stabilizable: bool,
    pub dare_residual: Option<f64>,
    pub state_set_contains_origin: bool,
    pub input_set_contains_origin: bool,
    pub region_within_state_set: bool,
}

/// Checks the verifiable parts of the standing assumptions: positive definite
/// weights, a stabilizable pair (via Riccati convergence), constraint sets
/// with the origin in their interior and `X₀ ⊆ X`.
pub fn validate<T: Real>(instance: &ProblemInstance<T>) -> Result<ValidationReport> {
    let sys = &instance.system;
    // re-run the structural checks in case fields were edited after construction
    LtiSystem::new(sys.a.clone(), sys.b.clone(), sys.q.clone(), sys.r.clone())?;
    ProblemInstance::new(
        sys.clone(),
        instance.state_set.clone(),
        instance.input_set.clone(),
        instance.region_of_interest.clone(),
    )?;

    let mut issues = Vec::new();
    let pd_tol = T::tol(1e-10);
    let q_eigs = linalg::sym_eigenvalues(&sys.q);
    let r_eigs = linalg::sym_eigenvalues(&sys.r);
    let to_f64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    if q_eigs.first().is_some_and(|e| *e <= pd_tol) {
        issues.push(format!(
            "Q not positive definite (eigenvalues {:?})",
            to_f64(&q_eigs)
        ));
    }
    if r_eigs.first().is_some_and(|e| *e <= pd_tol) {
        issues.push(format!(
            "R not positive definite (eigenvalues {:?})",
            to_f64(&r_eigs)
        ));
    }

    let mut stabilizable = false;
    let mut dare_residual = None;
    if issues.is_empty() {
        match riccati::solve_dare(sys, T::tol(riccati::DEFAULT_TOL), riccati::DEFAULT_MAX_ITER) {
            Ok(sol) => {
                stabilizable = true;
                dare_residual = Some(sol.residual_norm.as_f64());
            }
            Err(e) => issues.push(format!("pair (A, B) appears unstabilizable: {e}")),
        }
    }

    let sets = [
        ("state", &instance.state_set),
        ("input", &instance.input_set),
        ("region-of-interest", &instance.region_of_interest),
    ];
    for (name, set) in sets {
        if set.is_empty() {
            issues.push(format!("empty {name} set"));
        }
    }
    let x_origin = instance.state_set.contains_origin_strictly();
    let u_origin = instance.input_set.contains_origin_strictly();
    if !x_origin {
        issues.push("state set does not contain the origin in its interior".into());
    }
    if !u_origin {
        issues.push("input set does not contain the origin in its interior".into());
    }
    let within = crate::polytope::is_subset(
        &instance.region_of_interest,
        &instance.state_set,
        T::tol(1e-9),
    );
    if !within {
        issues.push("region of interest is not contained in the state set".into());
    }

    Ok(ValidationReport {
        valid: issues.is_empty(),
        issues,
        q_eigenvalues: to_f64(&q_eigs),
        r_eigenvalues: to_f64(&r_eigs),
        stabilizable,
        dare_residual,
        state_set_contains_origin: x_origin,
        input_set_contains_origin: u_origin,
        region_within_state_set: within,
    })
}

// ---------------------------------------------------------------------------
// File format

/// Halfspace pair as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyhedronFile {
    pub dim: usize,
    #[serde(rename = "H")]
    pub hmat: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

/// Problem instance as stored on disk: nested arrays, all floats 64-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "X")]
    pub state_set: PolyhedronFile,
    #[serde(rename = "U")]
    pub input_set: PolyhedronFile,
    #[serde(rename = "X0")]
    pub region_of_interest: PolyhedronFile,
}

fn ncols_of(rows: &[Vec<f64>], fallback: usize) -> usize {
    rows.first().map_or(fallback, |r| r.len())
}

impl PolyhedronFile {
    pub fn from_polyhedron<T: Real>(p: &Polyhedron<T>) -> Self {
        Self {
            dim: p.dim(),
            hmat: linalg::to_rows(&p.hmat),
            h: linalg::to_vec_f64(&p.hvec),
        }
    }

    pub fn to_polyhedron<T: Real>(&self) -> Result<Polyhedron<T>> {
        let hmat = linalg::from_rows(&self.hmat, self.dim)?;
        Polyhedron::new(hmat, linalg::from_slice(&self.h))
    }
}

impl InstanceFile {
    pub fn from_instance<T: Real>(inst: &ProblemInstance<T>) -> Self {
        let s = &inst.system;
        Self {
            a: linalg::to_rows(&s.a),
            b: linalg::to_rows(&s.b),
            q: linalg::to_rows(&s.q),
            r: linalg::to_rows(&s.r),
            state_set: PolyhedronFile::from_polyhedron(&inst.state_set),
            input_set: PolyhedronFile::from_polyhedron(&inst.input_set),
            region_of_interest: PolyhedronFile::from_polyhedron(&inst.region_of_interest),
        }
    }

    pub fn to_instance<T: Real>(&self) -> Result<ProblemInstance<T>> {
        let n = self.a.len();
        let a = linalg::from_rows(&self.a, ncols_of(&self.a, n))?;
        let b = linalg::from_rows(&self.b, ncols_of(&self.b, 0))?;
        let q = linalg::from_rows(&self.q, ncols_of(&self.q, n))?;
        let r = linalg::from_rows(&self.r, ncols_of(&self.r, 0))?;
        let system = LtiSystem::new(a, b, q, r)?;
        ProblemInstance::new(
            system,
            self.state_set.to_polyhedron()?,
            self.input_set.to_polyhedron()?,
            self.region_of_interest.to_polyhedron()?,
        )
    }
}

impl ProblemInstance<f64> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceFile::from_instance(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        file.to_instance()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
