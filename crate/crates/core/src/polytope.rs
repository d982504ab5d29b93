//! Halfspace-form polyhedral operations: admissible and invariant sets,
//! redundancy removal, 2-D vertex enumeration and 2-D projections.

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{LtiSystem, Polyhedron};
use crate::qp::{self, QpStatus};
use crate::scalar::Real;

/// Membership tolerance per row.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSetResult<T: Real> {
    pub set: Polyhedron<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// `{x : x ∈ X, −Kx ∈ U}` by row stacking.
pub fn admissible_set<T: Real>(
    state_set: &Polyhedron<T>,
    input_set: &Polyhedron<T>,
    k: &Mat<T>,
) -> Result<Polyhedron<T>> {
    if k.nrows() != input_set.dim() || k.ncols() != state_set.dim() {
        return Err(Error::Dimension(format!(
            "gain is {}x{}, sets have dimensions {} (state) and {} (input)",
            k.nrows(),
            k.ncols(),
            state_set.dim(),
            input_set.dim()
        )));
    }
    let image = Polyhedron::new(-(&input_set.hmat * k), input_set.hvec.clone())?;
    state_set.intersect(&image)
}

/// `{x : H A x ≤ h}` for `set = {H x ≤ h}`.
pub fn preimage<T: Real>(set: &Polyhedron<T>, a: &Mat<T>) -> Polyhedron<T> {
    Polyhedron {
        hmat: &set.hmat * a,
        hvec: set.hvec.clone(),
    }
}

pub fn contains<T: Real>(set: &Polyhedron<T>, x: &Vector<T>) -> bool {
    contains_tol(set, x, T::tol(MEMBERSHIP_TOL))
}

pub fn contains_tol<T: Real>(set: &Polyhedron<T>, x: &Vector<T>, tol: T) -> bool {
    let slack = &set.hvec - &set.hmat * x;
    slack.iter().all(|s| *s >= -tol)
}

/// `max cᵀx` over the set. `None` when the set is empty or unbounded in `c`.
pub fn support<T: Real>(set: &Polyhedron<T>, c: &Vector<T>) -> Result<Option<(T, Vector<T>)>> {
    if set.is_universe() {
        return Ok(if c.iter().all(|v| *v == T::zero()) {
            Some((T::zero(), Vector::zeros(set.dim())))
        } else {
            None
        });
    }
    let res = qp::solve_lp(&(-c), &set.hmat, &set.hvec)?;
    Ok(match res.status {
        QpStatus::Optimal => Some((c.dot(&res.x), res.x)),
        _ => None,
    })
}

/// `inner ⊆ outer`, decided by one LP per row of `outer`.
pub fn is_subset<T: Real>(inner: &Polyhedron<T>, outer: &Polyhedron<T>, tol: T) -> bool {
    if inner.is_empty() {
        return true;
    }
    (0..outer.n_rows()).all(|i| {
        let c = outer.hmat.row(i).transpose();
        if c.iter().all(|v| *v == T::zero()) {
            return outer.hvec[i] >= -tol;
        }
        match support(inner, &c) {
            Ok(Some((v, _))) => v <= outer.hvec[i] + tol,
            _ => false,
        }
    })
}

/// Scales every row to unit Euclidean norm. Trivial rows `0ᵀx ≤ h` with
/// `h ≥ 0` are dropped; a contradictory row is kept as is.
pub fn normalize<T: Real>(set: &Polyhedron<T>) -> Polyhedron<T> {
    let mut rows = Vec::new();
    let mut offs = Vec::new();
    for i in 0..set.n_rows() {
        let r = set.hmat.row(i);
        let nrm = r.norm();
        if nrm == T::zero() {
            if set.hvec[i] < T::zero() {
                rows.push(r.into_owned());
                offs.push(set.hvec[i]);
            }
            continue;
        }
        rows.push(r / nrm);
        offs.push(set.hvec[i] / nrm);
    }
    from_row_list(set.dim(), &rows, &offs)
}

fn from_row_list<T: Real>(
    dim: usize,
    rows: &[nalgebra::RowDVector<T>],
    offs: &[T],
) -> Polyhedron<T> {
    let mut hmat = Mat::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        hmat.row_mut(i).copy_from(r);
    }
    Polyhedron {
        hmat,
        hvec: Vector::from_column_slice(offs),
    }
}

/// Drops rows implied by the others. Each test maximizes the row over the
/// remaining rows with the tested row relaxed by one, which keeps the LP
/// bounded whenever the set itself is bounded; rows whose LP is unbounded
/// are kept.
pub fn remove_redundant<T: Real>(set: &Polyhedron<T>) -> Result<Polyhedron<T>> {
    let norm = normalize(set);
    if norm.has_contradictory_row() {
        return Ok(norm);
    }
    let tol = T::tol(MEMBERSHIP_TOL);
    let d = norm.dim();
    // exact and near duplicates: keep the tightest copy
    let mut rows: Vec<nalgebra::RowDVector<T>> = Vec::new();
    let mut offs: Vec<T> = Vec::new();
    for i in 0..norm.n_rows() {
        let r = norm.hmat.row(i).into_owned();
        if let Some(j) = rows.iter().position(|s| (s - &r).amax() <= tol) {
            offs[j] = offs[j].min(norm.hvec[i]);
        } else {
            rows.push(r);
            offs.push(norm.hvec[i]);
        }
    }

    let mut keep = vec![true; rows.len()];
    for i in 0..rows.len() {
        let mut test_rows = Vec::new();
        let mut test_offs = Vec::new();
        for j in 0..rows.len() {
            if keep[j] {
                test_rows.push(rows[j].clone());
                test_offs.push(if j == i { offs[j] + T::one() } else { offs[j] });
            }
        }
        let relaxed = from_row_list(d, &test_rows, &test_offs);
        if let Some((v, _)) = support(&relaxed, &rows[i].transpose())? {
            if v <= offs[i] + tol {
                keep[i] = false;
            }
        }
    }
    let rows: Vec<_> = rows
        .into_iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(r, _)| r)
        .collect();
    let offs: Vec<_> = offs
        .into_iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(o, _)| o)
        .collect();
    Ok(from_row_list(d, &rows, &offs))
}

/// Maximal positively invariant subset of `seed` under `x⁺ = Acl x`:
/// `Ω_{k+1} = Ω_k ∩ {x : Acl x ∈ Ω_k}` until the pre-image adds nothing.
pub fn max_positively_invariant<T: Real>(
    acl: &Mat<T>,
    seed: &Polyhedron<T>,
    max_iter: usize,
) -> Result<InvariantSetResult<T>> {
    if acl.nrows() != seed.dim() || acl.ncols() != seed.dim() {
        return Err(Error::Dimension(format!(
            "closed-loop matrix is {}x{}, set dimension {}",
            acl.nrows(),
            acl.ncols(),
            seed.dim()
        )));
    }
    let tol = T::tol(MEMBERSHIP_TOL);
    let mut omega = remove_redundant(seed)?;
    for it in 1..=max_iter {
        let pre = normalize(&preimage(&omega, acl));
        let mut implied = true;
        for i in 0..pre.n_rows() {
            let c = pre.hmat.row(i).transpose();
            match support(&omega, &c)? {
                Some((v, _)) if v <= pre.hvec[i] + tol => {}
                _ => {
                    implied = false;
                    break;
                }
            }
        }
        if implied {
            return Ok(InvariantSetResult {
                set: omega,
                iterations: it,
                converged: true,
            });
        }
        omega = remove_redundant(&omega.intersect(&pre)?)?;
    }
    Ok(InvariantSetResult {
        set: omega,
        iterations: max_iter,
        converged: false,
    })
}

/// Axis-aligned bounding box `(lo, hi)`.
pub fn bounding_box<T: Real>(set: &Polyhedron<T>) -> Result<(Vector<T>, Vector<T>)> {
    let d = set.dim();
    let mut lo = Vector::zeros(d);
    let mut hi = Vector::zeros(d);
    for i in 0..d {
        let mut e = Vector::zeros(d);
        e[i] = T::one();
        let up = support(set, &e)?;
        let down = support(set, &(-&e))?;
        match (up, down) {
            (Some((u, _)), Some((l, _))) => {
                hi[i] = u;
                lo[i] = -l;
            }
            _ => {
                return Err(Error::Invalid(format!(
                    "set is empty or unbounded along axis {i}"
                )))
            }
        }
    }
    Ok((lo, hi))
}

/// Largest `t ≥ 0` with `from + t·dir` in the set (infinite if unbounded).
pub fn ray_exit<T: Real>(set: &Polyhedron<T>, from: &Vector<T>, dir: &Vector<T>) -> T {
    let slack = &set.hvec - &set.hmat * from;
    let rate = &set.hmat * dir;
    let mut t = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
    for i in 0..set.n_rows() {
        if rate[i] > T::zero() {
            t = t.min(slack[i].max(T::zero()) / rate[i]);
        }
    }
    t
}

/// Counterclockwise convex hull of planar points (monotone chain).
pub fn convex_hull_2d<T: Real>(points: &[[T; 2]], tol: T) -> Vec<[T; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| {
        a[0].partial_cmp(&b[0])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a[1].partial_cmp(&b[1]).unwrap_or(std::cmp::Ordering::Equal))
    });
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &[T; 2], a: &[T; 2], b: &[T; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[T; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[T; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            // drop the middle point when it lies within `tol` of the chord
            while hull.len() >= start + 2 && {
                let (o, a) = (&hull[hull.len() - 2], &hull[hull.len() - 1]);
                let chord = ((p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2)).sqrt();
                cross(o, a, p) <= tol * chord
            } {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    // near-ties in the sort order can leave collinear points behind
    let mut i = 0;
    while hull.len() > 3 && i < hull.len() {
        let k = hull.len();
        let (o, a, p) = (hull[(i + k - 1) % k], hull[i], hull[(i + 1) % k]);
        let chord = ((p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2)).sqrt();
        if cross(&o, &a, &p) <= tol * chord {
            hull.remove(i);
            i = i.saturating_sub(1);
        } else {
            i += 1;
        }
    }
    hull
}

fn polygon_from_vertices<T: Real>(verts: &[[T; 2]]) -> Polyhedron<T> {
    let k = verts.len();
    let mut hmat = Mat::zeros(k, 2);
    let mut hvec = Vector::zeros(k);
    for i in 0..k {
        let a = verts[i];
        let b = verts[(i + 1) % k];
        // outward normal of a counterclockwise edge
        let nx = b[1] - a[1];
        let ny = a[0] - b[0];
        let nrm = (nx * nx + ny * ny).sqrt();
        hmat[(i, 0)] = nx / nrm;
        hmat[(i, 1)] = ny / nrm;
        hvec[i] = (nx * a[0] + ny * a[1]) / nrm;
    }
    Polyhedron { hmat, hvec }
}

/// Vertices of a bounded planar polyhedron in counterclockwise order.
pub fn vertices_2d<T: Real>(set: &Polyhedron<T>) -> Result<Vec<Vector<T>>> {
    if set.dim() != 2 {
        return Err(Error::Unsupported(format!(
            "vertex enumeration is implemented for dimension 2, got {}",
            set.dim()
        )));
    }
    bounding_box(set)?;
    let tol = T::tol(1e-7);
    let mut pts = Vec::new();
    let c = set.n_rows();
    for i in 0..c {
        for j in (i + 1)..c {
            let (a11, a12) = (set.hmat[(i, 0)], set.hmat[(i, 1)]);
            let (a21, a22) = (set.hmat[(j, 0)], set.hmat[(j, 1)]);
            let det = a11 * a22 - a12 * a21;
            let scale = (a11.abs() + a12.abs()) * (a21.abs() + a22.abs());
            if det.abs() <= T::tol(1e-12) * scale {
                continue;
            }
            let x = (set.hvec[i] * a22 - a12 * set.hvec[j]) / det;
            let y = (a11 * set.hvec[j] - set.hvec[i] * a21) / det;
            let p = Vector::from_column_slice(&[x, y]);
            if contains_tol(set, &p, tol * (T::one() + x.abs() + y.abs())) {
                pts.push([x, y]);
            }
        }
    }
    Ok(convex_hull_2d(&pts, tol)
        .into_iter()
        .map(|p| Vector::from_column_slice(&p))
        .collect())
}

/// Planar polygon `{(z₀, z₁) : ∃ w, (z, w) ∈ lifted}` as vertices and
/// halfspaces, by iterated support-function refinement. Exact up to LP
/// accuracy for bounded lifted sets.
pub fn project_to_plane<T: Real>(
    lifted: &Polyhedron<T>,
) -> Result<(Vec<Vector<T>>, Polyhedron<T>)> {
    let d = lifted.dim();
    if d < 2 {
        return Err(Error::Dimension("projection needs at least 2 coordinates".into()));
    }
    let support_pt = |dx: T, dy: T| -> Result<[T; 2]> {
        let mut c = Vector::zeros(d);
        c[0] = dx;
        c[1] = dy;
        match support(lifted, &c)? {
            Some((_, z)) => Ok([z[0], z[1]]),
            None => Err(Error::Invalid(
                "projected set is empty or unbounded".into(),
            )),
        }
    };
    let mut pts = Vec::new();
    for k in 0..8 {
        let th = T::lit(k as f64 * std::f64::consts::FRAC_PI_4);
        pts.push(support_pt(th.cos(), th.sin())?);
    }
    let scale = pts
        .iter()
        .fold(T::one(), |acc, p| acc.max(p[0].abs()).max(p[1].abs()));
    let tol = T::tol(1e-7) * scale;
    let mut hull = convex_hull_2d(&pts, tol);
    for _ in 0..10_000 {
        let poly = polygon_from_vertices(&hull);
        let mut added = false;
        for i in 0..poly.n_rows() {
            let (nx, ny) = (poly.hmat[(i, 0)], poly.hmat[(i, 1)]);
            let p = support_pt(nx, ny)?;
            if nx * p[0] + ny * p[1] > poly.hvec[i] + tol {
                pts.push(p);
                added = true;
            }
        }
        if !added {
            let verts = hull.iter().map(|p| Vector::from_column_slice(p)).collect();
            return Ok((verts, poly));
        }
        hull = convex_hull_2d(&pts, tol);
    }
    Err(Error::MaxIterations("polygon projection did not settle".into()))
}

/// Lifted description of the states that reach `target` in `steps` moves
/// under the state and input constraints. Variables are `(x, u₀, …)`.
pub fn controllable_lifted<T: Real>(
    sys: &LtiSystem<T>,
    state_set: &Polyhedron<T>,
    input_set: &Polyhedron<T>,
    target: &Polyhedron<T>,
    steps: usize,
) -> Result<Polyhedron<T>> {
    let (n, m) = (sys.n(), sys.m());
    let dim = n + steps * m;
    let (sx, su) = sys.prediction(steps);
    let mut blocks: Vec<(Mat<T>, Vector<T>)> = Vec::new();
    // x₀ ∈ X
    let mut g = Mat::zeros(state_set.n_rows(), dim);
    g.view_mut((0, 0), (state_set.n_rows(), n)).copy_from(&state_set.hmat);
    blocks.push((g, state_set.hvec.clone()));
    for k in 0..steps {
        let mut g = Mat::zeros(input_set.n_rows(), dim);
        g.view_mut((0, n + k * m), (input_set.n_rows(), m))
            .copy_from(&input_set.hmat);
        blocks.push((g, input_set.hvec.clone()));
        let set = if k + 1 == steps { target } else { state_set };
        let sxk = sx.rows(k * n, n);
        let suk = su.rows(k * n, n);
        let mut g = Mat::zeros(set.n_rows(), dim);
        g.view_mut((0, 0), (set.n_rows(), n)).copy_from(&(&set.hmat * sxk));
        g.view_mut((0, n), (set.n_rows(), steps * m))
            .copy_from(&(&set.hmat * suk));
        blocks.push((g, set.hvec.clone()));
    }
    let rows: usize = blocks.iter().map(|b| b.0.nrows()).sum();
    let mut hmat = Mat::zeros(rows, dim);
    let mut hvec = Vector::zeros(rows);
    let mut at = 0;
    for (g, h) in blocks {
        let r = g.nrows();
        hmat.view_mut((at, 0), (r, dim)).copy_from(&g);
        hvec.rows_mut(at, r).copy_from(&h);
        at += r;
    }
    Polyhedron::new(hmat, hvec)
}

/// Planar stabilizable set: the `k`-step controllable set to `target`
/// (normally the maximal LQR invariant set), with `k` increased until the
/// polygon stops growing. Returns the polygon, its vertices and `k`.
pub fn stabilizable_set_2d<T: Real>(
    sys: &LtiSystem<T>,
    state_set: &Polyhedron<T>,
    input_set: &Polyhedron<T>,
    target: &Polyhedron<T>,
    max_steps: usize,
) -> Result<(Polyhedron<T>, Vec<Vector<T>>, usize)> {
    if sys.n() != 2 {
        return Err(Error::Unsupported(format!(
            "planar stabilizable set needs n = 2, got {}",
            sys.n()
        )));
    }
    let tol = T::tol(1e-7);
    let mut prev: Option<(Polyhedron<T>, Vec<Vector<T>>)> = None;
    for k in 1..=max_steps {
        let lifted = controllable_lifted(sys, state_set, input_set, target, k)?;
        let (verts, poly) = project_to_plane(&lifted)?;
        if let Some((pp, pv)) = &prev {
            let grew = verts.iter().any(|v| !contains_tol(pp, v, tol * (T::one() + v.amax())));
            if !grew {
                return Ok((pp.clone(), pv.clone(), k - 1));
            }
        }
        prev = Some((poly, verts));
    }
    Err(Error::MaxIterations(format!(
        "controllable sets still growing after {max_steps} steps"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(r: usize, c: usize, v: &[f64]) -> Mat<f64> {
        Mat::from_row_slice(r, c, v)
    }

    fn vec2(a: f64, b: f64) -> Vector<f64> {
        Vector::from_column_slice(&[a, b])
    }

    #[test]
    fn admissible_with_zero_gain_is_state_set() {
        let x = Polyhedron::inf_ball(2, 1.0);
        let u = Polyhedron::inf_ball(1, 1.0);
        let s = admissible_set(&x, &u, &Mat::zeros(1, 2)).unwrap();
        assert_eq!(s.n_rows(), 6);
        let r = remove_redundant(&s).unwrap();
        assert_eq!(r.n_rows(), 4);
    }

    #[test]
    fn admissible_clips_first_coordinate() {
        let x = Polyhedron::inf_ball(2, 1.0);
        let u = Polyhedron::inf_ball(1, 1.0);
        let s = admissible_set(&x, &u, &mat(1, 2, &[2.0, 0.0])).unwrap();
        let (lo, hi) = bounding_box(&s).unwrap();
        assert!((hi[0] - 0.5).abs() < 1e-8 && (lo[0] + 0.5).abs() < 1e-8);
        assert!((hi[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn invariant_set_trivial_maps() {
        let seed = Polyhedron::inf_ball(2, 1.0);
        let r = max_positively_invariant(&Mat::zeros(2, 2), &seed, 10).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.set.n_rows(), 4);
        let half = Mat::identity(2, 2) * 0.5;
        let r = max_positively_invariant(&half, &seed, 10).unwrap();
        assert!(r.converged);
        assert!(is_subset(&r.set, &seed, 1e-9) && is_subset(&seed, &r.set, 1e-9));
    }

    #[test]
    fn invariant_set_rotation_shrinks_box() {
        let th = 0.3f64;
        let a = mat(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * 0.95;
        let seed = Polyhedron::inf_ball(2, 1.0);
        let r = max_positively_invariant(&a, &seed, 200).unwrap();
        assert!(r.converged);
        assert!(is_subset(&r.set, &seed, 1e-9));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 1000 {
            let x = vec2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if contains(&r.set, &x) {
                assert!(contains(&r.set, &(&a * &x)));
                checked += 1;
            }
        }
    }

    #[test]
    fn membership() {
        let b = Polyhedron::inf_ball(2, 1.0);
        assert!(contains(&b, &vec2(0.0, 0.0)));
        assert!(!contains(&b, &vec2(2.0, 0.0)));
        assert!(contains(&b, &vec2(1.0 + 1e-10, 0.0)));
    }

    #[test]
    fn redundancy() {
        let b = Polyhedron::inf_ball(2, 1.0);
        let dup = b.intersect(&b).unwrap();
        assert_eq!(remove_redundant(&dup).unwrap().n_rows(), 4);
        let scaled = Polyhedron::new(mat(1, 2, &[3.0, 0.0]), Vector::from_column_slice(&[6.0]))
            .unwrap();
        assert_eq!(remove_redundant(&b.intersect(&scaled).unwrap()).unwrap().n_rows(), 4);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let off = std::f64::consts::SQRT_2 + rng.random_range(0.0..1.0);
            let extra =
                Polyhedron::new(mat(1, 2, &[th.cos(), th.sin()]), Vector::from_column_slice(&[off]))
                    .unwrap();
            let all = b.intersect(&extra).unwrap();
            let r = remove_redundant(&all).unwrap();
            assert_eq!(r.n_rows(), 4);
            for _ in 0..50 {
                let x = vec2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                assert_eq!(contains(&r, &x), contains(&all, &x));
            }
        }
    }

    #[test]
    fn vertices_of_boxes_and_triangles() {
        let v: Vec<Vector<f64>> = vertices_2d(&Polyhedron::inf_ball(2, 3.0)).unwrap();
        assert_eq!(v.len(), 4);
        for p in &v {
            assert!((p[0].abs() - 3.0).abs() < 1e-12 && (p[1].abs() - 3.0).abs() < 1e-12);
        }
        // counterclockwise: positive signed area
        let area: f64 = (0..4)
            .map(|i| {
                let (a, b) = (&v[i], &v[(i + 1) % 4]);
                a[0] * b[1] - a[1] * b[0]
            })
            .sum();
        assert!((area / 2.0 - 36.0).abs() < 1e-9);

        let tri: [[f64; 2]; 3] = [[0.0, 0.0], [2.0, 0.5], [0.5, 1.5]];
        let poly = polygon_from_vertices(&tri);
        let v = vertices_2d(&poly).unwrap();
        assert_eq!(v.len(), 3);
        for t in &tri {
            assert!(v.iter().any(|p| (p[0] - t[0]).abs() < 1e-9 && (p[1] - t[1]).abs() < 1e-9));
        }
        assert!(matches!(
            vertices_2d(&Polyhedron::inf_ball(3, 1.0)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn projection_of_a_cube_is_a_square() {
        let (v, poly) = project_to_plane(&Polyhedron::inf_ball(3, 1.0)).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(poly.n_rows(), 4);
    }

    #[test]
    fn ray_exit_box() {
        let b = Polyhedron::inf_ball(2, 1.0);
        let t = ray_exit(&b, &vec2(0.0, 0.0), &vec2(2.0, 1.0));
        assert!((t - 0.5).abs() < 1e-15);
    }
}
