//! Offline error bounds for a trained value network and the sufficient
//! stability condition `(1 − ζ²)/ζ > 2 sup Ĵ(x)/(xᵀQx)`.

use std::collections::BTreeMap;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::{self, TrainingSet};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{Polyhedron, ProblemInstance};
use crate::mpc::{self, MpcSolution, MpqpData};
use crate::polytope;
use crate::pwq_net::{ActivationPattern, PwqNetwork};
use crate::qp::{QpSettings, QpSolver};
use crate::scalar::Real;

/// Samples with `J* ≤ VALUE_FLOOR` are left out of relative errors.
pub const VALUE_FLOOR: f64 = 1e-10;

/// Pair of MPC active set (strongly active rows) and network pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionKey {
    pub mpc_active: Vec<usize>,
    pub net_active: Vec<usize>,
}

impl RegionKey {
    /// Unconstrained LQR region with every unit off, where `Ĵ = J* = xᵀP*x`.
    pub fn is_origin_region(&self) -> bool {
        self.mpc_active.is_empty() && self.net_active.is_empty()
    }

    pub fn label(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!("mpc[{}] net[{}]", join(&self.mpc_active), join(&self.net_active))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub abs_error: f64,
    pub grad_error: Option<f64>,
    /// `‖∇J*‖₂ / J*`.
    pub beta: Option<f64>,
    pub value: f64,
    pub region: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub e_bar: f64,
    pub e_grad_bar: f64,
    pub per_sample: Vec<SampleError>,
    pub regions: Vec<RegionKey>,
    pub near_origin: usize,
    pub missing_gradients: usize,
}

fn sample_error<T: Real>(
    net: &PwqNetwork<T>,
    x: &Vector<T>,
    value: T,
    grad: Option<&Vector<T>>,
) -> (f64, Option<f64>, Option<f64>) {
    let j = value.as_f64();
    let e = (net.evaluate(x).as_f64() / j - 1.0).abs();
    match grad {
        Some(g) => {
            let ge = (net.gradient_x(x) - g).norm().as_f64() / j;
            (e, Some(ge), Some(g.norm().as_f64() / j))
        }
        None => (e, None, None),
    }
}

/// Relative value and gradient errors over the data, with region ids when
/// the samples carry MPC active sets.
pub fn empirical_errors<T: Real>(net: &PwqNetwork<T>, data: &TrainingSet<T>) -> Result<ErrorStats> {
    let mut ids: BTreeMap<RegionKey, usize> = BTreeMap::new();
    let mut regions = Vec::new();
    let mut per_sample = Vec::new();
    let (mut near_origin, mut missing) = (0, 0);
    let (mut e_bar, mut eg_bar) = (0.0f64, 0.0f64);
    for s in &data.samples {
        if s.value.as_f64() <= VALUE_FLOOR {
            near_origin += 1;
            continue;
        }
        let (e, ge, beta) = sample_error(net, &s.state, s.value, s.gradient.as_ref());
        e_bar = e_bar.max(e);
        match ge {
            Some(g) => eg_bar = eg_bar.max(g),
            None => missing += 1,
        }
        let region = s.active_set.as_ref().map(|a| {
            let key = RegionKey {
                mpc_active: a.clone(),
                net_active: net.activation_pattern(&s.state).active,
            };
            *ids.entry(key.clone()).or_insert_with(|| {
                regions.push(key);
                regions.len() - 1
            })
        });
        per_sample.push(SampleError {
            abs_error: e,
            grad_error: ge,
            beta,
            value: s.value.as_f64(),
            region,
        });
    }
    if per_sample.is_empty() {
        return Err(Error::Certification(
            "every sample lies at the origin (J* ≤ 1e-10); nothing to certify".into(),
        ));
    }
    Ok(ErrorStats {
        e_bar,
        e_grad_bar: eg_bar,
        per_sample,
        regions,
        near_origin,
        missing_gradients: missing,
    })
}

/// Per-region quantities entering the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBound {
    /// Covering radius `d` of the region's points.
    pub radius: f64,
    /// Gradient Lipschitz constant of `J*` on the region.
    pub lipschitz_value: f64,
    /// Gradient Lipschitz constant of `Ĵ` on the region.
    pub lipschitz_net: f64,
}

/// One point entering the bound: `(|e|, β, J*, region)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPoint {
    pub beta: f64,
    pub value: f64,
    pub region: usize,
}

/// `ζ = max_y (ē + ē_grad d + (L̂ + L) d² / (2J*(y))) / (1 − β(y) d)`.
pub fn zeta_bound(
    e_bar: f64,
    e_grad_bar: f64,
    points: &[BoundPoint],
    regions: &[RegionBound],
    labels: &[String],
) -> Result<f64> {
    let mut zeta = e_bar;
    for p in points {
        let r = &regions[p.region];
        let d = r.radius;
        let bd = p.beta * d;
        if bd >= 1.0 {
            return Err(Error::Certification(format!(
                "samples too sparse: β·d = {bd:.3} ≥ 1 in region {} (d = {d:.4e})",
                labels.get(p.region).map(String::as_str).unwrap_or("?")
            )));
        }
        let z = (e_bar + e_grad_bar * d + (r.lipschitz_net + r.lipschitz_value) * d * d / (2.0 * p.value))
            / (1.0 - bd);
        zeta = zeta.max(z);
    }
    Ok(zeta)
}

/// Domain of the supremum in the stability condition.
#[derive(Debug, Clone)]
pub enum RhsDomain<'a, T: Real> {
    Polytope(&'a Polyhedron<T>),
    /// `{x : Ĵ(x) ≤ χ}`.
    Sublevel(T),
}

/// Distance to the domain boundary along `v` (unit direction).
fn boundary_radius<T: Real>(net: &PwqNetwork<T>, domain: &RhsDomain<'_, T>, v: &Vector<T>) -> Result<T> {
    match domain {
        RhsDomain::Polytope(set) => {
            let t = polytope::ray_exit(set, &Vector::zeros(v.len()), v);
            if !t.is_finite_val() || t <= T::zero() {
                return Err(Error::Certification(
                    "domain must be bounded with the origin in its interior".into(),
                ));
            }
            Ok(t)
        }
        RhsDomain::Sublevel(chi) => {
            let (mut lo, mut hi) = (T::zero(), T::one());
            let mut guard = 0;
            while net.evaluate(&(v * hi)) < *chi {
                lo = hi;
                hi *= T::lit(2.0);
                guard += 1;
                if guard > 200 {
                    return Err(Error::Certification("sublevel set is unbounded".into()));
                }
            }
            for _ in 0..100 {
                let mid = (lo + hi) * T::lit(0.5);
                if net.evaluate(&(v * mid)) < *chi {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(lo)
        }
    }
}

fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// `2 sup Ĵ(x)/(xᵀQx)` over the domain minus the origin. Along each ray the
/// ratio does not decrease (every `r·relu(Wv + b/t)²` grows with `t` when
/// `b < 0`), so the search runs over boundary points: a direction sweep
/// followed by local refinement. The result is a lower bound on the true
/// supremum.
pub fn condition_rhs<T: Real>(
    net: &PwqNetwork<T>,
    q: &Mat<T>,
    domain: &RhsDomain<'_, T>,
    directions: usize,
    seed: u64,
) -> Result<f64> {
    let n = net.n();
    let ratio = |v: &Vector<T>| -> Result<f64> {
        let nv = v.norm();
        let v = v / nv;
        let t = boundary_radius(net, domain, &v)?;
        let x = &v * t;
        Ok(2.0 * net.evaluate(&x).as_f64() / linalg::quad_form(q, &x).as_f64())
    };
    let directions = directions.max(8);
    if n == 2 {
        let at = |th: f64| Vector::from_column_slice(&[T::lit(th.cos()), T::lit(th.sin())]);
        let step = std::f64::consts::TAU / directions as f64;
        let mut vals = Vec::with_capacity(directions);
        for k in 0..directions {
            vals.push((k as f64 * step, ratio(&at(k as f64 * step))?));
        }
        let mut best = vals.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.1));
        let mut order: Vec<usize> = (0..directions).collect();
        order.sort_by(|&a, &b| vals[b].1.total_cmp(&vals[a].1));
        for &k in order.iter().take(8) {
            let th = vals[k].0;
            let mut err = None;
            let (_, f) = golden_max(
                |t| match ratio(&at(t)) {
                    Ok(v) => v,
                    Err(e) => {
                        err = Some(e);
                        f64::NEG_INFINITY
                    }
                },
                th - step,
                th + step,
                60,
            );
            if let Some(e) = err {
                return Err(e);
            }
            best = best.max(f);
        }
        return Ok(best);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<(Vector<T>, f64)> = Vec::with_capacity(directions + 2 * n);
    for i in 0..n {
        for sgn in [1.0, -1.0] {
            let mut v = Vector::zeros(n);
            v[i] = T::lit(sgn);
            let r = ratio(&v)?;
            starts.push((v, r));
        }
    }
    for _ in 0..directions {
        let v = Vector::from_fn(n, |_, _| T::lit(StandardNormal.sample(&mut rng)));
        if v.norm() > T::zero() {
            let r = ratio(&v)?;
            starts.push((v, r));
        }
    }
    starts.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut best = starts[0].1;
    // coordinate pattern search on the sphere from the best starts
    for (v0, r0) in starts.into_iter().take(8) {
        let (mut v, mut r) = (v0, r0);
        let mut h = 0.1;
        while h > 1e-6 {
            let mut improved = false;
            for i in 0..n {
                for sgn in [1.0, -1.0] {
                    let mut w = v.clone();
                    w[i] += T::lit(sgn * h) * v.norm();
                    let rw = ratio(&w)?;
                    if rw > r {
                        v = w;
                        r = rw;
                        improved = true;
                    }
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        best = best.max(r);
    }
    Ok(best)
}

/// `χ = min Ĵ` over the boundary of `x0`. Planar sets are searched edge by
/// edge (Ĵ is convex along each edge); otherwise boundary points along
/// random rays are used.
pub fn sublevel_threshold<T: Real>(
    net: &PwqNetwork<T>,
    x0: &Polyhedron<T>,
    boundary_samples: usize,
    seed: u64,
) -> Result<f64> {
    let n = x0.dim();
    if n == 2 {
        let verts = polytope::vertices_2d(x0)?;
        if verts.len() < 3 {
            return Err(Error::Certification("region of interest is degenerate".into()));
        }
        let mut chi = f64::INFINITY;
        let k = verts.len();
        for i in 0..k {
            let (a, b) = (&verts[i], &verts[(i + 1) % k]);
            let at = |s: f64| a + (b - a) * T::lit(s);
            let per_edge = (boundary_samples / k).max(2);
            for j in 0..=per_edge {
                chi = chi.min(net.evaluate(&at(j as f64 / per_edge as f64)).as_f64());
            }
            let (_, f) = golden_max(|s| -net.evaluate(&at(s)).as_f64(), 0.0, 1.0, 80);
            chi = chi.min(-f);
        }
        return Ok(chi);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Vector::zeros(n);
    let mut chi = f64::INFINITY;
    for _ in 0..boundary_samples.max(1) {
        let v = Vector::from_fn(n, |_, _| T::lit(StandardNormal.sample(&mut rng)));
        let t = polytope::ray_exit(x0, &origin, &v);
        if !t.is_finite_val() {
            return Err(Error::Certification("region of interest is unbounded".into()));
        }
        chi = chi.min(net.evaluate(&(v * t)).as_f64());
    }
    Ok(chi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificationMode {
    /// Successor constraint `C = X̄`, domain `X₀ = X̄`.
    InvariantRegion,
    /// `C = ℝⁿ`, domain the sublevel set `Ω = {Ĵ ≤ χ}`.
    Sublevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ProbePlan {
    Grid { spacing: f64 },
    Random { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub mode: CertificationMode,
    pub probes: ProbePlan,
    pub rhs_directions: usize,
    pub boundary_samples: usize,
    /// Covering radius each region is refined to with testing points;
    /// `None` only fills regions without any point.
    pub max_radius: Option<f64>,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            mode: CertificationMode::Sublevel,
            probes: ProbePlan::Grid { spacing: 0.0125 },
            rhs_directions: 3600,
            boundary_samples: 4000,
            max_radius: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCoverage {
    pub region: String,
    pub samples: usize,
    pub probes: usize,
    /// A probe was promoted to a testing point because no sample fell here.
    pub augmented: bool,
    pub radius: f64,
    pub lipschitz_value: f64,
    pub lipschitz_net: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub mode: CertificationMode,
    pub e_bar: f64,
    pub e_grad_bar: f64,
    pub zeta: f64,
    /// `(1 − ζ²)/ζ`; absent when `ζ = 0`.
    pub condition_lhs: Option<f64>,
    pub condition_rhs: f64,
    pub pass: bool,
    pub chi: Option<f64>,
    pub samples_used: usize,
    pub near_origin_excluded: usize,
    pub probes: usize,
    pub infeasible_probes: usize,
    /// Probes on region boundaries, left out of the coverage radii.
    pub boundary_probes: usize,
    pub augmented_points: usize,
    /// Every probed region holds a point and meets the radius target.
    pub coverage_clean: bool,
    pub regions: Vec<RegionCoverage>,
    pub notes: Vec<String>,
}

impl CertificationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Whether a state's region was seen during certification.
    pub fn covers(&self, key: &RegionKey) -> bool {
        let label = key.label();
        self.regions.iter().any(|r| r.region == label)
    }
}

/// `(1 − ζ²)/ζ`, `None` for `ζ = 0`.
pub fn condition_lhs(zeta: f64) -> Option<f64> {
    if zeta == 0.0 {
        None
    } else {
        Some((1.0 - zeta * zeta) / zeta)
    }
}

struct Point<T: Real> {
    state: Vector<T>,
    value: f64,
    grad: Vector<T>,
    key: Option<RegionKey>,
}

/// Region key of a solved state.
pub fn region_key<T: Real>(net: &PwqNetwork<T>, sol: &MpcSolution<T>, x: &Vector<T>) -> RegionKey {
    RegionKey {
        mpc_active: strong_rows(sol),
        net_active: net.activation_pattern(x).active,
    }
}

/// Region key when `x` lies in the interior of its region: no weakly
/// active MPC rows and no unit at its switching threshold. Boundary states
/// belong to several closed regions and define none.
pub fn interior_region_key<T: Real>(
    net: &PwqNetwork<T>,
    sol: &MpcSolution<T>,
    x: &Vector<T>,
) -> Option<RegionKey> {
    if !sol.weakly_active.is_empty() {
        return None;
    }
    let z = net.pre_activation(x);
    let tol = T::tol(1e-9) * (T::one() + x.norm());
    if z.iter().any(|v| v.abs() <= tol) {
        return None;
    }
    Some(region_key(net, sol, x))
}

fn strong_rows<T: Real>(sol: &MpcSolution<T>) -> Vec<usize> {
    sol.active_set
        .iter()
        .copied()
        .filter(|i| !sol.weakly_active.contains(i))
        .collect()
}

/// Region Hessian of `J*`, dropping dependent rows when needed.
fn value_hessian<T: Real>(mpqp: &MpqpData<T>, active: &[usize]) -> (Mat<T>, bool) {
    match mpc::region_hessian(mpqp, active, &mpqp.pstar) {
        Ok(h) => (h, false),
        Err(_) => {
            let mut kept: Vec<usize> = Vec::new();
            for &i in active {
                let mut trial = kept.clone();
                trial.push(i);
                let ga = Mat::from_fn(trial.len(), mpqp.n_vars(), |r, c| mpqp.g[(trial[r], c)]);
                if linalg::rank(&ga, T::tol(1e-9)) == trial.len() {
                    kept = trial;
                }
            }
            let h = mpc::region_hessian(mpqp, &kept, &mpqp.pstar).unwrap_or_else(|_| mpqp.pstar.clone());
            (h, true)
        }
    }
}

fn probe_states<T: Real>(x0: &Polyhedron<T>, plan: &ProbePlan) -> Result<Vec<Vector<T>>> {
    match *plan {
        ProbePlan::Grid { spacing } => {
            let n = x0.dim();
            if n > 3 {
                return Err(Error::Unsupported(format!(
                    "grid probes are limited to dimension 3, got {n}; use random probes"
                )));
            }
            let (lo, hi) = polytope::bounding_box(x0)?;
            let axes: Vec<Vec<T>> = (0..n)
                .map(|i| datagen::grid_axis(lo[i], hi[i], T::lit(spacing)))
                .collect();
            let total: usize = axes.iter().map(Vec::len).product();
            if total > 4 * datagen::MAX_GRID_POINTS {
                return Err(Error::Invalid(format!("probe grid would have {total} points")));
            }
            let mut out = Vec::new();
            let mut idx = vec![0usize; n];
            'outer: loop {
                let x = Vector::from_fn(n, |i, _| axes[i][idx[i]]);
                if polytope::contains_tol(x0, &x, T::tol(1e-9)) {
                    out.push(x);
                }
                for i in (0..n).rev() {
                    idx[i] += 1;
                    if idx[i] < axes[i].len() {
                        continue 'outer;
                    }
                    idx[i] = 0;
                }
                break;
            }
            Ok(out)
        }
        ProbePlan::Random { count, seed } => datagen::sample_uniform_states(x0, count, seed, None),
    }
}

/// Full certification: errors on the data, coverage probes, `ζ`, the
/// supremum on the right-hand side, `χ` in sublevel mode, and the verdict.
pub fn certify<T: Real>(
    net: &PwqNetwork<T>,
    data: &TrainingSet<T>,
    instance: &ProblemInstance<T>,
    mpqp: &MpqpData<T>,
    opts: &CertifyOptions,
) -> Result<CertificationReport> {
    let x0 = &instance.region_of_interest;
    let mut solver = QpSolver::new(QpSettings::default());
    let mut notes = vec![
        "region radii d are estimated from probe states; the bound is empirical".to_string(),
        "the supremum is a lower bound from a boundary direction search".to_string(),
        "Lipschitz constants are 2·λmax of the region Hessians".to_string(),
    ];

    // training points with fresh active sets and gradients
    let mut points: Vec<Point<T>> = Vec::with_capacity(data.len());
    let mut near_origin = 0;
    let mut warm: Option<MpcSolution<T>> = None;
    for s in &data.samples {
        let sol = match mpc::solve_mpc_with(&mut solver, mpqp, &s.state, warm.as_ref()) {
            Ok(sol) => sol,
            Err(Error::Infeasible(_)) => {
                warn!("training state {:?} is MPC infeasible; skipped", linalg::to_vec_f64(&s.state));
                continue;
            }
            Err(e) => return Err(e),
        };
        let grad = s
            .gradient
            .clone()
            .unwrap_or_else(|| mpc::value_gradient(mpqp, &sol, &s.state).gradient);
        let key = interior_region_key(net, &sol, &s.state);
        warm = Some(sol);
        if s.value.as_f64() <= VALUE_FLOOR {
            near_origin += 1;
            continue;
        }
        points.push(Point {
            state: s.state.clone(),
            value: s.value.as_f64(),
            grad,
            key,
        });
    }
    if points.is_empty() {
        return Err(Error::Certification(
            "every sample lies at the origin (J* ≤ 1e-10); nothing to certify".into(),
        ));
    }

    // probes
    let probes = probe_states(x0, &opts.probes)?;
    let mut probe_keys: Vec<(Vector<T>, RegionKey, MpcSolution<T>)> = Vec::with_capacity(probes.len());
    let (mut infeasible, mut on_boundary) = (0, 0);
    let mut warm: Option<MpcSolution<T>> = None;
    for x in probes {
        match mpc::solve_mpc_with(&mut solver, mpqp, &x, warm.as_ref()) {
            Ok(sol) => {
                let key = interior_region_key(net, &sol, &x);
                warm = Some(sol.clone());
                match key {
                    Some(k) => probe_keys.push((x, k, sol)),
                    None => on_boundary += 1,
                }
            }
            Err(Error::Infeasible(_)) => infeasible += 1,
            Err(e) => return Err(e),
        }
    }
    if infeasible > 0 {
        notes.push(format!("{infeasible} probe states are outside the MPC feasible set"));
    }
    if on_boundary > 0 {
        notes.push(format!("{on_boundary} probe states lie on region boundaries and were skipped"));
    }

    let mut region_ids: BTreeMap<RegionKey, usize> = BTreeMap::new();
    let mut keys: Vec<RegionKey> = Vec::new();
    let mut id_of = |k: &RegionKey, keys: &mut Vec<RegionKey>| -> usize {
        *region_ids.entry(k.clone()).or_insert_with(|| {
            keys.push(k.clone());
            keys.len() - 1
        })
    };
    let mut point_region: Vec<Option<usize>> = points
        .iter()
        .map(|p| p.key.as_ref().map(|k| id_of(k, &mut keys)))
        .collect();
    let mut probes_in: Vec<Vec<usize>> = vec![Vec::new(); keys.len()];
    let mut augmented_flags = vec![false; keys.len()];
    let sample_counts: Vec<usize> = {
        let mut c = vec![0; keys.len()];
        for &r in point_region.iter().flatten() {
            c[r] += 1;
        }
        c
    };
    let mut augmented = 0;
    for (pi, (x, key, sol)) in probe_keys.iter().enumerate() {
        let r = id_of(key, &mut keys);
        if r >= probes_in.len() {
            probes_in.push(Vec::new());
            augmented_flags.push(false);
        }
        probes_in[r].push(pi);
        let has_point = r < sample_counts.len() && sample_counts[r] > 0 || augmented_flags[r];
        if !has_point && !key.is_origin_region() && sol.value.as_f64() > VALUE_FLOOR {
            // promote the first probe of an empty region to a testing point
            augmented_flags[r] = true;
            augmented += 1;
            points.push(Point {
                state: x.clone(),
                value: sol.value.as_f64(),
                grad: mpc::value_gradient(mpqp, sol, x).gradient,
                key: Some(key.clone()),
            });
            point_region.push(Some(r));
        }
    }
    let nreg = keys.len();

    // covering radius per region; probes farther than the target from every
    // point of their region are promoted to testing points, farthest first
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nreg];
    for (i, r) in point_region.iter().enumerate() {
        if let Some(r) = r {
            members[*r].push(i);
        }
    }
    let target = opts.max_radius.unwrap_or(f64::INFINITY);
    let mut radii = vec![0.0f64; nreg];
    for r in 0..nreg {
        if keys[r].is_origin_region() || members[r].is_empty() {
            continue;
        }
        let mine = probes_in.get(r).map(Vec::as_slice).unwrap_or(&[]);
        let mut dist: Vec<f64> = mine
            .iter()
            .map(|&pi| {
                members[r]
                    .iter()
                    .map(|&i| (&points[i].state - &probe_keys[pi].0).norm().as_f64())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        loop {
            let Some((k, &d)) = dist.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
                break;
            };
            if d <= target {
                radii[r] = d;
                break;
            }
            let (x, _, sol) = &probe_keys[mine[k]];
            if sol.value.as_f64() <= VALUE_FLOOR {
                radii[r] = d;
                break;
            }
            points.push(Point {
                state: x.clone(),
                value: sol.value.as_f64(),
                grad: mpc::value_gradient(mpqp, sol, x).gradient,
                key: Some(keys[r].clone()),
            });
            point_region.push(Some(r));
            members[r].push(points.len() - 1);
            augmented_flags[r] = true;
            augmented += 1;
            let xn = x.clone();
            for (j, &pj) in mine.iter().enumerate() {
                dist[j] = dist[j].min((&probe_keys[pj].0 - &xn).norm().as_f64());
            }
        }
    }

    // errors over training and testing points
    let mut e_bar = 0.0f64;
    let mut eg_bar = 0.0f64;
    let mut betas = Vec::with_capacity(points.len());
    for p in &points {
        let j = T::lit(p.value);
        let (e, ge, beta) = sample_error(net, &p.state, j, Some(&p.grad));
        e_bar = e_bar.max(e);
        eg_bar = eg_bar.max(ge.unwrap_or(0.0));
        betas.push(beta.unwrap_or(0.0));
    }

    let mut bounds = Vec::with_capacity(nreg);
    let mut coverage = Vec::with_capacity(nreg);
    let mut hess_cache: BTreeMap<Vec<usize>, (f64, bool)> = BTreeMap::new();
    for r in 0..nreg {
        let key = &keys[r];
        let radius = radii[r];
        let (lv, degenerate) = *hess_cache.entry(key.mpc_active.clone()).or_insert_with(|| {
            let (h, deg) = value_hessian(mpqp, &key.mpc_active);
            (2.0 * linalg::lambda_max(&h).as_f64(), deg)
        });
        let pattern = ActivationPattern::new(key.net_active.clone());
        let ln = 2.0 * linalg::lambda_max(&net.region_coefficients(&pattern).phat).as_f64();
        bounds.push(RegionBound {
            radius,
            lipschitz_value: lv,
            lipschitz_net: ln,
        });
        coverage.push(RegionCoverage {
            region: key.label(),
            samples: sample_counts.get(r).copied().unwrap_or(0),
            probes: probes_in.get(r).map_or(0, Vec::len),
            augmented: augmented_flags.get(r).copied().unwrap_or(false),
            radius,
            lipschitz_value: lv,
            lipschitz_net: ln,
            degenerate,
        });
    }
    let labels: Vec<String> = keys.iter().map(RegionKey::label).collect();
    // on the origin region both functions equal xᵀP*x, so |e| ≡ 0 there
    let bound_points: Vec<BoundPoint> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let key = p.key.as_ref()?;
            if key.is_origin_region() && net.quadratic_term {
                return None;
            }
            Some(BoundPoint {
                beta: betas[i],
                value: p.value,
                region: point_region[i]?,
            })
        })
        .collect();
    let zeta = zeta_bound(e_bar, eg_bar, &bound_points, &bounds, &labels)?;

    let chi = match opts.mode {
        CertificationMode::InvariantRegion => None,
        CertificationMode::Sublevel => {
            Some(sublevel_threshold(net, x0, opts.boundary_samples, opts.seed)?)
        }
    };
    let rhs = match chi {
        Some(c) => condition_rhs(
            net,
            &instance.system.q,
            &RhsDomain::Sublevel(T::lit(c)),
            opts.rhs_directions,
            opts.seed,
        )?,
        None => condition_rhs(
            net,
            &instance.system.q,
            &RhsDomain::Polytope(x0),
            opts.rhs_directions,
            opts.seed,
        )?,
    };
    let lhs = condition_lhs(zeta);
    let pass = zeta < 1.0 && lhs.is_none_or(|l| l > rhs);
    info!("certification: ζ = {zeta:.4}, lhs = {lhs:?}, rhs = {rhs:.4}, pass = {pass}");
    Ok(CertificationReport {
        mode: opts.mode,
        e_bar,
        e_grad_bar: eg_bar,
        zeta,
        condition_lhs: lhs,
        condition_rhs: rhs,
        pass,
        chi,
        samples_used: points.len() - augmented,
        near_origin_excluded: near_origin,
        probes: probe_keys.len(),
        infeasible_probes: infeasible,
        boundary_probes: on_boundary,
        augmented_points: augmented,
        coverage_clean: (0..nreg).all(|r| {
            keys[r].is_origin_region() || (!members[r].is_empty() && radii[r] <= target)
        }),
        regions: coverage,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Sample, SampleSource};
    use crate::model::LtiSystem;
    use crate::riccati::solve_dare_default;
    use approx::assert_relative_eq;

    fn toy() -> (ProblemInstance<f64>, MpqpData<f64>, Mat<f64>) {
        let sys = LtiSystem::new(
            Mat::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            Mat::from_row_slice(2, 1, &[0.0, 0.1]),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
        .unwrap();
        let inst = ProblemInstance::new(
            sys.clone(),
            Polyhedron::universe(2),
            Polyhedron::inf_ball(1, 1e3),
            Polyhedron::inf_ball(2, 1.0),
        )
        .unwrap();
        let p = solve_dare_default(&sys).unwrap().p;
        let mpqp = mpc::condense(&sys, &inst.state_set, &inst.input_set, &p, 5).unwrap();
        (inst, mpqp, p)
    }

    fn grid_data(mpqp: &MpqpData<f64>, x0: &Polyhedron<f64>, h: f64) -> TrainingSet<f64> {
        datagen::generate_grid(mpqp, x0, h, None).unwrap()
    }

    #[test]
    fn perfect_network_passes() {
        let (inst, mpqp, p) = toy();
        let net = PwqNetwork::quadratic(p);
        let data = grid_data(&mpqp, &inst.region_of_interest, 0.25);
        let opts = CertifyOptions {
            probes: ProbePlan::Grid { spacing: 0.0625 },
            rhs_directions: 360,
            ..CertifyOptions::default()
        };
        let rep = certify(&net, &data, &inst, &mpqp, &opts).unwrap();
        assert!(rep.zeta <= 1e-6, "{}", rep.zeta);
        assert!(rep.pass);
        assert!(rep.e_bar <= 1e-9);
    }

    #[test]
    fn quadratic_rhs_matches_generalized_eigenvalue() {
        let p = Mat::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]);
        let q = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let net = PwqNetwork::quadratic(p.clone());
        let x0 = Polyhedron::inf_ball(2, 2.0);
        let r = condition_rhs(&net, &q, &RhsDomain::Polytope(&x0), 720, 0).unwrap();
        // Q^{-1/2} P Q^{-1/2}
        let qi = Mat::from_row_slice(2, 2, &[1.0 / 2f64.sqrt(), 0.0, 0.0, 1.0 / 0.5f64.sqrt()]);
        let oracle = 2.0 * linalg::lambda_max(&(&qi * &p * &qi));
        assert_relative_eq!(r, oracle, max_relative = 1e-9);
        let s = condition_rhs(&net, &q, &RhsDomain::Sublevel(3.0), 720, 0).unwrap();
        assert_relative_eq!(s, oracle, max_relative = 1e-9);
    }

    #[test]
    fn rhs_in_higher_dimension() {
        let p = Mat::from_fn(3, 3, |i, j| if i == j { 1.0 + i as f64 } else { 0.2 });
        let net = PwqNetwork::quadratic(p.clone());
        let q = Mat::identity(3, 3);
        let x0 = Polyhedron::inf_ball(3, 1.0);
        let r = condition_rhs(&net, &q, &RhsDomain::Polytope(&x0), 200, 1).unwrap();
        assert_relative_eq!(r, 2.0 * linalg::lambda_max(&p), max_relative = 1e-6);
    }

    #[test]
    fn threshold_on_box_matches_facet_search() {
        let p = Mat::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let net = PwqNetwork::quadratic(p.clone());
        let c = 1.5;
        let x0 = Polyhedron::inf_ball(2, c);
        let chi = sublevel_threshold(&net, &x0, 400, 0).unwrap();
        // dense 1-D scan over each facet
        let mut oracle = f64::INFINITY;
        for k in 0..=200_000 {
            let s = -c + 2.0 * c * k as f64 / 200_000.0;
            for x in [[c, s], [-c, s], [s, c], [s, -c]] {
                oracle = oracle.min(linalg::quad_form(&p, &Vector::from_column_slice(&x)));
            }
        }
        assert_relative_eq!(chi, oracle, max_relative = 1e-8);
        // Ω lies inside X₀
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..10_000 {
            let x = Vector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            if net.evaluate(&x) <= chi {
                assert!(x.amax() <= c + 1e-9);
            }
        }
    }

    #[test]
    fn forced_unit_zeta_fails() {
        assert_eq!(condition_lhs(1.0), Some(0.0));
        assert_eq!(condition_lhs(0.0), None);
    }

    #[test]
    fn zeta_is_at_least_e_bar_and_guards_sparse_samples() {
        let regions = vec![RegionBound {
            radius: 0.1,
            lipschitz_value: 2.0,
            lipschitz_net: 3.0,
        }];
        let labels = vec!["r".to_string()];
        let pts = vec![BoundPoint {
            beta: 2.0,
            value: 1.0,
            region: 0,
        }];
        let z = zeta_bound(0.05, 0.3, &pts, &regions, &labels).unwrap();
        let expect = (0.05 + 0.3 * 0.1 + 5.0 * 0.01 / 2.0) / (1.0 - 0.2);
        assert_relative_eq!(z, expect, max_relative = 1e-14);
        assert!(z >= 0.05);
        let sparse = vec![BoundPoint {
            beta: 20.0,
            value: 1.0,
            region: 0,
        }];
        assert!(matches!(
            zeta_bound(0.05, 0.3, &sparse, &regions, &labels),
            Err(Error::Certification(_))
        ));
    }

    #[test]
    fn empirical_errors_skip_origin() {
        let p = Mat::identity(2, 2);
        let net = PwqNetwork::quadratic(p);
        let mut data = TrainingSet::new(2, 1);
        for (x, v) in [([0.0, 0.0], 0.0), ([1.0, 0.0], 1.1), ([0.0, 2.0], 4.0)] {
            data.samples.push(Sample {
                state: Vector::from_column_slice(&x),
                value: v,
                gradient: None,
                source: SampleSource::Grid,
                active_set: None,
                trajectory: None,
                input: None,
            });
        }
        let s = empirical_errors(&net, &data).unwrap();
        assert_eq!(s.near_origin, 1);
        assert_eq!(s.missing_gradients, 2);
        assert_relative_eq!(s.e_bar, 1.0 - 1.0 / 1.1, max_relative = 1e-12);
        data.samples.truncate(1);
        assert!(empirical_errors(&net, &data).is_err());
    }
}
