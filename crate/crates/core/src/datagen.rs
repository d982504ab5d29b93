//! Training data for the value network: state/value pairs (and optionally
//! value gradients) produced by finite-horizon MPC.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::model::{LtiSystem, Polyhedron};
use crate::mpc::{self, MpcSolution, MpqpData};
use crate::polytope;
use crate::qp::{QpSettings, QpSolver};
use crate::scalar::Real;

/// Largest grid the generator will enumerate.
pub const MAX_GRID_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleSource {
    Initial,
    Trajectory,
    Grid,
    Testing,
}

impl fmt::Display for SampleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleSource::Initial => "initial",
            SampleSource::Trajectory => "trajectory",
            SampleSource::Grid => "grid",
            SampleSource::Testing => "testing",
        })
    }
}

impl FromStr for SampleSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(SampleSource::Initial),
            "trajectory" => Ok(SampleSource::Trajectory),
            "grid" => Ok(SampleSource::Grid),
            "testing" => Ok(SampleSource::Testing),
            other => Err(Error::Config(format!("unknown sample source '{other}'"))),
        }
    }
}

/// Where a sample sits on a generating trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectoryTag {
    pub id: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Real> {
    pub state: Vector<T>,
    pub value: T,
    pub gradient: Option<Vector<T>>,
    pub source: SampleSource,
    /// MPC active set at this state, when the state was solved directly.
    pub active_set: Option<Vec<usize>>,
    pub trajectory: Option<TrajectoryTag>,
    /// Input applied at this state along its trajectory.
    pub input: Option<Vector<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T: Real> {
    pub n: usize,
    pub m: usize,
    pub samples: Vec<Sample<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenerationOptions {
    /// Re-solve MPC at every trajectory state and store the value gradient.
    pub gradients: bool,
}

impl<T: Real> TrainingSet<T> {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn states(&self) -> Vec<Vector<T>> {
        self.samples.iter().map(|s| s.state.clone()).collect()
    }

    pub fn values(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.value).collect()
    }

    pub fn extend(&mut self, other: TrainingSet<T>) {
        let offset = self
            .samples
            .iter()
            .filter_map(|s| s.trajectory.map(|t| t.id + 1))
            .max()
            .unwrap_or(0);
        for mut s in other.samples {
            if let Some(t) = s.trajectory.as_mut() {
                t.id += offset;
            }
            self.samples.push(s);
        }
    }

    /// Largest `|v_k − v_{k+1} − (x_kᵀQx_k + u_kᵀRu_k)|` over stored
    /// trajectories.
    pub fn telescoping_residual(&self, sys: &LtiSystem<T>) -> T {
        let mut worst = T::zero();
        for pair in self.samples.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let (Some(ta), Some(tb)) = (a.trajectory, b.trajectory) else {
                continue;
            };
            if ta.id != tb.id || tb.step != ta.step + 1 {
                continue;
            }
            let Some(u) = &a.input else { continue };
            let stage = sys.stage_cost(&a.state, u);
            worst = worst.max((a.value - b.value - stage).abs());
        }
        worst
    }

    // -- columnar text file ------------------------------------------------

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.n).map(|i| format!("x{i}")).collect();
        header.push("value".into());
        header.extend((0..self.n).map(|i| format!("g{i}")));
        header.extend((0..self.m).map(|i| format!("u{i}")));
        header.extend(["source", "active_set", "trajectory", "step"].map(String::from));
        wr.write_record(&header)?;
        let nan = || "NaN".to_string();
        for s in &self.samples {
            let mut rec: Vec<String> = s.state.iter().map(|v| fmt_f64(v.as_f64())).collect();
            rec.push(fmt_f64(s.value.as_f64()));
            match &s.gradient {
                Some(g) => rec.extend(g.iter().map(|v| fmt_f64(v.as_f64()))),
                None => rec.extend((0..self.n).map(|_| nan())),
            }
            match &s.input {
                Some(u) => rec.extend(u.iter().map(|v| fmt_f64(v.as_f64()))),
                None => rec.extend((0..self.m).map(|_| nan())),
            }
            rec.push(s.source.to_string());
            rec.push(match &s.active_set {
                Some(a) => a.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
                None => "-".into(),
            });
            match s.trajectory {
                Some(t) => {
                    rec.push(t.id.to_string());
                    rec.push(t.step.to_string());
                }
                None => {
                    rec.push("-".into());
                    rec.push("-".into());
                }
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        if header.len() != 2 * n + m + 5 {
            return Err(Error::Config("unexpected dataset header".into()));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number '{s}': {e}")))
        };
        let mut set = TrainingSet::new(n, m);
        for rec in rd.records() {
            let rec = rec?;
            let nums = |from: usize, len: usize| -> Result<Vec<f64>> {
                (from..from + len).map(|i| parse(&rec[i])).collect()
            };
            let state = nums(0, n)?;
            let value = parse(&rec[n])?;
            let grad = nums(n + 1, n)?;
            let input = nums(2 * n + 1, m)?;
            let base = 2 * n + 1 + m;
            let source: SampleSource = rec[base].parse()?;
            let active_set = match &rec[base + 1] {
                "-" => None,
                "" => Some(Vec::new()),
                s => Some(
                    s.split(' ')
                        .map(|t| t.parse::<usize>().map_err(|e| Error::Config(e.to_string())))
                        .collect::<Result<Vec<_>>>()?,
                ),
            };
            let trajectory = match (&rec[base + 2], &rec[base + 3]) {
                ("-", _) | (_, "-") => None,
                (a, b) => Some(TrajectoryTag {
                    id: a.parse().map_err(|_| Error::Config("bad trajectory id".into()))?,
                    step: b.parse().map_err(|_| Error::Config("bad step".into()))?,
                }),
            };
            let opt = |v: Vec<f64>| {
                if v.iter().any(|x| x.is_nan()) {
                    None
                } else {
                    Some(linalg::from_slice::<T>(&v))
                }
            };
            set.samples.push(Sample {
                state: linalg::from_slice(&state),
                value: T::lit(value),
                gradient: opt(grad),
                source,
                active_set,
                trajectory,
                input: opt(input),
            });
        }
        Ok(set)
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:e}")
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mpc_feasible<T: Real>(mpqp: Option<&MpqpData<T>>, x: &Vector<T>) -> bool {
    match mpqp {
        None => true,
        Some(d) => mpc::solve_mpc(d, x, None).is_ok(),
    }
}

/// Random directions shot to the boundary of `x0` from the origin and pulled
/// back by 1%. States infeasible for `mpqp` (when given) are discarded.
pub fn sample_boundary_states<T: Real>(
    x0: &Polyhedron<T>,
    count: usize,
    seed: u64,
    mpqp: Option<&MpqpData<T>>,
) -> Result<Vec<Vector<T>>> {
    let d = x0.dim();
    polytope::bounding_box(x0)?;
    let origin = Vector::zeros(d);
    if !polytope::contains(x0, &origin) {
        return Err(Error::Sampling("region does not contain the origin".into()));
    }
    let mut rng = rng_for(seed);
    let mut out = Vec::with_capacity(count);
    let mut draws = 0usize;
    let pull = T::lit(0.99);
    while out.len() < count {
        if draws >= 100 * count {
            return Err(Error::Sampling(format!(
                "only {} of {draws} boundary draws were feasible (ratio {:.4})",
                out.len(),
                out.len() as f64 / draws as f64
            )));
        }
        draws += 1;
        let dir: Vector<T> =
            Vector::from_fn(d, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
        if dir.norm() == T::zero() {
            continue;
        }
        let t = polytope::ray_exit(x0, &origin, &dir);
        let x = dir * (t * pull);
        if mpc_feasible(mpqp, &x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Uniform samples from `x0` (rejection from its bounding box) that are
/// feasible for `mpqp` when given.
pub fn sample_uniform_states<T: Real>(
    x0: &Polyhedron<T>,
    count: usize,
    seed: u64,
    mpqp: Option<&MpqpData<T>>,
) -> Result<Vec<Vector<T>>> {
    let (lo, hi) = polytope::bounding_box(x0)?;
    let d = x0.dim();
    let mut rng = rng_for(seed);
    let mut out = Vec::with_capacity(count);
    let mut draws = 0usize;
    let budget = 1000 * count.max(1);
    while out.len() < count {
        if draws >= budget {
            return Err(Error::Sampling(format!(
                "only {} of {draws} uniform draws were feasible",
                out.len()
            )));
        }
        draws += 1;
        let x = Vector::from_fn(d, |i, _| {
            let u: f64 = rng.random();
            lo[i] + (hi[i] - lo[i]) * T::lit(u)
        });
        if polytope::contains(x0, &x) && mpc_feasible(mpqp, &x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// One MPC solve per initial state; the optimal trajectory then yields `N`
/// state/value pairs through the principle of optimality.
pub fn generate_from_trajectories<T: Real>(
    mpqp: &MpqpData<T>,
    sys: &LtiSystem<T>,
    initial_states: &[Vector<T>],
    opts: GenerationOptions,
) -> Result<TrainingSet<T>> {
    let mut set = TrainingSet::new(mpqp.n, mpqp.m);
    let mut solver = QpSolver::new(QpSettings::default());
    let neg_tol = T::tol(1e-9);
    for (id, x0) in initial_states.iter().enumerate() {
        let sol = match mpc::solve_mpc_with(&mut solver, mpqp, x0, None) {
            Ok(s) => s,
            Err(e) => {
                warn!("skipping initial state {id}: {e}");
                continue;
            }
        };
        if x0.iter().all(|v| *v == T::zero()) {
            set.samples.push(Sample {
                state: x0.clone(),
                value: T::zero(),
                gradient: opts.gradients.then(|| Vector::zeros(mpqp.n)),
                source: SampleSource::Initial,
                active_set: Some(sol.active_set.clone()),
                trajectory: Some(TrajectoryTag { id, step: 0 }),
                input: Some(Vector::zeros(mpqp.m)),
            });
            continue;
        }
        // roll the optimal sequence forward, then accumulate the tail costs
        // backwards from the terminal cost; this is the telescoping identity
        // evaluated without cancellation near the origin
        let nn = mpqp.horizon;
        let mut xs = Vec::with_capacity(nn + 1);
        let mut us = Vec::with_capacity(nn);
        xs.push(x0.clone());
        for k in 0..nn {
            let u = mpqp.input(&sol.u, k);
            xs.push(sys.step(&xs[k], &u));
            us.push(u);
        }
        let mut values = vec![T::zero(); nn + 1];
        values[nn] = linalg::quad_form(&mpqp.pstar, &xs[nn]);
        for k in (0..nn).rev() {
            values[k] = values[k + 1] + sys.stage_cost(&xs[k], &us[k]);
        }
        let gap = (values[0] - sol.value).abs();
        if gap > T::tol(1e-8) * (T::one() + sol.value.abs()) || sol.value < -neg_tol {
            return Err(Error::Internal(format!(
                "trajectory {id}: accumulated cost {} differs from the MPC value {}",
                values[0], sol.value
            )));
        }
        let mut warm: Option<MpcSolution<T>> = None;
        for k in 0..nn {
            let x = &xs[k];
            let (gradient, active_set) = if k == 0 {
                let g = mpc::value_gradient(mpqp, &sol, x);
                (
                    (opts.gradients && !g.degenerate).then_some(g.gradient),
                    Some(sol.active_set.clone()),
                )
            } else if opts.gradients {
                let re = mpc::solve_mpc_with(&mut solver, mpqp, x, warm.as_ref())?;
                let g = mpc::value_gradient(mpqp, &re, x);
                let out = ((!g.degenerate).then_some(g.gradient), Some(re.active_set.clone()));
                warm = Some(re);
                out
            } else {
                (None, None)
            };
            set.samples.push(Sample {
                state: x.clone(),
                value: values[k],
                gradient,
                source: if k == 0 {
                    SampleSource::Initial
                } else {
                    SampleSource::Trajectory
                },
                active_set,
                trajectory: Some(TrajectoryTag { id, step: k }),
                input: Some(us[k].clone()),
            });
        }
    }
    Ok(set)
}

/// Grid axis: `floor(width/spacing)+1` points centred on the interval.
pub fn grid_axis<T: Real>(lo: T, hi: T, spacing: T) -> Vec<T> {
    let width = hi - lo;
    let count = ((width / spacing).as_f64() + 1e-9).floor() as usize + 1;
    let mid = (lo + hi) * T::lit(0.5);
    let start = mid - spacing * T::lit((count - 1) as f64 * 0.5);
    (0..count).map(|i| start + spacing * T::lit(i as f64)).collect()
}

/// MPC-feasible points of an axis-aligned grid over `x0 ∩ clip`, one solve
/// per point. Gradients come with the solves.
pub fn generate_grid<T: Real>(
    mpqp: &MpqpData<T>,
    x0: &Polyhedron<T>,
    spacing: T,
    clip: Option<&Polyhedron<T>>,
) -> Result<TrainingSet<T>> {
    let d = x0.dim();
    if d > 3 {
        return Err(Error::Unsupported(format!("grids are limited to dimension 3, got {d}")));
    }
    if spacing <= T::zero() {
        return Err(Error::Invalid("grid spacing must be positive".into()));
    }
    let (lo, hi) = polytope::bounding_box(x0)?;
    let axes: Vec<Vec<T>> = (0..d).map(|i| grid_axis(lo[i], hi[i], spacing)).collect();
    let total = axes.iter().map(|a| a.len()).product::<usize>();
    if total > MAX_GRID_POINTS {
        return Err(Error::Invalid(format!(
            "grid would have {total} points (limit {MAX_GRID_POINTS})"
        )));
    }
    let mut set = TrainingSet::new(mpqp.n, mpqp.m);
    let mut solver = QpSolver::new(QpSettings::default());
    let mut warm: Option<MpcSolution<T>> = None;
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let x = Vector::from_fn(d, |i, _| axes[i][idx[i]]);
        let inside = polytope::contains(x0, &x) && clip.is_none_or(|c| polytope::contains(c, &x));
        if inside {
            if let Ok(sol) = mpc::solve_mpc_with(&mut solver, mpqp, &x, warm.as_ref()) {
                let g = mpc::value_gradient(mpqp, &sol, &x);
                set.samples.push(Sample {
                    state: x.clone(),
                    value: sol.value.max(T::zero()),
                    gradient: (!g.degenerate).then_some(g.gradient),
                    source: SampleSource::Grid,
                    active_set: Some(sol.active_set.clone()),
                    trajectory: None,
                    input: None,
                });
                warm = Some(sol);
            }
        }
        // odometer over the grid, last axis fastest
        for i in (0..d).rev() {
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                break;
            }
            idx[i] = 0;
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub checked: usize,
    pub max_relative_error: f64,
}

/// Re-solves MPC at a random `fraction` of the trajectory states and compares
/// with the stored values.
pub fn audit<T: Real>(
    mpqp: &MpqpData<T>,
    set: &TrainingSet<T>,
    fraction: f64,
    seed: u64,
) -> Result<AuditReport> {
    let mut rng = rng_for(seed);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for s in &set.samples {
        if s.source != SampleSource::Trajectory || !rng.random_bool(fraction) {
            continue;
        }
        let sol = mpc::solve_mpc(mpqp, &s.state, None)?;
        let (a, b) = (sol.value.as_f64(), s.value.as_f64());
        let rel = (a - b).abs() / a.abs().max(1e-12);
        worst = worst.max(if a.abs() < 1e-12 { (a - b).abs() } else { rel });
        checked += 1;
    }
    Ok(AuditReport {
        checked,
        max_relative_error: worst,
    })
}
