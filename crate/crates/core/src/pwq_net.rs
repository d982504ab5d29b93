//! Convex piecewise-quadratic value network
//! `Ĵ(x) = xᵀP*x + Σᵢ rᵢ·max(0, Wᵢx + bᵢ)²` with `r ≥ 0`, `b < 0`.

use std::path::Path;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::TrainingSet;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::scalar::Real;

/// Upper bound on hidden biases, `b ≤ −ε_b`.
pub const BIAS_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PwqNetwork<T: Real> {
    /// Hidden weights, one row per unit.
    pub w: Mat<T>,
    pub b: Vector<T>,
    pub r: Vector<T>,
    pub pstar: Mat<T>,
    /// `false` drops the `xᵀP*x` term (the purely global variant).
    pub quadratic_term: bool,
}

/// Units with positive pre-activation, as increasing 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ActivationPattern {
    pub active: Vec<usize>,
}

impl ActivationPattern {
    pub fn new(mut active: Vec<usize>) -> Self {
        active.sort_unstable();
        active.dedup();
        Self { active }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.active.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Pattern from the bits of `code` (bit `i` set means unit `i` active).
    pub fn from_code(code: u128, width: usize) -> Self {
        Self {
            active: (0..width.min(128)).filter(|i| code >> i & 1 == 1).collect(),
        }
    }
}

/// `Ĵ(x) = xᵀPx + qᵀx + v` on one activation region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionQuadratic<T: Real> {
    pub phat: Mat<T>,
    pub qhat: Vector<T>,
    pub vhat: T,
}

impl<T: Real> RegionQuadratic<T> {
    pub fn evaluate(&self, x: &Vector<T>) -> T {
        linalg::quad_form(&self.phat, x) + self.qhat.dot(x) + self.vhat
    }

    pub fn gradient(&self, x: &Vector<T>) -> Vector<T> {
        &self.phat * x * T::lit(2.0) + &self.qhat
    }
}

impl<T: Real> PwqNetwork<T> {
    pub fn new(w: Mat<T>, b: Vector<T>, r: Vector<T>, pstar: Mat<T>) -> Result<Self> {
        let net = Self {
            w,
            b,
            r,
            pstar,
            quadratic_term: true,
        };
        net.check_shape()?;
        Ok(net)
    }

    /// Pure quadratic `xᵀP*x` (no hidden units).
    pub fn quadratic(pstar: Mat<T>) -> Self {
        let n = pstar.nrows();
        Self {
            w: Mat::zeros(0, n),
            b: Vector::zeros(0),
            r: Vector::zeros(0),
            pstar,
            quadratic_term: true,
        }
    }

    fn check_shape(&self) -> Result<()> {
        let (mw, n) = self.w.shape();
        if self.b.len() != mw || self.r.len() != mw {
            return Err(Error::Dimension(format!(
                "network has {mw} weight rows, {} biases, {} output weights",
                self.b.len(),
                self.r.len()
            )));
        }
        if self.pstar.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "P* is {:?}, expected {n}x{n}",
                self.pstar.shape()
            )));
        }
        Ok(())
    }

    /// `r ≥ 0` and `b ≤ −ε_b`.
    pub fn structurally_convex(&self) -> bool {
        let margin = T::lit(BIAS_MARGIN);
        self.r.iter().all(|v| *v >= T::zero()) && self.b.iter().all(|v| *v <= -margin)
    }

    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn n(&self) -> usize {
        self.w.ncols()
    }

    fn base(&self, x: &Vector<T>) -> T {
        if self.quadratic_term {
            linalg::quad_form(&self.pstar, x)
        } else {
            T::zero()
        }
    }

    /// `Wx + b`.
    pub fn pre_activation(&self, x: &Vector<T>) -> Vector<T> {
        &self.w * x + &self.b
    }

    pub fn evaluate(&self, x: &Vector<T>) -> T {
        let z = self.pre_activation(x);
        let mut acc = self.base(x);
        for i in 0..self.width() {
            if z[i] > T::zero() {
                acc += self.r[i] * z[i] * z[i];
            }
        }
        acc
    }

    pub fn gradient_x(&self, x: &Vector<T>) -> Vector<T> {
        let z = self.pre_activation(x);
        let two = T::lit(2.0);
        let mut g = if self.quadratic_term {
            &self.pstar * x * two
        } else {
            Vector::zeros(self.n())
        };
        for i in 0..self.width() {
            if z[i] > T::zero() {
                let c = two * self.r[i] * z[i];
                g += self.w.row(i).transpose() * c;
            }
        }
        g
    }

    /// Units with `Wᵢx + bᵢ > 0`; values within 1e-12 of zero count as off.
    pub fn activation_pattern(&self, x: &Vector<T>) -> ActivationPattern {
        let pre = self.pre_activation(x);
        let tol = T::tol(1e-12);
        ActivationPattern {
            active: (0..self.width()).filter(|&i| pre[i] > tol).collect(),
        }
    }

    pub fn region_coefficients(&self, pattern: &ActivationPattern) -> RegionQuadratic<T> {
        let n = self.n();
        let mut phat = if self.quadratic_term {
            self.pstar.clone()
        } else {
            Mat::zeros(n, n)
        };
        let mut qhat = Vector::zeros(n);
        let mut vhat = T::zero();
        let two = T::lit(2.0);
        for &i in &pattern.active {
            let wi = self.w.row(i).transpose();
            let (ri, bi) = (self.r[i], self.b[i]);
            phat += &wi * wi.transpose() * ri;
            qhat += &wi * (two * ri * bi);
            vhat += ri * bi * bi;
        }
        RegionQuadratic { phat, qhat, vhat }
    }

    /// Radius of the ball around the origin where no unit is active.
    pub fn inactive_radius(&self) -> T {
        let mut rho = T::max_value().unwrap_or_else(|| T::lit(f64::MAX));
        for i in 0..self.width() {
            let nrm = self.w.row(i).norm();
            if nrm > T::zero() {
                rho = rho.min(-self.b[i] / nrm);
            }
        }
        rho
    }

    /// Mean squared error on a data set.
    pub fn mse(&self, data: &TrainingSet<T>) -> T {
        if data.is_empty() {
            return T::zero();
        }
        let mut acc = T::zero();
        for s in &data.samples {
            let e = self.evaluate(&s.state) - s.value;
            acc += e * e;
        }
        acc / T::lit(data.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `θ ← θ − α∇L`.
    Gd,
    /// Adam with the usual moment constants.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub starts: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Initial biases are drawn from `[−bias_scale, −ε_b]`; `None` uses the
    /// largest state norm in the data divided by `√n`.
    pub bias_scale: Option<f64>,
    pub quadratic_term: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            width: 15,
            learning_rate: 0.1,
            epochs: 15_000,
            starts: 8,
            warmup_fraction: 0.1,
            seed: 0,
            optimizer: Optimizer::Adam,
            bias_scale: None,
            quadratic_term: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Loss of the selected start, one entry per epoch.
    pub losses: Vec<f64>,
    /// Loss of every start at the end of the warmup.
    pub warmup_losses: Vec<f64>,
    pub chosen_start: usize,
    pub final_loss: f64,
}

struct Params<T: Real> {
    w: Vec<T>,
    b: Vec<T>,
    rbar: Vec<T>,
}

struct Adam<T: Real> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

/// Flattened training data.
struct Batch<T: Real> {
    n: usize,
    xs: Vec<T>,
    targets: Vec<T>,
    /// `xᵀP*x` or zero.
    base: Vec<T>,
}

impl<T: Real> Batch<T> {
    /// Loss and its gradient with respect to `(W, b, r̄)`, flattened in that
    /// order.
    fn loss_grad(&self, p: &Params<T>, grad: &mut [T]) -> T {
        let n = self.n;
        let mw = p.b.len();
        let k = self.targets.len();
        grad.iter_mut().for_each(|g| *g = T::zero());
        let (gw, rest) = grad.split_at_mut(mw * n);
        let (gb, gr) = rest.split_at_mut(mw);
        let mut loss = T::zero();
        let mut z = vec![T::zero(); mw];
        let two = T::lit(2.0);
        for s in 0..k {
            let x = &self.xs[s * n..(s + 1) * n];
            let mut pred = self.base[s];
            for i in 0..mw {
                let mut zi = p.b[i];
                for j in 0..n {
                    zi += p.w[i * n + j] * x[j];
                }
                z[i] = zi;
                if zi > T::zero() {
                    pred += p.rbar[i] * p.rbar[i] * zi * zi;
                }
            }
            let e = pred - self.targets[s];
            loss += e * e;
            for i in 0..mw {
                let zi = z[i];
                if zi > T::zero() {
                    let r = p.rbar[i] * p.rbar[i];
                    // ∂pred/∂z = 2 r z, ∂pred/∂r̄ = 2 r̄ z²
                    let dz = two * e * two * r * zi;
                    for j in 0..n {
                        gw[i * n + j] += dz * x[j];
                    }
                    gb[i] += dz;
                    gr[i] += two * e * two * p.rbar[i] * zi * zi;
                }
            }
        }
        let scale = T::one() / T::lit(k as f64);
        grad.iter_mut().for_each(|g| *g *= scale);
        loss * scale
    }
}

impl<T: Real> Params<T> {
    fn len(&self) -> usize {
        self.w.len() + self.b.len() + self.rbar.len()
    }

    fn apply(&mut self, step: &[T]) {
        let nw = self.w.len();
        let nb = self.b.len();
        for (i, s) in step.iter().enumerate() {
            if i < nw {
                self.w[i] -= *s;
            } else if i < nw + nb {
                self.b[i - nw] -= *s;
            } else {
                self.rbar[i - nw - nb] -= *s;
            }
        }
        let cap = -T::lit(BIAS_MARGIN);
        self.b.iter_mut().for_each(|b| *b = b.min(cap));
    }
}

fn init_params<T: Real>(rng: &mut ChaCha8Rng, n: usize, width: usize, bias_scale: f64) -> Params<T> {
    let mut w = Vec::with_capacity(width * n);
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    for _ in 0..width {
        let row: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        w.extend(row.iter().map(|v| T::lit(v / nrm * inv_sqrt_n)));
    }
    let lo = -bias_scale.max(BIAS_MARGIN);
    let b = (0..width)
        .map(|_| T::lit(rng.random_range(lo..=-BIAS_MARGIN)))
        .collect();
    let rbar = (0..width).map(|_| T::lit(rng.random_range(0.0..=0.1))).collect();
    Params { w, b, rbar }
}

fn step<T: Real>(
    p: &mut Params<T>,
    grad: &[T],
    opt: Optimizer,
    lr: T,
    adam: &mut Adam<T>,
    scratch: &mut [T],
) {
    match opt {
        Optimizer::Gd => {
            for (s, g) in scratch.iter_mut().zip(grad) {
                *s = lr * *g;
            }
        }
        Optimizer::Adam => {
            let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
            adam.t += 1;
            let c1 = T::one() - b1.powi(adam.t);
            let c2 = T::one() - b2.powi(adam.t);
            for i in 0..grad.len() {
                adam.m[i] = b1 * adam.m[i] + (T::one() - b1) * grad[i];
                adam.v[i] = b2 * adam.v[i] + (T::one() - b2) * grad[i] * grad[i];
                let mh = adam.m[i] / c1;
                let vh = adam.v[i] / c2;
                scratch[i] = lr * mh / (vh.sqrt() + eps);
            }
        }
    }
    p.apply(scratch);
}

struct Run<T: Real> {
    params: Params<T>,
    adam: Adam<T>,
    losses: Vec<f64>,
}

fn run_epochs<T: Real>(
    batch: &Batch<T>,
    run: &mut Run<T>,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    let len = run.params.len();
    let mut grad = vec![T::zero(); len];
    let mut scratch = vec![T::zero(); len];
    let lr = T::lit(cfg.learning_rate);
    for _ in 0..epochs {
        let loss = batch.loss_grad(&run.params, &mut grad);
        if !loss.is_finite_val() || grad.iter().any(|g| !g.is_finite_val()) {
            return Err(Error::Training(format!(
                "non-finite loss after {} epochs (last finite loss {:?}); lower the learning rate",
                run.losses.len(),
                run.losses.last()
            )));
        }
        run.losses.push(loss.as_f64());
        step(&mut run.params, &grad, cfg.optimizer, lr, &mut run.adam, &mut scratch);
    }
    Ok(())
}

/// Fits the network by full-batch descent on the mean squared error with
/// `r = r̄²` and `b` clipped to `≤ −ε_b`, using multi-start selection.
pub fn train<T: Real>(
    data: &TrainingSet<T>,
    pstar: &Mat<T>,
    cfg: &TrainConfig,
) -> Result<(PwqNetwork<T>, TrainingLog)> {
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if cfg.starts == 0 {
        return Err(Error::Config("at least one start is required".into()));
    }
    let n = data.n;
    if pstar.shape() != (n, n) {
        return Err(Error::Dimension("P* does not match the data dimension".into()));
    }
    let mut xs = Vec::with_capacity(data.len() * n);
    let mut targets = Vec::with_capacity(data.len());
    let mut base = Vec::with_capacity(data.len());
    let mut max_norm = 0.0f64;
    for s in &data.samples {
        xs.extend(s.state.iter().copied());
        targets.push(s.value);
        base.push(if cfg.quadratic_term {
            linalg::quad_form(pstar, &s.state)
        } else {
            T::zero()
        });
        max_norm = max_norm.max(s.state.norm().as_f64());
    }
    let batch = Batch { n, xs, targets, base };
    let bias_scale = cfg
        .bias_scale
        .unwrap_or(max_norm / (n as f64).sqrt())
        .max(BIAS_MARGIN);

    let warmup = if cfg.starts > 1 {
        ((cfg.epochs as f64 * cfg.warmup_fraction).round() as usize).clamp(1, cfg.epochs.max(1))
    } else {
        0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Run<T>)> = None;
    let mut warmup_losses = Vec::with_capacity(cfg.starts);
    for s in 0..cfg.starts {
        let params = init_params::<T>(&mut rng, n, cfg.width, bias_scale);
        let len = params.len();
        let mut run = Run {
            params,
            adam: Adam {
                m: vec![T::zero(); len],
                v: vec![T::zero(); len],
                t: 0,
            },
            losses: Vec::new(),
        };
        let outcome = run_epochs(&batch, &mut run, warmup, cfg);
        let mut scratch = vec![T::zero(); len];
        let loss = match outcome {
            Ok(()) => batch.loss_grad(&run.params, &mut scratch).as_f64(),
            Err(e) => {
                debug!("start {s} diverged during warmup: {e}");
                f64::INFINITY
            }
        };
        debug!("start {s}: loss {loss:e} after {warmup} warmup epochs");
        warmup_losses.push(loss);
        let better = best
            .as_ref()
            .is_none_or(|(bs, _)| loss < warmup_losses[*bs]);
        if loss.is_finite() && better {
            best = Some((s, run));
        }
    }
    let (chosen, mut run) = best.ok_or_else(|| {
        Error::Training("every start produced a non-finite loss; lower the learning rate".into())
    })?;
    run_epochs(&batch, &mut run, cfg.epochs - warmup, cfg)?;

    let p = &run.params;
    let net = PwqNetwork {
        w: Mat::from_row_slice(cfg.width, n, &p.w),
        b: Vector::from_column_slice(&p.b),
        r: Vector::from_iterator(cfg.width, p.rbar.iter().map(|v| *v * *v)),
        pstar: pstar.clone(),
        quadratic_term: cfg.quadratic_term,
    };
    let final_loss = net.mse(data).as_f64();
    info!("training finished: start {chosen}, mse {final_loss:e}");
    Ok((
        net,
        TrainingLog {
            losses: run.losses,
            warmup_losses,
            chosen_start: chosen,
            final_loss,
        },
    ))
}

// ---------------------------------------------------------------------------
// Convexity audit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub passed: bool,
    pub structural: bool,
    pub trials: usize,
    pub min_slack: f64,
    /// `(x₁, x₂)` violating the first-order condition.
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
}

/// First-order test `Ĵ(x₂) − Ĵ(x₁) ≥ ∇Ĵ(x₁)ᵀ(x₂ − x₁)` on random pairs from
/// the box `‖x‖∞ ≤ radius`, plus the structural sign checks.
pub fn check_convexity<T: Real>(
    net: &PwqNetwork<T>,
    trials: usize,
    seed: u64,
    radius: f64,
) -> ConvexityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = net.n();
    let tol = T::tol(1e-9);
    let mut min_slack = f64::INFINITY;
    let mut witness = None;
    let draw = |rng: &mut ChaCha8Rng| {
        Vector::from_fn(n, |_, _| T::lit(rng.random_range(-radius..=radius)))
    };
    for _ in 0..trials {
        let x1 = draw(&mut rng);
        let x2 = draw(&mut rng);
        let lhs = net.evaluate(&x2) - net.evaluate(&x1);
        let rhs = net.gradient_x(&x1).dot(&(&x2 - &x1));
        let slack = lhs - rhs;
        // scale-aware slack so large values do not trip on rounding
        let scale = T::one() + lhs.abs() + rhs.abs();
        let rel = slack / scale;
        if rel.as_f64() < min_slack {
            min_slack = rel.as_f64();
        }
        if rel < -tol && witness.is_none() {
            witness = Some((linalg::to_vec_f64(&x1), linalg::to_vec_f64(&x2)));
        }
    }
    let structural = net.structurally_convex();
    ConvexityReport {
        passed: structural && witness.is_none(),
        structural,
        trials,
        min_slack: if trials == 0 { 0.0 } else { min_slack },
        witness,
    }
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub width: usize,
    pub n: usize,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub r: Vec<f64>,
    #[serde(rename = "Pstar")]
    pub pstar: Vec<Vec<f64>>,
    pub quadratic_term: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: TrainConfig,
    pub final_loss: f64,
    pub chosen_start: usize,
    pub samples: usize,
}

impl<T: Real> PwqNetwork<T> {
    pub fn to_file(&self, training: Option<TrainingMeta>) -> NetworkFile {
        NetworkFile {
            width: self.width(),
            n: self.n(),
            w: linalg::to_rows(&self.w),
            b: linalg::to_vec_f64(&self.b),
            r: linalg::to_vec_f64(&self.r),
            pstar: linalg::to_rows(&self.pstar),
            quadratic_term: self.quadratic_term,
            training,
        }
    }

    /// Rebuilds and re-validates a stored network.
    pub fn from_file(f: &NetworkFile) -> Result<Self> {
        let net = Self {
            w: linalg::from_rows(&f.w, f.n)?,
            b: linalg::from_slice(&f.b),
            r: linalg::from_slice(&f.r),
            pstar: linalg::from_rows(&f.pstar, f.n)?,
            quadratic_term: f.quadratic_term,
        };
        net.check_shape()?;
        if net.width() != f.width {
            return Err(Error::Config(format!(
                "declared width {} but {} weight rows",
                f.width,
                net.width()
            )));
        }
        if !net.structurally_convex() {
            return Err(Error::Config(
                "stored network violates r ≥ 0 or b ≤ −1e-6".into(),
            ));
        }
        Ok(net)
    }
}

impl PwqNetwork<f64> {
    pub fn save(&self, path: &Path, training: Option<TrainingMeta>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file(training))?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, NetworkFile)> {
        let f: NetworkFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok((Self::from_file(&f)?, f))
    }
}
