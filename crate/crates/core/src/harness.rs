//! Experiment presets, closed-loop simulation, controller comparison and flop
//! accounting.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::certifier::{self, CertificationMode, CertificationReport, CertifyOptions, ProbePlan};
use crate::controller::{self, Algorithm, ControllerOptions, ControllerState};
use crate::datagen::{self, GenerationOptions, TrainingSet};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{InstanceFile, LtiSystem, Polyhedron, PolyhedronFile, ProblemInstance};
use crate::mpc::{self, MpcSolution, MpqpData};
use crate::polytope;
use crate::pwq_net::{self, PwqNetwork, TrainConfig, TrainingLog};
use crate::qp::{QpSettings, QpSolver};
use crate::riccati::{self, RiccatiSolution};
use crate::scalar::Real;

/// Simulations stop once `‖x‖₂` falls below this.
pub const CONVERGED_NORM: f64 = 1e-9;

/// Flops of one decomposition iteration, times the iteration count.
pub fn flops_algo2(width: usize, n: usize, m: usize, f_qp: u64, iterations: usize) -> u64 {
    iterations as u64 * (controller::f_act(width, n, m) + f_qp + width as u64)
}

/// Flop breakdown of one controller step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopModel {
    pub f_act: u64,
    /// Counted QP flops, one entry per iteration.
    pub f_qp: Vec<u64>,
    pub total: u64,
}

impl FlopModel {
    /// Decomposition total with the counted QP flops of each iteration.
    pub fn decomposition(width: usize, n: usize, m: usize, f_qp: &[u64]) -> Self {
        let total = f_qp.iter().map(|&q| flops_algo2(width, n, m, q, 1)).sum();
        Self {
            f_act: controller::f_act(width, n, m),
            f_qp: f_qp.to_vec(),
            total,
        }
    }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Example1,
    Example2,
    Example3,
}

impl PresetName {
    pub const ALL: [PresetName; 3] = [PresetName::Example1, PresetName::Example2, PresetName::Example3];
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PresetName::Example1 => "example1",
            PresetName::Example2 => "example2",
            PresetName::Example3 => "example3",
        })
    }
}

impl FromStr for PresetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example1" => Ok(PresetName::Example1),
            "example2" => Ok(PresetName::Example2),
            "example3" => Ok(PresetName::Example3),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected example1, example2 or example3)"
            ))),
        }
    }
}

/// Where the system comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelSpec {
    Explicit(InstanceFile),
    /// Chain of equal masses between two walls, discretized by zero-order
    /// hold. States are positions then velocities; `forces_on` are 0-based
    /// mass indices.
    OscillatingMasses {
        masses: usize,
        mass: f64,
        spring: f64,
        sample_period: f64,
        forces_on: Vec<usize>,
        state_bound: f64,
        input_bound: f64,
    },
}

/// Region of interest used for data, certification and evaluation states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RegionChoice {
    /// `X₀` from the model.
    #[default]
    Instance,
    /// Planar stabilizable set grown from the LQR invariant set.
    Stabilizable { max_steps: usize },
}

/// Successor constraint `C` of the one-step problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SuccessorConstraint {
    /// `C = ℝⁿ`.
    #[default]
    None,
    /// `C = X₀`, meant for the stabilizable set.
    RegionOfInterest,
    /// `C = X`: the state constraints one step ahead.
    StateSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SamplingPlan {
    /// MPC trajectories from states near the boundary of `X₀`.
    BoundaryTrajectories { count: usize },
    /// MPC trajectories from uniform MPC-feasible states in `X₀`.
    UniformTrajectories { count: usize },
    /// Axis grid over `X₀`.
    Grid { spacing: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificationSettings {
    pub mode: CertificationMode,
    /// Probe grid spacing; `None` picks a quarter of the training grid or
    /// 0.025 for trajectory data.
    pub probe_spacing: Option<f64>,
    /// Probes used above dimension 3.
    pub random_probes: usize,
    pub rhs_directions: usize,
    pub boundary_samples: usize,
    /// Target covering radius; `None` uses half the training grid cell
    /// diagonal, or 0.1 for trajectory data.
    #[serde(default)]
    pub max_radius: Option<f64>,
}

impl Default for CertificationSettings {
    fn default() -> Self {
        Self {
            mode: CertificationMode::Sublevel,
            probe_spacing: None,
            random_probes: 20_000,
            rhs_directions: 3600,
            boundary_samples: 4000,
            max_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub x0: Option<Vec<f64>>,
    pub steps: usize,
    /// Number of random initial states for `compare`.
    pub eval_states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSpec,
    #[serde(default)]
    pub region: RegionChoice,
    pub horizon: usize,
    pub sampling: SamplingPlan,
    pub training: TrainConfig,
    #[serde(default)]
    pub certification: CertificationSettings,
    #[serde(default)]
    pub controller: ControllerOptions,
    #[serde(default)]
    pub successor: SuccessorConstraint,
    pub simulation: SimulationSettings,
    /// Seed for sampling; evaluation states use `seed + 1`.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Same seed for sampling and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.training.seed = seed;
        self
    }
}

fn rows(m: &[&[f64]]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.to_vec()).collect()
}

fn box_file(dim: usize, bound: f64) -> PolyhedronFile {
    PolyhedronFile::from_polyhedron(&Polyhedron::<f64>::inf_ball(dim, bound))
}

/// Ready-to-run configuration for one of the three worked examples.
pub fn preset(name: PresetName) -> ExperimentConfig {
    match name {
        PresetName::Example1 => ExperimentConfig {
            name: name.to_string(),
            model: ModelSpec::Explicit(InstanceFile {
                a: rows(&[&[1.0, 0.1], &[-0.1, 1.0]]),
                b: rows(&[&[1.0, 0.05], &[0.5, 1.0]]),
                q: rows(&[&[1.0, 0.0], &[0.0, 1.0]]),
                r: rows(&[&[0.1, 0.0], &[0.0, 0.1]]),
                state_set: PolyhedronFile::from_polyhedron(&Polyhedron::<f64>::universe(2)),
                input_set: box_file(2, 0.5),
                region_of_interest: box_file(2, 3.0),
            }),
            region: RegionChoice::Instance,
            horizon: 10,
            sampling: SamplingPlan::BoundaryTrajectories { count: 200 },
            training: TrainConfig::default(),
            certification: CertificationSettings::default(),
            controller: ControllerOptions::default(),
            successor: SuccessorConstraint::None,
            simulation: SimulationSettings {
                x0: Some(vec![0.0, 2.0]),
                steps: 100,
                eval_states: 20,
            },
            seed: 0,
        },
        PresetName::Example2 => ExperimentConfig {
            name: name.to_string(),
            model: ModelSpec::OscillatingMasses {
                masses: 4,
                mass: 1.0,
                spring: 1.0,
                sample_period: 0.5,
                forces_on: vec![0, 2],
                state_bound: 10.0,
                input_bound: 5.0,
            },
            region: RegionChoice::Instance,
            horizon: 20,
            sampling: SamplingPlan::UniformTrajectories { count: 100 },
            training: TrainConfig {
                width: 50,
                ..TrainConfig::default()
            },
            certification: CertificationSettings::default(),
            controller: ControllerOptions {
                relax_infeasible_successor: true,
                ..ControllerOptions::default()
            },
            successor: SuccessorConstraint::StateSet,
            simulation: SimulationSettings {
                x0: None,
                steps: 100,
                eval_states: 20,
            },
            seed: 0,
        },
        PresetName::Example3 => ExperimentConfig {
            name: name.to_string(),
            model: ModelSpec::Explicit(InstanceFile {
                a: rows(&[&[1.0, 1.0], &[0.0, 1.0]]),
                b: rows(&[&[0.4], &[0.6]]),
                q: rows(&[&[1.0, 0.0], &[0.0, 1.0]]),
                r: rows(&[&[0.1]]),
                state_set: box_file(2, 3.0),
                input_set: box_file(1, 2.0),
                region_of_interest: box_file(2, 3.0),
            }),
            region: RegionChoice::Stabilizable { max_steps: 60 },
            horizon: 6,
            sampling: SamplingPlan::Grid { spacing: 0.05 },
            training: TrainConfig::default(),
            certification: CertificationSettings {
                mode: CertificationMode::InvariantRegion,
                ..CertificationSettings::default()
            },
            controller: ControllerOptions::default(),
            successor: SuccessorConstraint::RegionOfInterest,
            simulation: SimulationSettings {
                x0: Some(vec![2.0, -2.0]),
                steps: 100,
                eval_states: 20,
            },
            seed: 0,
        },
    }
}

/// Continuous chain of masses between walls: `(Ac, Bc)`.
pub fn oscillating_masses_continuous(
    masses: usize,
    mass: f64,
    spring: f64,
    forces_on: &[usize],
) -> Result<(Mat<f64>, Mat<f64>)> {
    if masses == 0 || mass <= 0.0 || spring <= 0.0 {
        return Err(Error::Config("masses, mass and spring must be positive".into()));
    }
    if let Some(&bad) = forces_on.iter().find(|&&i| i >= masses) {
        return Err(Error::Config(format!("force on mass {bad} but only {masses} masses")));
    }
    let p = masses;
    let mut ac = Mat::zeros(2 * p, 2 * p);
    for i in 0..p {
        ac[(i, p + i)] = 1.0;
        ac[(p + i, i)] = -2.0 * spring / mass;
        if i > 0 {
            ac[(p + i, i - 1)] = spring / mass;
        }
        if i + 1 < p {
            ac[(p + i, i + 1)] = spring / mass;
        }
    }
    let mut bc = Mat::zeros(2 * p, forces_on.len());
    for (j, &i) in forces_on.iter().enumerate() {
        bc[(p + i, j)] = 1.0 / mass;
    }
    Ok((ac, bc))
}

impl ModelSpec {
    pub fn instance<T: Real>(&self) -> Result<ProblemInstance<T>> {
        match self {
            ModelSpec::Explicit(f) => f.to_instance(),
            ModelSpec::OscillatingMasses {
                masses,
                mass,
                spring,
                sample_period,
                forces_on,
                state_bound,
                input_bound,
            } => {
                if *sample_period <= 0.0 {
                    return Err(Error::Config("sample_period must be positive".into()));
                }
                let (ac, bc) = oscillating_masses_continuous(*masses, *mass, *spring, forces_on)?;
                let (a, b) = linalg::zoh(&ac, &bc, *sample_period);
                let (n, m) = (a.nrows(), b.ncols());
                let cast = |x: &Mat<f64>| x.map(T::lit);
                let sys = LtiSystem::new(cast(&a), cast(&b), linalg::identity(n), linalg::identity(m))?;
                let x = Polyhedron::inf_ball(n, T::lit(*state_bound));
                ProblemInstance::new(sys, x.clone(), Polyhedron::inf_ball(m, T::lit(*input_bound)), x)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// experiment

/// Built experiment: instance, Riccati solution, condensed MPC data and the
/// successor constraint.
#[derive(Debug, Clone)]
pub struct Experiment<T: Real> {
    pub config: ExperimentConfig,
    pub instance: ProblemInstance<T>,
    pub riccati: RiccatiSolution<T>,
    pub mpqp: MpqpData<T>,
    pub successor_set: Option<Polyhedron<T>>,
}

impl<T: Real> Experiment<T> {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        if config.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let mut instance = config.model.instance::<T>()?;
        let report = crate::model::validate(&instance)?;
        if !report.issues.is_empty() {
            return Err(Error::Invalid(report.issues.join("; ")));
        }
        let riccati = riccati::solve_dare_default(&instance.system)?;
        if let RegionChoice::Stabilizable { max_steps } = config.region {
            let olqr = mpc::lqr_invariant_set(&instance, &riccati, 1000)?;
            if !olqr.converged {
                warn!("LQR invariant set iteration did not converge");
            }
            let (xbar, verts, k) = polytope::stabilizable_set_2d(
                &instance.system,
                &instance.state_set,
                &instance.input_set,
                &olqr.set,
                max_steps,
            )?;
            info!("stabilizable set: {} vertices after {k} steps", verts.len());
            instance.region_of_interest = xbar;
        }
        let mpqp = mpc::condense(
            &instance.system,
            &instance.state_set,
            &instance.input_set,
            &riccati.p,
            config.horizon,
        )?;
        let successor_set = match config.successor {
            SuccessorConstraint::None => None,
            SuccessorConstraint::RegionOfInterest => Some(instance.region_of_interest.clone()),
            SuccessorConstraint::StateSet => Some(instance.state_set.clone()),
        };
        Ok(Self {
            config,
            instance,
            riccati,
            mpqp,
            successor_set,
        })
    }

    pub fn n(&self) -> usize {
        self.instance.system.n()
    }

    pub fn m(&self) -> usize {
        self.instance.system.m()
    }

    /// Training data per the sampling plan.
    pub fn generate(&self) -> Result<TrainingSet<T>> {
        let x0 = &self.instance.region_of_interest;
        let opts = GenerationOptions { gradients: true };
        match self.config.sampling {
            SamplingPlan::BoundaryTrajectories { count } => {
                let starts = datagen::sample_boundary_states(x0, count, self.config.seed, Some(&self.mpqp))?;
                datagen::generate_from_trajectories(&self.mpqp, &self.instance.system, &starts, opts)
            }
            SamplingPlan::UniformTrajectories { count } => {
                let starts = datagen::sample_uniform_states(x0, count, self.config.seed, Some(&self.mpqp))?;
                datagen::generate_from_trajectories(&self.mpqp, &self.instance.system, &starts, opts)
            }
            SamplingPlan::Grid { spacing } => datagen::generate_grid(&self.mpqp, x0, T::lit(spacing), None),
        }
    }

    pub fn train(&self, data: &TrainingSet<T>) -> Result<(PwqNetwork<T>, TrainingLog)> {
        pwq_net::train(data, &self.riccati.p, &self.config.training)
    }

    pub fn certify_options(&self) -> CertifyOptions {
        let s = &self.config.certification;
        let probes = if self.n() <= 3 {
            let spacing = s.probe_spacing.unwrap_or(match self.config.sampling {
                SamplingPlan::Grid { spacing } => spacing / 4.0,
                _ => 0.025,
            });
            ProbePlan::Grid { spacing }
        } else {
            ProbePlan::Random {
                count: s.random_probes,
                seed: self.config.seed.wrapping_add(2),
            }
        };
        let max_radius = s.max_radius.unwrap_or(match self.config.sampling {
            SamplingPlan::Grid { spacing } => 0.5 * spacing * (self.n() as f64).sqrt(),
            _ => 0.1,
        });
        CertifyOptions {
            mode: s.mode,
            probes,
            rhs_directions: s.rhs_directions,
            boundary_samples: s.boundary_samples,
            max_radius: Some(max_radius),
            seed: self.config.seed,
        }
    }

    pub fn certify(&self, net: &PwqNetwork<T>, data: &TrainingSet<T>) -> Result<CertificationReport> {
        certifier::certify(net, data, &self.instance, &self.mpqp, &self.certify_options())
    }

    pub fn adp_controller<'a>(&'a self, net: &'a PwqNetwork<T>, algorithm: Algorithm) -> Controller<'a, T> {
        Controller::Adp {
            net,
            successor: self.successor_set.as_ref(),
            state: ControllerState::new(ControllerOptions {
                algorithm,
                ..self.config.controller
            }),
        }
    }

    pub fn mpc_controller(&self) -> Controller<'_, T> {
        Controller::Mpc {
            mpqp: &self.mpqp,
            solver: QpSolver::new(QpSettings::default()),
            warm: None,
        }
    }

    /// MPC-feasible uniform states from `X₀` for comparisons.
    pub fn evaluation_states(&self, count: usize) -> Result<Vec<Vector<T>>> {
        datagen::sample_uniform_states(
            &self.instance.region_of_interest,
            count,
            self.config.seed.wrapping_add(1),
            Some(&self.mpqp),
        )
    }

    /// Configured initial state, when set.
    pub fn x0(&self) -> Result<Option<Vector<T>>> {
        match &self.config.simulation.x0 {
            None => Ok(None),
            Some(v) if v.len() != self.n() => Err(Error::Config(format!(
                "x0 has {} entries, the system has {} states",
                v.len(),
                self.n()
            ))),
            Some(v) => Ok(Some(linalg::from_slice(v))),
        }
    }
}

// ---------------------------------------------------------------------------
// controllers and simulation

pub enum Controller<'a, T: Real> {
    Adp {
        net: &'a PwqNetwork<T>,
        successor: Option<&'a Polyhedron<T>>,
        state: ControllerState<T>,
    },
    Mpc {
        mpqp: &'a MpqpData<T>,
        solver: QpSolver,
        warm: Option<MpcSolution<T>>,
    },
}

/// Input and effort of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput<T: Real> {
    pub u: Vector<T>,
    pub iterations: usize,
    pub flops: u64,
    /// The successor constraint had to be dropped.
    pub relaxed: bool,
}

impl<T: Real> Controller<'_, T> {
    pub fn name(&self) -> String {
        match self {
            Controller::Adp { state, .. } => format!("adp-{}", state.options.algorithm),
            Controller::Mpc { .. } => "mpc".to_string(),
        }
    }

    pub fn reset(&mut self) {
        match self {
            Controller::Adp { state, .. } => state.reset(),
            Controller::Mpc { warm, .. } => *warm = None,
        }
    }

    pub fn step(&mut self, instance: &ProblemInstance<T>, x: &Vector<T>) -> Result<ControlOutput<T>> {
        match self {
            Controller::Adp { net, successor, state } => {
                let r = controller::control_step(state, net, &instance.system, &instance.input_set, *successor, x)?;
                Ok(ControlOutput {
                    u: r.input(),
                    iterations: r.iterations,
                    flops: r.flops,
                    relaxed: r.relaxed,
                })
            }
            Controller::Mpc { mpqp, solver, warm } => {
                let sol = mpc::solve_mpc_with(solver, mpqp, x, warm.as_ref())?;
                let out = ControlOutput {
                    u: sol.first_input(mpqp.m),
                    iterations: sol.qp_iterations,
                    flops: sol.flops,
                    relaxed: false,
                };
                *warm = Some(sol);
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub iterations: usize,
    pub flops: u64,
    #[serde(default)]
    pub relaxed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace<T: Real> {
    pub controller: String,
    pub states: Vec<Vector<T>>,
    pub inputs: Vec<Vector<T>>,
    pub stage_costs: Vec<T>,
    pub total_cost: T,
    pub steps: Vec<StepStats>,
    pub converged: bool,
    /// Set when the controller failed and the trace was cut short.
    pub error: Option<String>,
}

impl<T: Real> SimulationTrace<T> {
    pub fn final_state(&self) -> &Vector<T> {
        self.states.last().expect("trace holds the initial state")
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.iterations as f64).sum::<f64>() / self.steps.len() as f64
    }

    pub fn mean_flops(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.flops as f64).sum::<f64>() / self.steps.len() as f64
    }

    /// Largest `‖x_{t+1} − Ax_t − Bu_t‖∞` along the trace.
    pub fn dynamics_residual(&self, sys: &LtiSystem<T>) -> T {
        let mut worst = T::zero();
        for (t, u) in self.inputs.iter().enumerate() {
            let r = &self.states[t + 1] - sys.step(&self.states[t], u);
            worst = worst.max(linalg::inf_norm(&r));
        }
        worst
    }

    /// Columns `t, x0.., u0.., stage_cost, iters, flops`; the last row holds
    /// the final state with the remaining columns empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.states[0].len();
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend(["stage_cost", "iters", "flops"].map(String::from));
        wr.write_record(&header)?;
        let f = |v: T| format!("{:.16e}", v.as_f64());
        for (t, x) in self.states.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(x.iter().map(|&v| f(v)));
            if t < self.inputs.len() {
                rec.extend(self.inputs[t].iter().map(|&v| f(v)));
                rec.push(f(self.stage_costs[t]));
                rec.push(self.steps[t].iterations.to_string());
                rec.push(self.steps[t].flops.to_string());
            } else {
                rec.extend(std::iter::repeat_n(String::new(), m + 3));
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Closed-loop rollout for at most `steps` steps.
pub fn simulate<T: Real>(
    instance: &ProblemInstance<T>,
    ctrl: &mut Controller<'_, T>,
    x0: &Vector<T>,
    steps: usize,
) -> Result<SimulationTrace<T>> {
    let sys = &instance.system;
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!("x0 has {} entries, expected {}", x0.len(), sys.n())));
    }
    if !polytope::contains_tol(&instance.state_set, x0, T::tol(polytope::MEMBERSHIP_TOL)) {
        return Err(Error::Infeasible("initial state violates the state constraints".into()));
    }
    ctrl.reset();
    let mut trace = SimulationTrace {
        controller: ctrl.name(),
        states: vec![x0.clone()],
        inputs: Vec::new(),
        stage_costs: Vec::new(),
        total_cost: T::zero(),
        steps: Vec::new(),
        converged: false,
        error: None,
    };
    let conv = T::lit(CONVERGED_NORM);
    let mut x = x0.clone();
    for _ in 0..steps {
        if x.norm() <= conv {
            trace.converged = true;
            break;
        }
        let out = match ctrl.step(instance, &x) {
            Ok(o) => o,
            Err(e) => {
                warn!("{} failed at t = {}: {e}", trace.controller, trace.inputs.len());
                trace.error = Some(e.to_string());
                break;
            }
        };
        let cost = sys.stage_cost(&x, &out.u);
        x = sys.step(&x, &out.u);
        trace.total_cost += cost;
        trace.stage_costs.push(cost);
        trace.inputs.push(out.u);
        trace.steps.push(StepStats {
            iterations: out.iterations,
            flops: out.flops,
            relaxed: out.relaxed,
        });
        trace.states.push(x.clone());
    }
    if x.norm() <= conv {
        trace.converged = true;
    }
    Ok(trace)
}

/// Receding-horizon MPC baseline.
pub fn simulate_mpc<T: Real>(
    instance: &ProblemInstance<T>,
    mpqp: &MpqpData<T>,
    x0: &Vector<T>,
    steps: usize,
) -> Result<SimulationTrace<T>> {
    let mut ctrl = Controller::Mpc {
        mpqp,
        solver: QpSolver::new(QpSettings::default()),
        warm: None,
    };
    simulate(instance, &mut ctrl, x0, steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub controller: String,
    /// Mean total cost over the runs that finished.
    pub mean_total_cost: f64,
    pub mean_iterations_per_step: f64,
    pub mean_flops_per_step: f64,
    pub max_flops_per_step: u64,
    pub failures: usize,
    /// Steps solved without the successor constraint.
    pub relaxed_steps: usize,
    /// Informational only.
    pub wall_clock_seconds: f64,
    /// Total cost per initial state, `None` on failure.
    pub costs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub steps: usize,
    pub initial_states: Vec<Vec<f64>>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.controller == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per controller, wall-clock excluded so output is reproducible.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "controller",
            "mean_total_cost",
            "mean_iters_per_step",
            "mean_flops_per_step",
            "max_flops_per_step",
            "failures",
            "relaxed_steps",
        ])?;
        for r in &self.rows {
            wr.write_record([
                r.controller.clone(),
                format!("{:.16e}", r.mean_total_cost),
                format!("{:.16e}", r.mean_iterations_per_step),
                format!("{:.16e}", r.mean_flops_per_step),
                r.max_flops_per_step.to_string(),
                r.failures.to_string(),
                r.relaxed_steps.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs every controller from every initial state. Failures are recorded
/// per cell.
pub fn compare<T: Real>(
    instance: &ProblemInstance<T>,
    controllers: &mut [Controller<'_, T>],
    initial_states: &[Vector<T>],
    steps: usize,
) -> ComparisonTable {
    let mut rows = Vec::with_capacity(controllers.len());
    for ctrl in controllers.iter_mut() {
        let start = Instant::now();
        let mut costs = Vec::with_capacity(initial_states.len());
        let (mut iters, mut flops, mut nsteps, mut max_flops) = (0.0, 0.0, 0usize, 0u64);
        let mut relaxed = 0;
        for x0 in initial_states {
            match simulate(instance, ctrl, x0, steps) {
                Ok(tr) if tr.error.is_none() => {
                    costs.push(Some(tr.total_cost.as_f64()));
                    for s in &tr.steps {
                        iters += s.iterations as f64;
                        flops += s.flops as f64;
                        max_flops = max_flops.max(s.flops);
                        relaxed += usize::from(s.relaxed);
                    }
                    nsteps += tr.steps.len();
                }
                Ok(_) | Err(_) => costs.push(None),
            }
        }
        let ok: Vec<f64> = costs.iter().flatten().copied().collect();
        let mean = if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        };
        let per = |v: f64| if nsteps == 0 { 0.0 } else { v / nsteps as f64 };
        rows.push(ComparisonRow {
            controller: ctrl.name(),
            mean_total_cost: mean,
            mean_iterations_per_step: per(iters),
            mean_flops_per_step: per(flops),
            max_flops_per_step: max_flops,
            failures: costs.len() - ok.len(),
            relaxed_steps: relaxed,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            costs,
        });
    }
    ComparisonTable {
        steps,
        initial_states: initial_states.iter().map(linalg::to_vec_f64).collect(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn flop_formula_scales_with_iterations() {
        let one = flops_algo2(15, 2, 1, 100, 1);
        assert_eq!(one, controller::f_act(15, 2, 1) + 100 + 15);
        assert_eq!(flops_algo2(15, 2, 1, 100, 2), 2 * one);
        let fm = FlopModel::decomposition(15, 2, 1, &[100, 0]);
        assert_eq!(fm.total, one + flops_algo2(15, 2, 1, 0, 1));
    }

    #[test]
    fn presets_build() {
        let e1 = Experiment::<f64>::new(preset(PresetName::Example1)).unwrap();
        assert_eq!((e1.n(), e1.m()), (2, 2));
        assert!(e1.successor_set.is_none());
        let e3 = Experiment::<f64>::new(preset(PresetName::Example3)).unwrap();
        let v = polytope::vertices_2d(&e3.instance.region_of_interest).unwrap();
        assert_eq!(v.len(), 8);
        assert!(e3.successor_set.is_some());
        let e2 = Experiment::<f64>::new(preset(PresetName::Example2)).unwrap();
        assert_eq!((e2.n(), e2.m()), (8, 2));
        assert_eq!(e2.mpqp.horizon, 20);
    }

    #[test]
    fn masses_model_shape() {
        let (ac, bc) = oscillating_masses_continuous(4, 1.0, 1.0, &[0, 2]).unwrap();
        // stiffness block is the tridiagonal (-2, 1) matrix
        assert_eq!(ac[(4, 0)], -2.0);
        assert_eq!(ac[(4, 1)], 1.0);
        assert_eq!(ac[(5, 0)], 1.0);
        assert_eq!(ac[(7, 2)], 1.0);
        assert_eq!(ac[(7, 3)], -2.0);
        assert_eq!(bc[(4, 0)], 1.0);
        assert_eq!(bc[(6, 1)], 1.0);
        assert_eq!(bc.iter().filter(|&&v| v != 0.0).count(), 2);
        assert!(oscillating_masses_continuous(4, 1.0, 1.0, &[4]).is_err());
    }

    #[test]
    fn zero_state_gives_empty_trace() {
        let e = Experiment::<f64>::new(preset(PresetName::Example3)).unwrap();
        let tr = simulate_mpc(&e.instance, &e.mpqp, &Vector::zeros(2), 100).unwrap();
        assert!(tr.converged);
        assert_eq!(tr.total_cost, 0.0);
        assert!(tr.inputs.is_empty());
    }

    #[test]
    fn mpc_trace_is_consistent() {
        let e = Experiment::<f64>::new(preset(PresetName::Example3)).unwrap();
        let x0 = Vector::from_column_slice(&[2.0, -2.0]);
        let tr = simulate_mpc(&e.instance, &e.mpqp, &x0, 100).unwrap();
        assert!(tr.error.is_none());
        assert!(tr.dynamics_residual(&e.instance.system) <= 1e-12);
        let sum: f64 = tr.stage_costs.iter().sum();
        assert_relative_eq!(sum, tr.total_cost, max_relative = 1e-14);
        assert!(tr.final_state().norm() < 1e-3);
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x0,x1,u0,stage_cost,iters,flops"));
        assert_eq!(text.lines().count(), tr.states.len() + 1);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let e = Experiment::<f64>::new(preset(PresetName::Example3)).unwrap();
        let x0 = Vector::from_column_slice(&[5.0, 0.0]);
        assert!(matches!(
            simulate_mpc(&e.instance, &e.mpqp, &x0, 10),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn identical_controllers_give_identical_rows() {
        let e = Experiment::<f64>::new(preset(PresetName::Example3)).unwrap();
        let xs = e.evaluation_states(3).unwrap();
        let mut ctrls = vec![e.mpc_controller(), e.mpc_controller()];
        let t = compare(&e.instance, &mut ctrls, &xs, 30);
        assert_eq!(t.rows[0].costs, t.rows[1].costs);
        assert_eq!(t.rows[0].mean_flops_per_step, t.rows[1].mean_flops_per_step);
    }

    #[test]
    fn config_round_trip_and_unknown_preset() {
        for name in PresetName::ALL {
            let c = preset(name);
            let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
            assert_eq!(back, c);
        }
        assert!(matches!("example9".parse::<PresetName>(), Err(Error::Config(_))));
    }
}
