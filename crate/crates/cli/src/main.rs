use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use pwq_adp::controller::Algorithm;
use pwq_adp::harness::{self, preset, Controller, ExperimentConfig, PresetName};
use pwq_adp::linalg::{self, Vector};
use pwq_adp::pwq_net::TrainingMeta;
use pwq_adp::{Error, Experiment, PwqNetwork, TrainingSet};

const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_CERT_FAILED: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "pwq-adp", version, about = "Constrained LQR with a convex piecewise-quadratic value network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample MPC values and write the training set.
    Generate(Common),
    /// Fit the value network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training set from `generate`; sampled afresh when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Check the stability condition and write the report.
    Certify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// One closed-loop rollout written as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value_t = AlgorithmArg::Pcp)]
        algorithm: AlgorithmArg,
        /// Initial state as comma-separated values; defaults to the config's.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
    },
    /// Run both online algorithms and MPC from sampled states.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Print a preset configuration as JSON.
    Preset {
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Write `config.json` here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: example1, example2 or example3.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the sampling and training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the simulation length.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct Inputs {
    /// Trained network from `train`; trained afresh when omitted.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Training set from `generate`; sampled afresh when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Pcp,
    Decomp,
    Mpc,
}

enum Failure {
    Lib(Error),
    CertificationFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::CertificationFailed) => {
            eprintln!("certification failed");
            ExitCode::from(EXIT_CERT_FAILED)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Config(_) | Error::Dimension(_) | Error::Invalid(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Preset { name, seed, out } => {
            let mut cfg = preset(name.parse()?);
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            let text = cfg.to_json()?;
            match out {
                Some(dir) => write(&dir, "config.json", &text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Generate(common) => {
            let e = experiment(&common)?;
            let data = e.generate()?;
            let mut buf = Vec::new();
            data.write_csv(&mut buf)?;
            write(&common.out, "dataset.csv", &String::from_utf8_lossy(&buf))?;
            info!("{} samples", data.len());
            Ok(())
        }
        Command::Train { common, data } => {
            let e = experiment(&common)?;
            let data = dataset(&e, data.as_deref())?;
            train_and_save(&e, &data, &common.out)?;
            Ok(())
        }
        Command::Certify { common, inputs } => {
            let e = experiment(&common)?;
            let data = dataset(&e, inputs.data.as_deref())?;
            let net = network(&e, &data, inputs.net.as_deref(), &common.out)?;
            let report = e.certify(&net, &data)?;
            write(&common.out, "certificate.json", &report.to_json()?)?;
            println!(
                "zeta {:.6} lhs {} rhs {:.6} pass {}",
                report.zeta,
                report.condition_lhs.map_or("inf".to_string(), |v| format!("{v:.6}")),
                report.condition_rhs,
                report.pass
            );
            if report.pass {
                Ok(())
            } else {
                Err(Failure::CertificationFailed)
            }
        }
        Command::Simulate {
            common,
            inputs,
            algorithm,
            x0,
        } => {
            let e = experiment(&common)?;
            let x0 = match x0 {
                Some(v) if v.len() != e.n() => {
                    return Err(Error::Config(format!("--x0 has {} entries, the system has {} states", v.len(), e.n())).into())
                }
                Some(v) => linalg::from_slice(&v),
                None => e
                    .x0()?
                    .ok_or_else(|| Error::Config("no initial state; pass --x0".into()))?,
            };
            let net;
            let mut ctrl = match algorithm {
                AlgorithmArg::Mpc => e.mpc_controller(),
                AlgorithmArg::Pcp | AlgorithmArg::Decomp => {
                    let data = match inputs.net {
                        Some(_) => None,
                        None => Some(dataset(&e, inputs.data.as_deref())?),
                    };
                    net = match (&inputs.net, &data) {
                        (Some(p), _) => load_network(&e, p)?,
                        (None, Some(d)) => train_and_save(&e, d, &common.out)?,
                        (None, None) => unreachable!(),
                    };
                    let alg = if algorithm == AlgorithmArg::Pcp {
                        Algorithm::Pcp
                    } else {
                        Algorithm::Decomposition
                    };
                    e.adp_controller(&net, alg)
                }
            };
            let steps = e.config.simulation.steps;
            let trace = harness::simulate(&e.instance, &mut ctrl, &x0, steps)?;
            fs::create_dir_all(&common.out).map_err(Error::from)?;
            trace.save_csv(&common.out.join(format!("trace_{}.csv", trace.controller)))?;
            println!(
                "{} total cost {:.6} steps {} converged {}",
                trace.controller,
                trace.total_cost,
                trace.inputs.len(),
                trace.converged
            );
            match trace.error {
                Some(msg) => Err(Error::Infeasible(msg).into()),
                None => Ok(()),
            }
        }
        Command::Compare { common, inputs } => {
            let e = experiment(&common)?;
            let data = dataset(&e, inputs.data.as_deref())?;
            let net = network(&e, &data, inputs.net.as_deref(), &common.out)?;
            let xs: Vec<Vector<f64>> = match e.x0()? {
                Some(x) => vec![x],
                None => e.evaluation_states(e.config.simulation.eval_states)?,
            };
            let mut ctrls: Vec<Controller<'_, f64>> = vec![
                e.adp_controller(&net, Algorithm::Pcp),
                e.adp_controller(&net, Algorithm::Decomposition),
                e.mpc_controller(),
            ];
            let table = harness::compare(&e.instance, &mut ctrls, &xs, e.config.simulation.steps);
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            write(&common.out, "comparison.csv", &String::from_utf8_lossy(&buf))?;
            write(&common.out, "comparison.json", &table.to_json()?)?;
            for r in &table.rows {
                println!(
                    "{:<18} cost {:>12.4} iters/step {:>6.3} flops/step {:>10.1} failures {}",
                    r.controller, r.mean_total_cost, r.mean_iterations_per_step, r.mean_flops_per_step, r.failures
                );
            }
            Ok(())
        }
    }
}

fn experiment(c: &Common) -> Result<Experiment, Error> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name.parse::<PresetName>()?),
        (None, None) => return Err(Error::Config("pass --config <file> or --preset <name>".into())),
    };
    if let Some(s) = c.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(s) = c.steps {
        cfg.simulation.steps = s;
    }
    Experiment::new(cfg)
}

fn dataset(e: &Experiment, path: Option<&Path>) -> Result<TrainingSet, Error> {
    match path {
        Some(p) => {
            let f = fs::File::open(p).map_err(|err| Error::Config(format!("{}: {err}", p.display())))?;
            let data = TrainingSet::read_csv(std::io::BufReader::new(f))?;
            if data.n != e.n() {
                return Err(Error::Config(format!("dataset has {} states, the system has {}", data.n, e.n())));
            }
            Ok(data)
        }
        None => e.generate(),
    }
}

fn load_network(e: &Experiment, path: &Path) -> Result<PwqNetwork, Error> {
    let (net, _) = PwqNetwork::load(path)?;
    if net.n() != e.n() {
        return Err(Error::Config(format!("network has {} inputs, the system has {} states", net.n(), e.n())));
    }
    Ok(net)
}

fn network(e: &Experiment, data: &TrainingSet, path: Option<&Path>, out: &Path) -> Result<PwqNetwork, Error> {
    match path {
        Some(p) => load_network(e, p),
        None => train_and_save(e, data, out),
    }
}

fn train_and_save(e: &Experiment, data: &TrainingSet, out: &Path) -> Result<PwqNetwork, Error> {
    let (net, log) = e.train(data)?;
    info!("training loss {:.4e} (start {})", log.final_loss, log.chosen_start);
    fs::create_dir_all(out)?;
    let meta = TrainingMeta {
        config: e.config.training.clone(),
        final_loss: log.final_loss,
        chosen_start: log.chosen_start,
        samples: data.len(),
    };
    net.save(&out.join("network.json"), Some(meta))?;
    write(out, "training_log.json", &serde_json::to_string_pretty(&log)?)?;
    Ok(net)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(())
}
