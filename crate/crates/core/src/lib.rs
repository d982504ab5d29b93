//! Approximate dynamic programming for constrained linear-quadratic control
//! with a convex piecewise-quadratic value network.

pub mod certifier;
pub mod controller;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod mpc;
pub mod polytope;
pub mod pwq_net;
pub mod qp;
pub mod riccati;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision instantiations.
pub type Experiment = harness::Experiment<f64>;
pub type LtiSystem = model::LtiSystem<f64>;
pub type Polyhedron = model::Polyhedron<f64>;
pub type ProblemInstance = model::ProblemInstance<f64>;
pub type RiccatiSolution = riccati::RiccatiSolution<f64>;
pub type MpqpData = mpc::MpqpData<f64>;
pub type TrainingSet = datagen::TrainingSet<f64>;
pub type PwqNetwork = pwq_net::PwqNetwork<f64>;
pub type SimulationTrace = harness::SimulationTrace<f64>;
