//! Simulator and analysis toolkit for distributed resource allocation with
//! Laplace-masked message exchange.

pub use nalgebra;

pub mod engine;
pub mod error;
pub mod harness;
pub mod local_solver;
pub mod noise;
pub mod oracle;
pub mod privacy_audit;
pub mod problem;
pub mod theory;
pub mod topology;

pub use engine::{Engine, EngineState, RoundMetrics, RunConfig, RunTrace};
pub use error::{Error, Result};
pub use noise::{AgentNoise, NoiseLog, NoiseSchedule};
pub use oracle::{solve_dual, OptSolution};
pub use privacy_audit::{forced_difference_run, AdjacentPair, AuditReport};
pub use problem::{AgentSpec, BoxSet, Moduli, ProblemInstance, QuadraticCost, SmoothConvexCost};
pub use theory::{Denominator, TheoryConstants};
pub use topology::{metropolis_weights, ring_plus_random, Graph, MixingMatrix};
