//! Bundled problem instances.
//!
//! * `sym2`: two agents with `f(x) = x²`, `a = 1`, demand 1 each, no box.
//!   Optimum `x* = (1, 1)`, `μ* = 2`.
//! * `kkt2`: `f₁ = x²`, `f₂ = 2x²`, total demand 3, boxes `[0, 10]`.
//!   Optimum `x* = (2, 1)`, `μ* = 4`, objective 6.
//! * `dispatch14`: synthetic 14-unit quadratic dispatch with total demand
//!   231 split evenly, heterogeneous costs and couplings, boxes `[0, 60]`,
//!   on a ring with 28 random chords.

use crate::error::{Error, Result};
use crate::problem::{AgentSpec, ProblemInstance};
use crate::topology::{ring_plus_random, Graph};

pub const PRESETS: [&str; 3] = ["sym2", "kkt2", "dispatch14"];

const INF: f64 = f64::INFINITY;

const DISPATCH_U: [f64; 14] = [
    0.062, 0.085, 0.071, 0.094, 0.058, 0.079, 0.066, 0.088, 0.053, 0.097, 0.074, 0.069, 0.082, 0.091,
];
const DISPATCH_V: [f64; 14] = [
    1.20, 1.85, 1.42, 1.63, 1.07, 1.96, 1.31, 1.55, 1.74, 1.12, 1.48, 1.89, 1.26, 1.68,
];
const DISPATCH_A: [f64; 14] = [
    1.00, 0.92, 1.08, 0.85, 1.15, 0.97, 1.04, 0.88, 1.19, 0.95, 1.11, 0.83, 1.02, 0.90,
];
pub const DISPATCH_TOTAL: f64 = 231.0;
const DISPATCH_CHORDS: usize = 28;
const DISPATCH_GRAPH_SEED: u64 = 2024;

#[derive(Debug, Clone)]
pub struct Preset {
    pub instance: ProblemInstance,
    pub graph: Graph,
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "sym2" => Ok(Preset {
            instance: ProblemInstance::new(vec![
                AgentSpec::scalar(1.0, 0.0, 0.0, 1.0, 1.0, -INF, INF)?,
                AgentSpec::scalar(1.0, 0.0, 0.0, 1.0, 1.0, -INF, INF)?,
            ])?,
            graph: ring_plus_random(2, 0, 0)?,
        }),
        "kkt2" => Ok(Preset {
            instance: ProblemInstance::new(vec![
                AgentSpec::scalar(1.0, 0.0, 0.0, 1.0, 1.5, 0.0, 10.0)?,
                AgentSpec::scalar(2.0, 0.0, 0.0, 1.0, 1.5, 0.0, 10.0)?,
            ])?,
            graph: ring_plus_random(2, 0, 0)?,
        }),
        "dispatch14" => {
            let d = DISPATCH_TOTAL / 14.0;
            let agents = (0..14)
                .map(|i| AgentSpec::scalar(DISPATCH_U[i], DISPATCH_V[i], 0.0, DISPATCH_A[i], d, 0.0, 60.0))
                .collect::<Result<Vec<_>>>()?;
            Ok(Preset {
                instance: ProblemInstance::new(agents)?,
                graph: ring_plus_random(14, DISPATCH_CHORDS, DISPATCH_GRAPH_SEED)?,
            })
        }
        other => Err(Error::InvalidConfig(format!(
            "unknown preset `{other}` (available: {})",
            PRESETS.join(", ")
        ))),
    }
}
