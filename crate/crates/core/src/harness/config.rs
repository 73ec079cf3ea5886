//! JSON experiment configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{AgentNoise, NoiseSchedule};
use crate::problem::{AgentSpec, BoxSet, ProblemInstance, QuadraticCost};
use crate::topology::{ring_plus_random, Graph};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSection>,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Fraction of rounds at the end used for the stationary MSE estimate.
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySection>,
}

fn one() -> usize {
    1
}

fn default_window() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<AgentConfig>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Numbers {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matrix {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

/// Box end; `null` entries are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(f64),
    Vector(Vec<Option<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Scalar coefficient of `u x²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    /// Hessian of `½xᵀUx`.
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub hessian: Option<Matrix>,
    #[serde(default = "zero_numbers")]
    pub v: Numbers,
    #[serde(default)]
    pub w: f64,
    #[serde(rename = "A")]
    pub coupling: Matrix,
    pub d: Numbers,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xmin: Option<Bound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xmax: Option<Bound>,
}

fn zero_numbers() -> Numbers {
    Numbers::Scalar(0.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_edges: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Fraction(FractionOfBound),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FractionOfBound {
    pub fraction_of_t2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub alpha: AlphaSpec,
    pub iters: usize,
    #[serde(default = "one")]
    pub record_every: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub d_eta: f64,
    #[serde(default)]
    pub d_zeta: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_zeta: Option<f64>,
    #[serde(default)]
    pub zero_noise: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<NoiseOverride>,
}

fn default_q() -> f64 {
    0.98
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            d_eta: 0.0,
            d_zeta: 0.0,
            q: default_q(),
            q_eta: None,
            q_zeta: None,
            zero_noise: false,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseOverride {
    pub agent: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    #[serde(default)]
    pub agent: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_prime: Option<Vec<f64>>,
}

fn default_delta() -> f64 {
    1.0
}

impl Default for PrivacySection {
    fn default() -> Self {
        Self { agent: 0, delta: default_delta(), delta_prime: None }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.problem.preset, &self.problem.agents) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "problem needs exactly one of `preset` or `agents`".into(),
                ))
            }
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.algorithm.iters == 0 || self.algorithm.record_every == 0 {
            return Err(Error::InvalidConfig("iters and record_every must be >= 1".into()));
        }
        if !(self.window > 0.0 && self.window <= 1.0) {
            return Err(Error::InvalidConfig(format!("window must lie in (0, 1], got {}", self.window)));
        }
        match self.algorithm.alpha {
            AlphaSpec::Value(a) if !(a.is_finite() && a >= 0.0) => {
                return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {a}")))
            }
            AlphaSpec::Fraction(f) if !(f.fraction_of_t2 > 0.0 && f.fraction_of_t2.is_finite()) => {
                return Err(Error::InvalidConfig("fraction_of_t2 must be positive".into()))
            }
            _ => {}
        }
        if self.graph.is_none() && self.problem.preset.is_none() {
            return Err(Error::InvalidConfig("explicit agents need a graph section".into()));
        }
        Ok(())
    }

    pub fn noise_schedule(&self, n: usize) -> Result<NoiseSchedule> {
        let ns = &self.noise;
        let base = AgentNoise {
            d_eta: ns.d_eta,
            d_zeta: ns.d_zeta,
            q_eta: ns.q_eta.unwrap_or(ns.q),
            q_zeta: ns.q_zeta.unwrap_or(ns.q),
        };
        let mut agents = vec![base; n];
        for o in &ns.overrides {
            let a = agents.get_mut(o.agent).ok_or_else(|| {
                Error::InvalidConfig(format!("noise override for agent {} but only {n} agents", o.agent))
            })?;
            if let Some(d) = o.d_eta {
                a.d_eta = d;
            }
            if let Some(d) = o.d_zeta {
                a.d_zeta = d;
            }
            if let Some(q) = o.q {
                a.q_eta = q;
                a.q_zeta = q;
            }
        }
        NoiseSchedule::new(agents, ns.zero_noise)
    }
}

fn numbers(v: &Numbers, len: usize, what: &str) -> Result<DVector<f64>> {
    match v {
        Numbers::Scalar(x) => Ok(DVector::from_element(len, *x)),
        Numbers::Vector(xs) if xs.len() == len => Ok(DVector::from_vec(xs.clone())),
        Numbers::Vector(xs) => Err(Error::InvalidConfig(format!("{what} has {} entries, expected {len}", xs.len()))),
    }
}

fn bound(b: &Option<Bound>, len: usize, missing: f64) -> Result<DVector<f64>> {
    match b {
        None => Ok(DVector::from_element(len, missing)),
        Some(Bound::Scalar(x)) => Ok(DVector::from_element(len, *x)),
        Some(Bound::Vector(xs)) if xs.len() == len => {
            Ok(DVector::from_iterator(len, xs.iter().map(|x| x.unwrap_or(missing))))
        }
        Some(Bound::Vector(xs)) => Err(Error::InvalidConfig(format!("box has {} entries, expected {len}", xs.len()))),
    }
}

fn rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidConfig(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl AgentConfig {
    pub fn build(&self) -> Result<AgentSpec> {
        let hessian = match (&self.u, &self.hessian) {
            (Some(u), None) => DMatrix::from_element(1, 1, 2.0 * u),
            (None, Some(Matrix::Scalar(h))) => DMatrix::from_element(1, 1, *h),
            (None, Some(Matrix::Rows(r))) => rows(r, "U")?,
            _ => return Err(Error::InvalidConfig("agent needs exactly one of `u` or `U`".into())),
        };
        let p = hessian.nrows();
        let coupling = match &self.coupling {
            Matrix::Scalar(a) => DMatrix::identity(p, p) * *a,
            Matrix::Rows(r) => rows(r, "A")?,
        };
        let m = coupling.nrows();
        let cost = QuadraticCost::new(hessian, numbers(&self.v, p, "v")?, self.w)?;
        let bounds = BoxSet::new(
            bound(&self.xmin, p, f64::NEG_INFINITY)?,
            bound(&self.xmax, p, f64::INFINITY)?,
        )?;
        AgentSpec::new(cost, coupling, numbers(&self.d, m, "d")?, bounds)
    }
}

pub fn build_agents(agents: &[AgentConfig]) -> Result<ProblemInstance> {
    let specs = agents
        .iter()
        .enumerate()
        .map(|(i, a)| a.build().map_err(|e| Error::InvalidConfig(format!("agent {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    ProblemInstance::new(specs)
}

impl GraphSection {
    pub fn build(&self, n: usize) -> Result<Graph> {
        if let Some(gn) = self.n {
            if gn != n {
                return Err(Error::InvalidConfig(format!("graph has n = {gn} but the problem has {n} agents")));
            }
        }
        match (self.kind.as_deref(), &self.edges) {
            (Some("ring_plus_random"), None) => ring_plus_random(n, self.extra_edges.unwrap_or(0), self.seed.unwrap_or(0)),
            (None | Some("edges"), Some(edges)) if self.extra_edges.is_none() && self.seed.is_none() => {
                let g = Graph::new(n, edges)?;
                if !g.is_connected() {
                    return Err(Error::InvalidConfig("graph is not connected".into()));
                }
                Ok(g)
            }
            (kind, _) => Err(Error::InvalidConfig(format!(
                "graph needs `type: ring_plus_random` or an `edges` list (got type {kind:?})"
            ))),
        }
    }
}
