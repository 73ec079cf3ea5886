//! Synchronous round-based execution of the masked mismatch-tracking
//! iteration.
//!
//! One round, for every agent `i` reading only round-`k` values:
//!
//! ```text
//! z_μi = μ_i + η_i(k)            z_yi = y_i + ζ_i(k)
//! μ_i⁺ = Σ_j w_ij z_μj − α y_i
//! x_i⁺ = argmin_{z ∈ X_i} f_i(z) − μ_i⁺ᵀ A_i z
//! y_i⁺ = Σ_j w_ij z_yj + A_i x_i⁺ − A_i x_i
//! ```
//!
//! With the noise disabled this is the plain tracking method.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::local_solver::kkt_residual;
use crate::noise::{NoiseLog, NoiseSchedule, NoiseSource, SampledNoise};
use crate::problem::{ProblemInstance, SmoothConvexCost};
use crate::topology::MixingMatrix;

const DIVERGENCE_LIMIT: f64 = 1e100;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub mu: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub round: usize,
    /// `Σ_{t<k} Σ_i ζ_i(t)`.
    pub zeta_sum: DVector<f64>,
}

impl EngineState {
    /// `μ(0) = mu0` (default 0), `x(0) = x0` (default box projection of 0),
    /// `y_i(0) = A_i x_i(0) − d_i`.
    pub fn initial(
        instance: &ProblemInstance,
        mu0: Option<&[DVector<f64>]>,
        x0: Option<&[DVector<f64>]>,
    ) -> Result<Self> {
        let (n, m, p) = instance.dims();
        let mu = match mu0 {
            Some(v) => check_stack(v, n, m, "mu0")?.to_vec(),
            None => vec![DVector::zeros(m); n],
        };
        let x = match x0 {
            Some(v) => check_stack(v, n, p, "x0")?.to_vec(),
            None => instance
                .agents()
                .iter()
                .map(|a| a.bounds.project(&DVector::zeros(p)))
                .collect(),
        };
        let y = instance
            .agents()
            .iter()
            .zip(&x)
            .map(|(a, xi)| &a.coupling * xi - &a.demand)
            .collect();
        Ok(Self {
            mu,
            x,
            y,
            round: 0,
            zeta_sum: DVector::zeros(m),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.mu
            .iter()
            .chain(&self.x)
            .chain(&self.y)
            .all(|v| v.iter().all(|c| c.is_finite() && c.abs() < DIVERGENCE_LIMIT))
    }

    pub fn mean_mu(&self) -> DVector<f64> {
        let n = self.mu.len() as f64;
        self.mu.iter().fold(DVector::zeros(self.mu[0].len()), |acc, v| acc + v) / n
    }
}

fn check_stack<'v>(v: &'v [DVector<f64>], n: usize, dim: usize, what: &str) -> Result<&'v [DVector<f64>]> {
    if v.len() != n || v.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidArgument(format!("{what} must hold {n} vectors of length {dim}")));
    }
    Ok(v)
}

/// Masks drawn in one round, indexed by agent.
#[derive(Debug, Clone)]
pub struct RoundMasks {
    pub eta: Vec<DVector<f64>>,
    pub zeta: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub alpha: f64,
    pub iters: usize,
    pub record_every: usize,
    pub mu0: Option<Vec<DVector<f64>>>,
    pub x0: Option<Vec<DVector<f64>>>,
    /// Keep every mask in the trace.
    pub record_noise: bool,
    /// Reference optimum for the `mse` metric.
    pub reference: Option<Vec<DVector<f64>>>,
}

impl RunConfig {
    pub fn new(alpha: f64, iters: usize) -> Self {
        Self {
            alpha,
            iters,
            record_every: 1,
            mu0: None,
            x0: None,
            record_noise: true,
            reference: None,
        }
    }

    pub fn with_reference(mut self, x_star: Vec<DVector<f64>>) -> Self {
        self.reference = Some(x_star);
        self
    }

    pub fn with_record_every(mut self, stride: usize) -> Self {
        self.record_every = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidConfig(format!("stepsize must be >= 0, got {}", self.alpha)));
        }
        if self.iters == 0 {
            return Err(Error::InvalidConfig("iters must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub k: usize,
    /// `‖x(k) − x*‖²`, NaN without a reference.
    pub mse: f64,
    /// `‖(I − W)μ(k)‖`.
    pub consensus_mu: f64,
    /// `‖Σ y_i − Σ(A_i x_i − d_i) − Σ_{t<k} Σ_i ζ_i(t)‖`.
    pub tracking_residual: f64,
    /// `‖Σ A_i x_i − Σ d_i‖`.
    pub feasibility: f64,
    /// Magnitude of the summed quantities, used to scale tracking tolerances.
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<RoundMetrics>,
    pub final_state: EngineState,
    pub noise_log: Option<NoiseLog>,
    /// First round at which the iterates blew up.
    pub diverged_at: Option<usize>,
}

impl RunTrace {
    pub fn last(&self) -> &RoundMetrics {
        self.records.last().expect("trace always has the initial record")
    }
}

pub struct Engine<'a> {
    instance: &'a ProblemInstance,
    mixing: &'a MixingMatrix,
}

impl<'a> Engine<'a> {
    pub fn new(instance: &'a ProblemInstance, mixing: &'a MixingMatrix) -> Result<Self> {
        if instance.n() != mixing.n() {
            return Err(Error::InvalidConfig(format!(
                "instance has {} agents but the mixing matrix is {}x{}",
                instance.n(),
                mixing.n(),
                mixing.n()
            )));
        }
        Ok(Self { instance, mixing })
    }

    pub fn step(&self, state: &EngineState, alpha: f64, noise: &NoiseSource) -> Result<(EngineState, RoundMasks)> {
        let k = state.round;
        let n = self.instance.n();
        let mut masks = RoundMasks {
            eta: Vec::with_capacity(n),
            zeta: Vec::with_capacity(n),
        };
        let mut z_mu = Vec::with_capacity(n);
        let mut z_y = Vec::with_capacity(n);
        for i in 0..n {
            let (eta, zeta) = noise.draw(k, i)?;
            z_mu.push(&state.mu[i] + &eta);
            z_y.push(&state.y[i] + &zeta);
            masks.eta.push(eta);
            masks.zeta.push(zeta);
        }
        let mixed_mu = self.mixing.mix(&z_mu);
        let mixed_y = self.mixing.mix(&z_y);

        let mut mu = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for (i, agent) in self.instance.agents().iter().enumerate() {
            let mu_next = &mixed_mu[i] - &state.y[i] * alpha;
            let x_next = agent.response(&mu_next).map_err(|e| e.at_agent(i, k))?.x;
            let y_next = &mixed_y[i] + &agent.coupling * (&x_next - &state.x[i]);
            mu.push(mu_next);
            x.push(x_next);
            y.push(y_next);
        }
        let zeta_sum = masks.zeta.iter().fold(state.zeta_sum.clone(), |acc, z| acc + z);
        Ok((
            EngineState {
                mu,
                x,
                y,
                round: k + 1,
                zeta_sum,
            },
            masks,
        ))
    }

    pub fn metrics(&self, state: &EngineState, reference: Option<&[DVector<f64>]>) -> RoundMetrics {
        let (consensus_mu, _, feasibility) = fixed_point_residual(state, self.instance, self.mixing);
        let mismatch = self.instance.mismatch(&state.x);
        let y_sum = state.y.iter().fold(DVector::zeros(mismatch.len()), |acc, v| acc + v);
        let tracking_residual = (&y_sum - &mismatch - &state.zeta_sum).norm();
        let magnitude = state.y.iter().map(|v| v.norm()).sum::<f64>()
            + self
                .instance
                .agents()
                .iter()
                .zip(&state.x)
                .map(|(a, xi)| (&a.coupling * xi).norm() + a.demand.norm())
                .sum::<f64>()
            + state.zeta_sum.norm();
        let mse = reference.map_or(f64::NAN, |r| {
            state.x.iter().zip(r).map(|(a, b)| (a - b).norm_squared()).sum()
        });
        RoundMetrics {
            k: state.round,
            mse,
            consensus_mu,
            tracking_residual,
            feasibility,
            magnitude,
        }
    }

    pub fn run_from(&self, config: &RunConfig, noise: &NoiseSource) -> Result<RunTrace> {
        config.validate()?;
        let reference = config.reference.as_deref();
        let mut state = EngineState::initial(self.instance, config.mu0.as_deref(), config.x0.as_deref())?;
        let mut records = vec![self.metrics(&state, reference)];
        let mut log = config.record_noise.then(NoiseLog::default);
        let mut diverged_at = None;
        for k in 1..=config.iters {
            let (next, masks) = self.step(&state, config.alpha, noise)?;
            state = next;
            if let Some(log) = log.as_mut() {
                log.push_round(masks.eta, masks.zeta);
            }
            if !state.is_finite() {
                diverged_at = Some(k);
                records.push(self.metrics(&state, reference));
                break;
            }
            if k % config.record_every == 0 || k == config.iters {
                records.push(self.metrics(&state, reference));
            }
        }
        Ok(RunTrace {
            records,
            final_state: state,
            noise_log: log,
            diverged_at,
        })
    }

    pub fn run(&self, schedule: &NoiseSchedule, config: &RunConfig, seed: u64) -> Result<RunTrace> {
        let (_, m, _) = self.instance.dims();
        let sampler = SampledNoise::new(schedule, seed, m);
        self.run_from(config, &NoiseSource::Sampled(sampler))
    }

    pub fn replay(&self, log: &NoiseLog, config: &RunConfig) -> Result<RunTrace> {
        self.run_from(config, &NoiseSource::Replay(log))
    }
}

/// One synchronous round with sampled noise.
pub fn step(
    state: &EngineState,
    instance: &ProblemInstance,
    mixing: &MixingMatrix,
    schedule: &NoiseSchedule,
    alpha: f64,
    seed: u64,
) -> Result<EngineState> {
    let engine = Engine::new(instance, mixing)?;
    let sampler = SampledNoise::new(schedule, seed, instance.dims().1);
    engine
        .step(state, alpha, &NoiseSource::Sampled(sampler))
        .map(|(s, _)| s)
}

pub fn run(
    instance: &ProblemInstance,
    mixing: &MixingMatrix,
    schedule: &NoiseSchedule,
    config: &RunConfig,
    seed: u64,
) -> Result<RunTrace> {
    Engine::new(instance, mixing)?.run(schedule, config, seed)
}

/// `(‖(I − W)μ‖, ‖y‖, ‖Σ(A_i x_i − d_i)‖)`; all three vanish at an optimal
/// fixed point.
pub fn fixed_point_residual(
    state: &EngineState,
    instance: &ProblemInstance,
    mixing: &MixingMatrix,
) -> (f64, f64, f64) {
    let mixed = mixing.mix(&state.mu);
    let consensus = state
        .mu
        .iter()
        .zip(&mixed)
        .map(|(a, b)| (a - b).norm_squared())
        .sum::<f64>()
        .sqrt();
    let y_norm = state.y.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    let feasibility = instance.mismatch(&state.x).norm();
    (consensus, y_norm, feasibility)
}

/// Feasibility gap and the largest per-agent KKT residual of the local
/// problems at the averaged multiplier.
pub fn optimality_residuals(state: &EngineState, instance: &ProblemInstance) -> (f64, f64) {
    let mu = state.mean_mu();
    let kkt = instance
        .agents()
        .iter()
        .zip(&state.x)
        .map(|(a, xi)| {
            let c = a.coupling.transpose() * &mu;
            kkt_residual(&a.cost, &a.bounds, &c, xi) / a.cost.lipschitz().max(1.0)
        })
        .fold(0.0, f64::max);
    (instance.mismatch(&state.x).norm(), kkt)
}
