//! Forced-difference privacy audit.
//!
//! Two runs on δ-adjacent instances are made to emit identical messages
//! `z_μ(k)`, `z_y(k)`. The noise difference this requires at agent `i0` is
//! `Δη(k) = −Δμ(k)`, `Δζ(k) = −Δy(k)` with
//!
//! ```text
//! Δμ(k+1) = −α Δy(k)
//! Δx(k)   = x(μ(k)) − x'(μ(k) − Δμ(k))
//! Δy(k+1) = A (Δx(k+1) − Δx(k))
//! ```
//!
//! and the log-likelihood ratio of the Laplace masks bounds the privacy loss.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{Engine, EngineState, RunConfig};
use crate::error::{Error, Result};
use crate::noise::{AgentNoise, NoiseSchedule, NoiseSource, SampledNoise};
use crate::problem::{ProblemInstance, SmoothConvexCost};
use crate::theory::{epsilon_star, eta_envelope, privacy_epsilon, q_interval, Denominator, PrivacyParams};
use crate::topology::MixingMatrix;

pub const DEFAULT_HORIZON: usize = 5000;
const TAIL_TARGET: f64 = 1e-6;
const ENVELOPE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct AdjacentPair {
    base: ProblemInstance,
    shifted: ProblemInstance,
    i0: usize,
    delta_prime: DVector<f64>,
    delta: f64,
}

impl AdjacentPair {
    pub fn new(base: ProblemInstance, i0: usize, delta_prime: DVector<f64>, delta: f64) -> Result<Self> {
        if i0 >= base.n() {
            return Err(Error::InvalidArgument(format!("agent {i0} out of range 0..{}", base.n())));
        }
        if delta_prime.len() != base.dims().2 {
            return Err(Error::InvalidArgument("shift has the wrong dimension".into()));
        }
        if !(delta_prime.norm() < delta) {
            return Err(Error::InvalidArgument(format!(
                "|delta'| = {} must be below delta = {delta}",
                delta_prime.norm()
            )));
        }
        let shifted = base.shift_adjacent(i0, &delta_prime)?;
        Ok(Self { base, shifted, i0, delta_prime, delta })
    }

    /// Shift of `δ/2` in the first coordinate.
    pub fn with_default_shift(base: ProblemInstance, i0: usize, delta: f64) -> Result<Self> {
        let mut shift = DVector::zeros(base.dims().2);
        shift[0] = delta / 2.0;
        Self::new(base, i0, shift, delta)
    }

    pub fn base(&self) -> &ProblemInstance {
        &self.base
    }

    pub fn shifted(&self) -> &ProblemInstance {
        &self.shifted
    }

    pub fn i0(&self) -> usize {
        self.i0
    }

    pub fn delta_prime(&self) -> &DVector<f64> {
        &self.delta_prime
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    /// Truncated sum plus the tail bound.
    pub eps_empirical: f64,
    pub eps_truncated: f64,
    pub tail_bound: f64,
    pub eps_theoretical: f64,
    pub horizon: usize,
    pub admissible: bool,
    /// `‖Δη(k)‖₂` for `k = 0..=horizon`.
    pub delta_eta_norms: Vec<f64>,
    /// `‖Δζ(k)‖₂` for `k = 0..=horizon`.
    pub delta_zeta_norms: Vec<f64>,
    pub bound_violations: usize,
    pub alpha: f64,
    pub delta: f64,
    pub a_norm: f64,
    pub tau1: f64,
    pub tau2: f64,
}

fn geometric_tail(ratio: f64, start: usize) -> f64 {
    if ratio == 0.0 {
        return 0.0;
    }
    ratio.powi(start as i32) / (1.0 - ratio)
}

/// Envelope bound on `Σ_{k>K}` of both likelihood terms, in ℓ₁.
struct TailBound {
    c0: f64,
    alpha: f64,
    tau1: f64,
    tau2: f64,
    noise: AgentNoise,
    sqrt_m: f64,
}

impl TailBound {
    fn at(&self, horizon: usize) -> f64 {
        if self.c0 == 0.0 {
            return 0.0;
        }
        let part = |d: f64, q: f64, start: usize, scale: f64| {
            if d == 0.0 || !(self.tau1 < q) {
                return f64::INFINITY;
            }
            scale / d * (geometric_tail(self.tau1 / q, start) - geometric_tail(self.tau2 / q, start))
        };
        let eta = part(self.noise.d_eta, self.noise.q_eta, horizon, self.c0 / self.noise.q_eta);
        let zeta = part(self.noise.d_zeta, self.noise.q_zeta, horizon + 1, self.c0 / self.alpha);
        self.sqrt_m * (eta + zeta)
    }
}

fn likelihood_term(l1: f64, theta: f64) -> f64 {
    if l1 == 0.0 {
        0.0
    } else if theta == 0.0 {
        f64::INFINITY
    } else {
        l1 / theta
    }
}

fn theoretical_epsilon(alpha: f64, phi: f64, a_norm: f64, delta: f64, noise: &AgentNoise) -> Result<f64> {
    let params = |q: f64| PrivacyParams {
        alpha,
        d_zeta: noise.d_zeta,
        d_eta: noise.d_eta,
        phi,
        a_norm,
        q,
        delta,
    };
    if noise.q_eta == noise.q_zeta {
        return privacy_epsilon(&params(noise.q_zeta), Denominator::NormSquared);
    }
    let zeta = epsilon_star(&params(noise.q_zeta), Denominator::NormSquared)?;
    let eta = privacy_epsilon(
        &PrivacyParams { d_zeta: f64::INFINITY, ..params(noise.q_eta) },
        Denominator::NormSquared,
    )?;
    Ok(zeta + eta)
}

/// Runs the base instance with sampled noise and derives the mask
/// difference agent `i0` needs to hide the shift. Both runs start from the
/// same `(μ(0), x(0))`. `horizon` caps the number of audited rounds.
pub fn forced_difference_run(
    pair: &AdjacentPair,
    mixing: &MixingMatrix,
    schedule: &NoiseSchedule,
    config: &RunConfig,
    seed: u64,
    horizon: usize,
) -> Result<AuditReport> {
    config.validate()?;
    if !(config.alpha > 0.0) {
        return Err(Error::InvalidConfig("privacy audit needs a positive stepsize".into()));
    }
    if horizon < 2 {
        return Err(Error::InvalidArgument("audit horizon must be at least 2".into()));
    }
    let i0 = pair.i0;
    let alpha = config.alpha;
    let agent = pair.base.agent(i0);
    let shifted = pair.shifted.agent(i0);
    let (_, m, _) = pair.base.dims();
    let a_norm = agent.a_norm();
    let phi = agent.cost.strong_convexity();
    let noise = if schedule.zero_noise() {
        AgentNoise::new(0.0, 0.0, schedule.agent(i0).q_zeta)
    } else {
        *schedule.agent(i0)
    };

    let interval = q_interval(alpha, phi, a_norm).ok();
    let admissible = interval.is_some_and(|qi| {
        noise.q_eta > qi.q_min && noise.q_zeta > qi.q_min && noise.q_eta < 1.0 && noise.q_zeta < 1.0
    });
    // The roots exist for any positive inputs even when q_min ≥ 1.
    let c = alpha * a_norm * a_norm / phi;
    let disc = (c * c + 4.0 * c).sqrt();
    let (tau1, tau2) = ((c + disc) / 2.0, (c - disc) / 2.0);

    let tail = TailBound {
        c0: alpha * pair.delta_prime.norm() * a_norm / (tau1 - tau2),
        alpha,
        tau1,
        tau2,
        noise,
        sqrt_m: (m as f64).sqrt(),
    };
    let horizon = if admissible {
        (2..=horizon).find(|&k| tail.at(k) < TAIL_TARGET).unwrap_or(horizon)
    } else {
        horizon
    };

    let engine = Engine::new(&pair.base, mixing)?;
    let source = NoiseSource::Sampled(SampledNoise::new(schedule, seed, m));
    let mut state = EngineState::initial(&pair.base, config.mu0.as_deref(), config.x0.as_deref())?;

    let mut d_x = DVector::zeros(agent.cost.dim());
    let mut d_y = DVector::zeros(m);
    let mut eta_norms = vec![0.0];
    let mut zeta_norms = vec![0.0];
    let mut eps_truncated = 0.0;
    let mut violations = 0;
    let a_dp = &agent.coupling * &pair.delta_prime;
    let recursion_slack = 1e-9 * (1.0 + a_dp.norm());

    for k in 0..horizon {
        let (next, _) = engine.step(&state, alpha, &source)?;
        state = next;
        let mu1 = &state.mu[i0];
        let d_mu = -&d_y * alpha;
        let mu2 = mu1 - &d_mu;
        let x1 = &state.x[i0];
        let x2 = shifted.response(&mu2).map_err(|e| e.at_agent(i0, k))?.x;
        let d_x_next = x1 - x2;
        d_y = &agent.coupling * (&d_x_next - &d_x);
        d_x = d_x_next;

        // Per-round nonexpansiveness of the local response.
        let lhs = (&agent.coupling * &d_x + &a_dp).norm();
        if lhs > a_norm * a_norm / phi * d_mu.norm() + recursion_slack {
            violations += 1;
        }

        let round = k + 1;
        eta_norms.push(d_mu.norm());
        zeta_norms.push(d_y.norm());
        eps_truncated += likelihood_term(d_y.lp_norm(1), noise.theta_zeta(round));
        eps_truncated += likelihood_term(d_mu.lp_norm(1), noise.theta_eta(round));
    }

    let tail_bound = if admissible { tail.at(horizon) } else { f64::INFINITY };
    let eps_theoretical = if admissible {
        theoretical_epsilon(alpha, phi, a_norm, pair.delta, &noise).unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    if !admissible {
        violations += 1;
    }
    if eta_norms[1] != 0.0 {
        violations += 1;
    }
    if eta_norms.len() > 2 && eta_norms[2] > alpha * pair.delta * a_norm * (1.0 + ENVELOPE_SLACK) {
        violations += 1;
    }
    let mut report = AuditReport {
        eps_empirical: eps_truncated + tail_bound,
        eps_truncated,
        tail_bound,
        eps_theoretical,
        horizon,
        admissible,
        delta_eta_norms: eta_norms,
        delta_zeta_norms: zeta_norms,
        bound_violations: 0,
        alpha,
        delta: pair.delta,
        a_norm,
        tau1,
        tau2,
    };
    if !eta_bound_check(&report, alpha, pair.delta, a_norm, tau1, tau2) {
        violations += 1;
    }
    if admissible && !(report.eps_empirical <= report.eps_theoretical) {
        violations += 1;
    }
    report.bound_violations = violations;
    Ok(report)
}

/// True iff every recorded `‖Δη(k)‖` lies under the geometric envelope.
pub fn eta_bound_check(report: &AuditReport, alpha: f64, delta: f64, a_norm: f64, tau1: f64, tau2: f64) -> bool {
    report.delta_eta_norms.iter().enumerate().all(|(k, &v)| {
        let env = eta_envelope(k, alpha, delta, a_norm, tau1, tau2);
        v.is_finite() && v <= env * (1.0 + ENVELOPE_SLACK) + ENVELOPE_SLACK * delta
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonRow {
    pub d_zeta: f64,
    pub q: f64,
    pub eps_empirical: f64,
    pub eps_theory: f64,
    pub eps_star: f64,
    pub admissible: bool,
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonSweep {
    pub rows: Vec<EpsilonRow>,
    /// `ε_e` nonincreasing in `d_ζ` at every fixed `q`.
    pub monotone_in_d_zeta: bool,
    /// `ε_e` nonincreasing in `q` at every fixed `d_ζ`.
    pub monotone_in_q: bool,
}

impl EpsilonSweep {
    pub fn violations(&self) -> usize {
        self.rows.iter().map(|r| r.violations).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("d_zeta,q,eps_empirical,eps_theory,eps_star,admissible,violations\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.d_zeta, r.q, r.eps_empirical, r.eps_theory, r.eps_star, r.admissible, r.violations
            ));
        }
        out
    }
}

fn nonincreasing_along(rows: &[EpsilonRow], key: impl Fn(&EpsilonRow) -> f64, along: impl Fn(&EpsilonRow) -> f64) -> bool {
    let mut groups: Vec<(f64, Vec<&EpsilonRow>)> = Vec::new();
    for r in rows.iter().filter(|r| r.admissible) {
        match groups.iter_mut().find(|(g, _)| *g == key(r)) {
            Some((_, v)) => v.push(r),
            None => groups.push((key(r), vec![r])),
        }
    }
    groups.into_iter().all(|(_, mut v)| {
        v.sort_by(|a, b| along(a).total_cmp(&along(b)));
        v.windows(2).all(|w| w[1].eps_empirical <= w[0].eps_empirical)
    })
}

/// One audit per `(d_ζ, q)` grid point; every agent gets that `d_ζ` and
/// `q`, `d_η` comes from `defaults`.
pub fn sweep_epsilon(
    pair: &AdjacentPair,
    mixing: &MixingMatrix,
    grid: &[(f64, f64)],
    defaults: &NoiseSchedule,
    config: &RunConfig,
    seed: u64,
    horizon: usize,
) -> Result<EpsilonSweep> {
    let rows = grid
        .par_iter()
        .map(|&(d_zeta, q)| {
            let agents = defaults
                .agents()
                .iter()
                .map(|a| AgentNoise::new(a.d_eta, d_zeta, q))
                .collect();
            let schedule = NoiseSchedule::new(agents, false)?;
            let report = forced_difference_run(pair, mixing, &schedule, config, seed, horizon)?;
            let agent = pair.base.agent(pair.i0);
            let params = PrivacyParams {
                alpha: config.alpha,
                d_zeta,
                d_eta: schedule.agent(pair.i0).d_eta,
                phi: agent.cost.strong_convexity(),
                a_norm: agent.a_norm(),
                q,
                delta: pair.delta,
            };
            Ok(EpsilonRow {
                d_zeta,
                q,
                eps_empirical: report.eps_empirical,
                eps_theory: report.eps_theoretical,
                eps_star: epsilon_star(&params, Denominator::NormSquared).unwrap_or(f64::INFINITY),
                admissible: report.admissible,
                violations: report.bound_violations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpsilonSweep {
        monotone_in_d_zeta: nonincreasing_along(&rows, |r| r.q, |r| r.d_zeta),
        monotone_in_q: nonincreasing_along(&rows, |r| r.d_zeta, |r| r.q),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::AgentSpec;
    use crate::topology::{metropolis_weights, ring_plus_random};

    const INF: f64 = f64::INFINITY;

    fn pair_instance(lo: f64, hi: f64) -> (ProblemInstance, MixingMatrix) {
        let inst = ProblemInstance::new(vec![
            AgentSpec::scalar(0.5, 0.0, 0.0, 1.0, 1.0, lo, hi).unwrap(),
            AgentSpec::scalar(0.5, 0.0, 0.0, 1.0, 1.0, lo, hi).unwrap(),
        ])
        .unwrap();
        let w = metropolis_weights(&ring_plus_random(2, 0, 0).unwrap()).unwrap();
        (inst, w)
    }

    #[test]
    fn zero_shift_costs_nothing() {
        let (inst, w) = pair_instance(-INF, INF);
        let pair = AdjacentPair::new(inst, 0, DVector::zeros(1), 1.0).unwrap();
        let schedule = NoiseSchedule::uniform(2, 1.0, 1.0, 0.98).unwrap();
        let r = forced_difference_run(&pair, &w, &schedule, &RunConfig::new(0.01, 100), 1, 500).unwrap();
        assert_eq!(r.eps_empirical, 0.0);
        assert!(r.delta_eta_norms.iter().all(|&v| v == 0.0));
        assert_eq!(r.bound_violations, 0);
    }

    #[test]
    fn first_rounds() {
        let (inst, w) = pair_instance(-INF, INF);
        let pair = AdjacentPair::with_default_shift(inst, 1, 1.0).unwrap();
        let schedule = NoiseSchedule::uniform(2, 1.0, 1.0, 0.98).unwrap();
        let r = forced_difference_run(&pair, &w, &schedule, &RunConfig::new(0.01, 100), 1, 500).unwrap();
        assert_eq!(r.delta_eta_norms[1], 0.0);
        assert!((r.delta_zeta_norms[1] - 0.5).abs() < 1e-15);
        assert!((r.delta_eta_norms[2] - 0.005).abs() < 1e-15);
        assert!(r.eps_empirical <= r.eps_theoretical);
        assert!(r.tail_bound < 1e-6);
        assert_eq!(r.bound_violations, 0);
    }

    #[test]
    fn shift_must_be_strictly_inside() {
        let (inst, _) = pair_instance(-INF, INF);
        assert!(AdjacentPair::new(inst, 0, DVector::from_element(1, 1.0), 1.0).is_err());
    }

    #[test]
    fn doubled_log_breaks_envelope() {
        let (inst, w) = pair_instance(0.0, 2.0);
        let pair = AdjacentPair::new(inst, 0, DVector::from_element(1, 0.9), 1.0).unwrap();
        let schedule = NoiseSchedule::uniform(2, 1.0, 1.0, 0.95).unwrap();
        let mut r = forced_difference_run(&pair, &w, &schedule, &RunConfig::new(0.1, 100), 4, 500).unwrap();
        assert!(eta_bound_check(&r, r.alpha, 1.0, r.a_norm, r.tau1, r.tau2));
        for v in &mut r.delta_eta_norms {
            *v *= 2.0;
        }
        assert!(!eta_bound_check(&r, r.alpha, 1.0, r.a_norm, r.tau1, r.tau2));
    }

    #[test]
    fn small_decay_is_flagged() {
        let (inst, w) = pair_instance(-INF, INF);
        let pair = AdjacentPair::with_default_shift(inst, 0, 1.0).unwrap();
        let schedule = NoiseSchedule::uniform(2, 1.0, 1.0, 0.05).unwrap();
        let r = forced_difference_run(&pair, &w, &schedule, &RunConfig::new(0.01, 100), 1, 50).unwrap();
        assert!(!r.admissible);
        assert!(r.bound_violations > 0);
    }

    #[test]
    fn sweep_point_matches_single_run() {
        let (inst, w) = pair_instance(-INF, INF);
        let pair = AdjacentPair::with_default_shift(inst, 0, 1.0).unwrap();
        let defaults = NoiseSchedule::uniform(2, 1.0, 1.0, 0.98).unwrap();
        let cfg = RunConfig::new(0.01, 100);
        let sweep = sweep_epsilon(&pair, &w, &[(1.0, 0.98), (2.0, 0.98), (1.0, 0.99)], &defaults, &cfg, 3, 5000).unwrap();
        let single = forced_difference_run(&pair, &w, &defaults, &cfg, 3, 5000).unwrap();
        assert_eq!(sweep.rows[0].eps_empirical, single.eps_empirical);
        assert!(sweep.monotone_in_d_zeta && sweep.monotone_in_q);
        assert_eq!(sweep.violations(), 0);
        assert!(sweep.to_csv().starts_with("d_zeta,q,"));
    }
}
