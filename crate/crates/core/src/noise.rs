//! Decaying Laplace masks `η_i(k) ~ Lap(d_η q_ηᵏ)`, `ζ_i(k) ~ Lap(d_ζ q_ζᵏ)`.
//!
//! Every draw comes from a ChaCha stream keyed by the master seed, selected by
//! `(agent, mask kind)` and positioned by `(round, coordinate)`, so a draw does
//! not depend on the order agents are evaluated in.

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Laplace sample by inverse CDF from `u ∈ (−½, ½)`.
pub fn laplace_from_uniform(theta: f64, u: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -theta * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Uniform on the open interval `(−½, ½)` from 52 random bits.
fn centered_uniform(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64) - 0.5
}

pub fn sample_laplace<R: RngCore + ?Sized>(theta: f64, rng: &mut R) -> Result<f64> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidArgument(format!("Laplace scale must be positive, got {theta}")));
    }
    Ok(laplace_from_uniform(theta, centered_uniform(rng.next_u64())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentNoise {
    /// Scale of the μ mask; 0 disables it.
    pub d_eta: f64,
    /// Scale of the y mask; 0 disables it.
    pub d_zeta: f64,
    pub q_eta: f64,
    pub q_zeta: f64,
}

impl AgentNoise {
    pub fn new(d_eta: f64, d_zeta: f64, q: f64) -> Self {
        Self { d_eta, d_zeta, q_eta: q, q_zeta: q }
    }

    pub fn theta_eta(&self, k: usize) -> f64 {
        self.d_eta * self.q_eta.powi(k as i32)
    }

    pub fn theta_zeta(&self, k: usize) -> f64 {
        self.d_zeta * self.q_zeta.powi(k as i32)
    }

    fn validate(&self, i: usize) -> Result<()> {
        for (name, d, q) in [("d_eta", self.d_eta, self.q_eta), ("d_zeta", self.d_zeta, self.q_zeta)] {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::InvalidConfig(format!("agent {i}: {name} must be finite and >= 0, got {d}")));
            }
            if d > 0.0 && !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidConfig(format!("agent {i}: decay must lie in (0, 1), got {q}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    agents: Vec<AgentNoise>,
    zero_noise: bool,
}

impl NoiseSchedule {
    pub fn new(agents: Vec<AgentNoise>, zero_noise: bool) -> Result<Self> {
        if !zero_noise {
            for (i, a) in agents.iter().enumerate() {
                a.validate(i)?;
            }
        }
        Ok(Self { agents, zero_noise })
    }

    pub fn uniform(n: usize, d_eta: f64, d_zeta: f64, q: f64) -> Result<Self> {
        Self::new(vec![AgentNoise::new(d_eta, d_zeta, q); n], false)
    }

    pub fn disabled(n: usize) -> Self {
        Self {
            agents: vec![AgentNoise::new(0.0, 0.0, 0.5); n],
            zero_noise: true,
        }
    }

    pub fn agent(&self, i: usize) -> &AgentNoise {
        &self.agents[i]
    }

    pub fn agents(&self) -> &[AgentNoise] {
        &self.agents
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    /// True when no mask is ever nonzero.
    pub fn is_silent(&self) -> bool {
        self.zero_noise || self.agents.iter().all(|a| a.d_eta == 0.0 && a.d_zeta == 0.0)
    }

    pub fn zero_noise(&self) -> bool {
        self.zero_noise
    }

    /// Same schedule with noise disabled.
    pub fn silenced(&self) -> Self {
        Self { agents: self.agents.clone(), zero_noise: true }
    }

    pub fn max_decay(&self) -> f64 {
        self.agents
            .iter()
            .flat_map(|a| [a.q_eta, a.q_zeta])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mask {
    Eta = 0,
    Zeta = 1,
}

/// Counter-based sampler for a fixed master seed.
#[derive(Debug, Clone)]
pub struct SampledNoise<'a> {
    schedule: &'a NoiseSchedule,
    base: ChaCha12Rng,
    m: usize,
}

impl<'a> SampledNoise<'a> {
    pub fn new(schedule: &'a NoiseSchedule, seed: u64, m: usize) -> Self {
        Self {
            schedule,
            base: ChaCha12Rng::seed_from_u64(seed),
            m,
        }
    }

    fn mask(&self, agent: usize, round: usize, kind: Mask, theta: f64) -> DVector<f64> {
        if self.schedule.zero_noise || theta == 0.0 {
            return DVector::zeros(self.m);
        }
        let mut rng = self.base.clone();
        rng.set_stream(((agent as u64) << 1) | kind as u64);
        rng.set_word_pos(2 * (round as u128) * (self.m as u128));
        DVector::from_fn(self.m, |_, _| laplace_from_uniform(theta, centered_uniform(rng.next_u64())))
    }

    /// `(η_i(k), ζ_i(k))`.
    pub fn draw_round(&self, round: usize, agent: usize) -> (DVector<f64>, DVector<f64>) {
        let a = self.schedule.agent(agent);
        (
            self.mask(agent, round, Mask::Eta, a.theta_eta(round)),
            self.mask(agent, round, Mask::Zeta, a.theta_zeta(round)),
        )
    }
}

/// Free-function form of [`SampledNoise::draw_round`].
pub fn draw_round(
    schedule: &NoiseSchedule,
    round: usize,
    seed: u64,
    agent: usize,
    m: usize,
) -> (DVector<f64>, DVector<f64>) {
    SampledNoise::new(schedule, seed, m).draw_round(round, agent)
}

/// Every mask drawn during a run, indexed `[round][agent]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseLog {
    eta: Vec<Vec<DVector<f64>>>,
    zeta: Vec<Vec<DVector<f64>>>,
}

impl NoiseLog {
    pub fn push_round(&mut self, eta: Vec<DVector<f64>>, zeta: Vec<DVector<f64>>) {
        self.eta.push(eta);
        self.zeta.push(zeta);
    }

    pub fn rounds(&self) -> usize {
        self.eta.len()
    }

    pub fn eta(&self, round: usize, agent: usize) -> &DVector<f64> {
        &self.eta[round][agent]
    }

    pub fn zeta(&self, round: usize, agent: usize) -> &DVector<f64> {
        &self.zeta[round][agent]
    }

    /// `Σ_{t<k} Σ_i ζ_i(t)`.
    pub fn accumulated_zeta(&self, k: usize) -> Option<DVector<f64>> {
        let first = self.zeta.first()?.first()?;
        let mut acc = DVector::zeros(first.len());
        for round in &self.zeta[..k] {
            for z in round {
                acc += z;
            }
        }
        Some(acc)
    }
}

/// Where the engine gets its masks from.
pub enum NoiseSource<'a> {
    Sampled(SampledNoise<'a>),
    Replay(&'a NoiseLog),
}

impl NoiseSource<'_> {
    pub fn draw(&self, round: usize, agent: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        match self {
            NoiseSource::Sampled(s) => Ok(s.draw_round(round, agent)),
            NoiseSource::Replay(log) => {
                if round >= log.rounds() {
                    return Err(Error::InvalidArgument(format!(
                        "noise log holds {} rounds, round {round} requested",
                        log.rounds()
                    )));
                }
                Ok((log.eta(round, agent).clone(), log.zeta(round, agent).clone()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_maps_to_zero() {
        assert_eq!(laplace_from_uniform(3.0, 0.0), 0.0);
        assert!(laplace_from_uniform(1.0, 0.25) > 0.0);
        assert_eq!(laplace_from_uniform(1.0, 0.25), -laplace_from_uniform(1.0, -0.25));
    }

    #[test]
    fn rejects_bad_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_laplace(0.0, &mut rng).is_err());
        assert!(sample_laplace(-1.0, &mut rng).is_err());
    }

    #[test]
    fn uniform_never_hits_endpoints() {
        assert!(centered_uniform(0) > -0.5);
        assert!(centered_uniform(u64::MAX) < 0.5);
    }

    #[test]
    fn moments_at_unit_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let (mut abs, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let x = sample_laplace(1.0, &mut rng).unwrap();
            abs += x.abs();
            sq += x * x;
        }
        let (abs, sq) = (abs / n as f64, sq / n as f64);
        assert!((abs - 1.0).abs() <= 0.01, "E|x| = {abs}");
        assert!((sq - 2.0).abs() <= 0.05, "E[x^2] = {sq}");
    }

    #[test]
    fn disabled_schedule_draws_zero() {
        let s = NoiseSchedule::disabled(3);
        let (eta, zeta) = draw_round(&s, 4, 1, 2, 2);
        assert_eq!(eta, DVector::zeros(2));
        assert_eq!(zeta, DVector::zeros(2));
    }

    #[test]
    fn schedule_scales() {
        let a = AgentNoise::new(1.0, 1.0, 0.98);
        assert_eq!(a.theta_eta(0), 1.0);
        assert!((a.theta_zeta(2) - 0.9604).abs() < 1e-15);
    }

    #[test]
    fn draws_are_order_independent() {
        let s = NoiseSchedule::uniform(4, 1.0, 2.0, 0.9).unwrap();
        let a = draw_round(&s, 7, 99, 3, 2);
        let sampler = SampledNoise::new(&s, 99, 2);
        let _ = sampler.draw_round(0, 0);
        let _ = sampler.draw_round(7, 2);
        assert_eq!(sampler.draw_round(7, 3), a);
        assert_ne!(draw_round(&s, 7, 100, 3, 2), a);
        assert_ne!(a.0, a.1);
    }

    #[test]
    fn invalid_decay_rejected() {
        assert!(NoiseSchedule::uniform(2, 1.0, 1.0, 1.0).is_err());
        assert!(NoiseSchedule::uniform(2, -1.0, 1.0, 0.5).is_err());
        assert!(NoiseSchedule::uniform(2, 0.0, 0.0, 1.5).is_ok());
    }
}
