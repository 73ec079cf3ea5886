//! Monte Carlo orchestration: resolve a config, fan trials out across
//! threads, average traces, compare against the theory bounds.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{build_agents, AlphaSpec, ExperimentConfig, PrivacySection};
use super::presets::preset;
use crate::engine::{Engine, RoundMetrics, RunConfig, RunTrace};
use crate::error::{Error, Result};
use crate::noise::NoiseSchedule;
use crate::oracle::{solve_dual, OptSolution};
use crate::problem::{ProblemInstance, SmoothConvexCost};
use crate::theory::{stepsize_bounds, TheoryConstants};
use crate::topology::{metropolis_weights, Graph, MixingMatrix};

pub const CSV_HEADER: &str = "k,mse,consensus_mu,tracking_residual,feasibility";
pub const TRACKING_TOL: f64 = 1e-9;

/// A config with every derived object built.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub instance: ProblemInstance,
    pub graph: Graph,
    pub mixing: MixingMatrix,
    pub schedule: NoiseSchedule,
    pub alpha: f64,
    pub optimum: OptSolution,
    pub theory: TheoryConstants,
    pub privacy: PrivacySection,
}

impl Resolved {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (instance, default_graph) = match (&config.problem.preset, &config.problem.agents) {
            (Some(name), _) => {
                let p = preset(name)?;
                (p.instance, Some(p.graph))
            }
            (None, Some(agents)) => (build_agents(agents)?, None),
            (None, None) => unreachable!("validated"),
        };
        let n = instance.n();
        let graph = match (&config.graph, default_graph) {
            (Some(section), _) => section.build(n)?,
            (None, Some(g)) => g,
            (None, None) => return Err(Error::InvalidConfig("missing graph section".into())),
        };
        let mixing = metropolis_weights(&graph)?;
        let schedule = config.noise_schedule(n)?;
        let moduli = instance.moduli();
        let alpha = match config.algorithm.alpha {
            AlphaSpec::Value(a) => a,
            AlphaSpec::Fraction(f) => {
                let b = stepsize_bounds(&moduli, mixing.lambda_bar(), None);
                if b.empty {
                    return Err(Error::InvalidConfig("no admissible stepsize for this instance".into()));
                }
                f.fraction_of_t2 * b.alpha_max_t2
            }
        };
        let optimum = solve_dual(&instance)?;
        let privacy = config.privacy.clone().unwrap_or_default();
        if privacy.agent >= n {
            return Err(Error::InvalidConfig(format!("privacy agent {} out of range", privacy.agent)));
        }
        let a0 = instance.agent(privacy.agent);
        let theory = TheoryConstants::evaluate(
            &moduli,
            (a0.cost.strong_convexity(), a0.a_norm()),
            mixing.lambda_bar(),
            alpha,
            &schedule,
            privacy.agent,
            privacy.delta,
            (n, instance.dims().1),
        )?;
        Ok(Self {
            config,
            instance,
            graph,
            mixing,
            schedule,
            alpha,
            optimum,
            theory,
            privacy,
        })
    }

    pub fn run_config(&self) -> RunConfig {
        let mut cfg = RunConfig::new(self.alpha, self.config.algorithm.iters)
            .with_record_every(self.config.algorithm.record_every)
            .with_reference(self.optimum.x_star.clone());
        cfg.record_noise = false;
        cfg
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.config.seed.wrapping_add(trial as u64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub trial: usize,
    pub seed: u64,
    pub round: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub lower: f64,
    pub upper: f64,
    pub slack: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub contained: bool,
    /// Largest `tracking_residual / (1 + magnitude)` over all trials and rounds.
    pub tracking_max: f64,
    pub tracking_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub lambda_bar: f64,
    pub trials: usize,
    pub seed: u64,
    pub alpha: f64,
    pub iters: usize,
    pub window: f64,
    pub empirical_mse: f64,
    pub mse_std_error: f64,
    pub trial_mse: Vec<f64>,
    pub final_mse: f64,
    pub x_star: Vec<Vec<f64>>,
    pub mu_star: Vec<f64>,
    pub objective: f64,
    pub theory: TheoryConstants,
    pub verdict: Verdict,
    pub failure: Option<Failure>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: Summary,
    /// Pointwise average over trials.
    pub trace: Vec<RoundMetrics>,
}

impl ExperimentOutcome {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.k, r.mse, r.consensus_mu, r.tracking_residual, r.feasibility
            ));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trace.csv"), self.trace_csv())?;
        fs::write(dir.join("summary.json"), self.summary_json() + "\n")?;
        Ok(())
    }
}

/// Hash of the canonical config JSON; the output directory is excluded.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut canonical = config.clone();
    canonical.output = None;
    hex::encode(Sha256::digest(canonical.to_json().as_bytes()))
}

/// Time-average of `mse` over records with `k ≥ (1 − window)·iters`.
pub fn window_mean(records: &[RoundMetrics], iters: usize, window: f64) -> f64 {
    let start = ((1.0 - window) * iters as f64).floor() as usize;
    let (sum, count) = records
        .iter()
        .filter(|r| r.k >= start)
        .fold((0.0, 0usize), |(s, c), r| (s + r.mse, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn average_traces(traces: &[RunTrace]) -> Vec<RoundMetrics> {
    let len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let scale = 1.0 / traces.len() as f64;
    (0..len)
        .map(|j| {
            let mut acc = RoundMetrics {
                k: traces[0].records[j].k,
                mse: 0.0,
                consensus_mu: 0.0,
                tracking_residual: 0.0,
                feasibility: 0.0,
                magnitude: 0.0,
            };
            for t in traces {
                let r = &t.records[j];
                acc.mse += r.mse * scale;
                acc.consensus_mu += r.consensus_mu * scale;
                acc.tracking_residual += r.tracking_residual * scale;
                acc.feasibility += r.feasibility * scale;
                acc.magnitude += r.magnitude * scale;
            }
            acc
        })
        .collect()
}

pub fn run_resolved(resolved: &Resolved) -> Result<ExperimentOutcome> {
    let cfg = &resolved.config;
    let engine = Engine::new(&resolved.instance, &resolved.mixing)?;
    let run_cfg = resolved.run_config();
    let results: Vec<Result<RunTrace>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| engine.run(&resolved.schedule, &run_cfg, resolved.trial_seed(t)))
        .collect();

    let mut failure = None;
    let mut traces = Vec::with_capacity(cfg.trials);
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok(trace) => {
                if failure.is_none() {
                    if let Some(k) = trace.diverged_at {
                        failure = Some(Failure {
                            trial: t,
                            seed: resolved.trial_seed(t),
                            round: Some(k),
                            message: format!("iterates diverged at round {k}"),
                        });
                    }
                }
                traces.push(trace);
            }
            Err(e) => {
                if failure.is_none() {
                    failure = Some(Failure {
                        trial: t,
                        seed: resolved.trial_seed(t),
                        round: None,
                        message: e.to_string(),
                    });
                }
            }
        }
    }

    let iters = cfg.algorithm.iters;
    let trial_mse: Vec<f64> = traces.iter().map(|t| window_mean(&t.records, iters, cfg.window)).collect();
    let count = trial_mse.len() as f64;
    let empirical_mse = trial_mse.iter().sum::<f64>() / count;
    let mse_std_error = if trial_mse.len() > 1 {
        let var = trial_mse.iter().map(|v| (v - empirical_mse).powi(2)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        0.0
    };
    let tracking_max = traces
        .iter()
        .flat_map(|t| &t.records)
        .map(|r| r.tracking_residual / (1.0 + r.magnitude))
        .fold(0.0, f64::max);

    let th = &resolved.theory;
    let slack = 3.0 / (cfg.trials as f64).sqrt();
    let (lower_ok, upper_ok) = if th.n_zeta == 0.0 {
        (true, empirical_mse <= 1e-12)
    } else {
        (
            empirical_mse >= th.mse_lower * (1.0 - slack),
            empirical_mse <= th.mse_upper * (1.0 + slack),
        )
    };
    let contained = lower_ok && upper_ok;
    let tracking_ok = tracking_max <= TRACKING_TOL;
    let verdict = Verdict {
        lower: th.mse_lower,
        upper: th.mse_upper,
        slack,
        lower_ok,
        upper_ok,
        contained,
        tracking_max,
        tracking_ok,
    };
    let trace = if traces.is_empty() { Vec::new() } else { average_traces(&traces) };
    let final_mse = trace.last().map_or(f64::NAN, |r| r.mse);
    let (n, m, p) = resolved.instance.dims();
    let passed = failure.is_none() && contained && tracking_ok;
    let summary = Summary {
        config_hash: config_hash(cfg),
        n,
        m,
        p,
        lambda_bar: resolved.mixing.lambda_bar(),
        trials: cfg.trials,
        seed: cfg.seed,
        alpha: resolved.alpha,
        iters,
        window: cfg.window,
        empirical_mse,
        mse_std_error,
        trial_mse,
        final_mse,
        x_star: to_rows(&resolved.optimum.x_star),
        mu_star: resolved.optimum.mu_star.iter().copied().collect(),
        objective: resolved.optimum.objective,
        theory: th.clone(),
        verdict,
        failure,
        passed,
    };
    Ok(ExperimentOutcome { summary, trace })
}

/// Runs the experiment and writes `trace.csv` and `summary.json` when the
/// config names an output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let resolved = Resolved::new(config.clone())?;
    let outcome = run_resolved(&resolved)?;
    if let Some(dir) = &config.output {
        outcome.write(dir)?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    DZeta,
    DEta,
    Q,
    Alpha,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "d_zeta" => Ok(Self::DZeta),
            "d_eta" => Ok(Self::DEta),
            "q" => Ok(Self::Q),
            "alpha" => Ok(Self::Alpha),
            other => Err(Error::InvalidArgument(format!(
                "sweep parameter must be one of d_zeta, d_eta, q, alpha (got `{other}`)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::DZeta => "d_zeta",
            Self::DEta => "d_eta",
            Self::Q => "q",
            Self::Alpha => "alpha",
        }
    }

    pub fn apply(self, config: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut c = config.clone();
        match self {
            Self::DZeta => c.noise.d_zeta = value,
            Self::DEta => c.noise.d_eta = value,
            Self::Q => {
                c.noise.q = value;
                c.noise.q_eta = None;
                c.noise.q_zeta = None;
            }
            Self::Alpha => c.algorithm.alpha = AlphaSpec::Value(value),
        }
        c.output = None;
        c
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub empirical_mse: f64,
    pub lower: f64,
    pub upper: f64,
    pub eps_star: f64,
    pub eps_theory: f64,
    pub alpha: f64,
    pub alpha_max_t2: f64,
    pub contained: bool,
    pub passed: bool,
    /// Set when the value was rejected before running.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},empirical_mse,lower,upper,eps_star,eps_theory,alpha_used,alpha_max_t2,contained,passed\n",
            self.param.name()
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.value, r.empirical_mse, r.lower, r.upper, r.eps_star, r.eps_theory, r.alpha, r.alpha_max_t2, r.contained, r.passed
            ));
        }
        out
    }

    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    /// Rows that actually ran, in input order.
    fn ran(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.error.is_none())
    }

    pub fn mse_nondecreasing(&self) -> bool {
        let v: Vec<_> = self.ran().collect();
        v.windows(2).all(|w| w[1].empirical_mse >= w[0].empirical_mse)
    }

    pub fn mse_increasing(&self) -> bool {
        let v: Vec<_> = self.ran().collect();
        v.windows(2).all(|w| w[1].empirical_mse > w[0].empirical_mse)
    }

    pub fn eps_star_decreasing(&self) -> bool {
        let v: Vec<_> = self.ran().collect();
        v.windows(2).all(|w| w[1].eps_star < w[0].eps_star)
    }
}

/// One experiment per value. Values rejected by validation or theory
/// checks are kept as rows with `error` set.
pub fn sweep(config: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<SweepTable> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = param.apply(config, value);
        let row = match Resolved::new(cfg).and_then(|r| run_resolved(&r).map(|o| (r, o))) {
            Ok((r, o)) => SweepRow {
                value,
                empirical_mse: o.summary.empirical_mse,
                lower: r.theory.mse_lower,
                upper: r.theory.mse_upper,
                eps_star: r.theory.eps_star,
                eps_theory: r.theory.eps_theory,
                alpha: r.alpha,
                alpha_max_t2: r.theory.alpha_max_t2,
                contained: o.summary.verdict.contained,
                passed: o.summary.passed,
                error: None,
            },
            Err(e) => SweepRow {
                value,
                empirical_mse: f64::NAN,
                lower: f64::NAN,
                upper: f64::NAN,
                eps_star: f64::NAN,
                eps_theory: f64::NAN,
                alpha: f64::NAN,
                alpha_max_t2: f64::NAN,
                contained: false,
                passed: false,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let table = SweepTable { param, rows };
    if let Some(dir) = &config.output {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("sweep_{}.csv", param.name())), table.to_csv())?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    /// Slope of `ln(residual)` against `k`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    /// First recorded round where the residual fell below the threshold.
    pub converged_at: Option<usize>,
}

/// Least-squares fit of `ln r(k) ≈ b + k·s` over the second half of the
/// rounds that precede `r(k) < threshold`.
pub fn log_linear_fit(series: &[(usize, f64)], threshold: f64) -> Option<RateFit> {
    let cut = series.iter().position(|&(_, r)| r < threshold);
    let pre = &series[..cut.unwrap_or(series.len())];
    let tail: Vec<(f64, f64)> = pre[pre.len() / 2..]
        .iter()
        .filter(|(_, r)| *r > 0.0)
        .map(|&(k, r)| (k as f64, r.ln()))
        .collect();
    if tail.len() < 3 {
        return None;
    }
    let n = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = tail.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: tail.len(),
        converged_at: cut.map(|i| series[i].0),
    })
}

/// Stack of vectors as plain nested lists.
pub fn to_rows(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.iter().copied().collect()).collect()
}
