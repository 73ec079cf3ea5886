use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dmac_core::harness::experiment::{run_resolved, sweep, Resolved, SweepParam};
use dmac_core::harness::ExperimentConfig;
use dmac_core::nalgebra::DVector;
use dmac_core::oracle::verify_against_grid;
use dmac_core::privacy_audit::{sweep_epsilon, AdjacentPair, DEFAULT_HORIZON};
use dmac_core::RunConfig;

#[derive(Parser)]
#[command(name = "dmac", version, about = "Masked mismatch-tracking simulator and analysis tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write trace.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One experiment per value of a noise or stepsize parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// d_zeta, d_eta, q or alpha.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forced-difference privacy audit; prints a CSV table.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        agent: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        /// Comma-separated shift; defaults to delta/2 in the first coordinate.
        #[arg(long = "delta-prime")]
        delta_prime: Option<String>,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: usize,
        /// Grid points `d_zeta:q` separated by commas; defaults to the config noise.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print every theory constant as key=value lines.
    Bounds {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the centralized problem.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad number `{s}`")))
        .collect()
}

fn parse_grid(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|point| {
            let (d, q) = point
                .split_once(':')
                .with_context(|| format!("grid point `{point}` must look like d_zeta:q"))?;
            Ok((d.trim().parse()?, q.trim().parse()?))
        })
        .collect()
}

fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<bool> {
    let mut cfg = load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.output = out;
    }
    let resolved = Resolved::new(cfg)?;
    let outcome = run_resolved(&resolved)?;
    if let Some(dir) = &resolved.config.output {
        outcome.write(dir)?;
    }
    let s = &outcome.summary;
    println!("alpha={}", s.alpha);
    println!("empirical_mse={}", s.empirical_mse);
    println!("mse_lower={}", s.verdict.lower);
    println!("mse_upper={}", s.verdict.upper);
    println!("contained={}", s.verdict.contained);
    println!("tracking_max={}", s.verdict.tracking_max);
    if let Some(f) = &s.failure {
        eprintln!("trial {} (seed {}) failed: {}", f.trial, f.seed, f.message);
    }
    println!("passed={}", s.passed);
    Ok(s.passed)
}

fn run_sweep(config: PathBuf, param: &str, values: &str, out: Option<PathBuf>) -> Result<bool> {
    let mut cfg = load(&config)?;
    if out.is_some() {
        cfg.output = out;
    }
    let table = sweep(&cfg, SweepParam::parse(param)?, &parse_list(values)?)?;
    print!("{}", table.to_csv());
    for row in table.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("{} = {}: {}", param, row.value, row.error.as_deref().unwrap_or(""));
    }
    Ok(table.all_passed())
}

#[allow(clippy::too_many_arguments)]
fn audit(
    config: PathBuf,
    agent: Option<usize>,
    delta: Option<f64>,
    delta_prime: Option<String>,
    horizon: usize,
    grid: Option<String>,
    seed: Option<u64>,
) -> Result<bool> {
    let mut cfg = load(&config)?;
    let mut privacy = cfg.privacy.clone().unwrap_or_default();
    if let Some(a) = agent {
        privacy.agent = a;
    }
    if let Some(d) = delta {
        privacy.delta = d;
    }
    if let Some(dp) = delta_prime {
        privacy.delta_prime = Some(parse_list(&dp)?);
    }
    cfg.privacy = Some(privacy.clone());
    let resolved = Resolved::new(cfg)?;
    let pair = match &privacy.delta_prime {
        Some(v) => AdjacentPair::new(resolved.instance.clone(), privacy.agent, DVector::from_vec(v.clone()), privacy.delta)?,
        None => AdjacentPair::with_default_shift(resolved.instance.clone(), privacy.agent, privacy.delta)?,
    };
    let points = match grid {
        Some(g) => parse_grid(&g)?,
        None => {
            let a = resolved.schedule.agent(privacy.agent);
            vec![(a.d_zeta, a.q_zeta)]
        }
    };
    if resolved.schedule.zero_noise() {
        bail!("the audit needs noise; the config sets zero_noise");
    }
    let run_cfg = RunConfig::new(resolved.alpha, 1);
    let table = sweep_epsilon(
        &pair,
        &resolved.mixing,
        &points,
        &resolved.schedule,
        &run_cfg,
        seed.unwrap_or(resolved.config.seed),
        horizon,
    )?;
    let csv = table.to_csv();
    print!("{csv}");
    if let Some(dir) = &resolved.config.output {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("audit.csv"), &csv)?;
    }
    Ok(table.violations() == 0)
}

fn bounds(config: PathBuf) -> Result<bool> {
    let resolved = Resolved::new(load(&config)?)?;
    for (k, v) in resolved.theory.to_pairs() {
        println!("{k}={v}");
    }
    Ok(true)
}

fn oracle(config: PathBuf) -> Result<bool> {
    let resolved = Resolved::new(load(&config)?)?;
    let sol = &resolved.optimum;
    let rows: Vec<Vec<f64>> = sol.x_star.iter().map(|v| v.iter().copied().collect()).collect();
    println!("x_star={}", serde_json::to_string(&rows)?);
    println!("mu_star={}", serde_json::to_string(&sol.mu_star.iter().collect::<Vec<_>>())?);
    println!("objective={}", sol.objective);
    println!("iterations={}", sol.iterations);
    match verify_against_grid(&resolved.instance, sol) {
        Ok(ok) => {
            println!("grid_check={ok}");
            Ok(ok)
        }
        Err(_) => {
            println!("grid_check=skipped");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => run(config, seed, out),
        Command::Sweep { config, param, values, out } => run_sweep(config, &param, &values, out),
        Command::Audit { config, agent, delta, delta_prime, horizon, grid, seed } => {
            audit(config, agent, delta, delta_prime, horizon, grid, seed)
        }
        Command::Bounds { config } => bounds(config),
        Command::Oracle { config } => oracle(config),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
