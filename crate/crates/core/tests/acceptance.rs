//! Exit-gate checks. Each criterion prints one PASS/FAIL line; the binary
//! exits nonzero if any fails.

use std::time::{Duration, Instant};

use dmac_core::engine::{Engine, RunConfig};
use dmac_core::harness::experiment::{log_linear_fit, run_resolved, sweep, Resolved, SweepParam};
use dmac_core::harness::ExperimentConfig;
use dmac_core::local_solver::{argmin_local, conjugate_smoothness_check, inner_tol};
use dmac_core::noise::{sample_laplace, NoiseSchedule};
use dmac_core::oracle::verify_against_grid;
use dmac_core::privacy_audit::{eta_bound_check, forced_difference_run, sweep_epsilon, AdjacentPair, DEFAULT_HORIZON};
use dmac_core::theory::{epsilon_star, privacy_epsilon, q_interval, Denominator, PrivacyParams};
use dmac_core::{metropolis_weights, ring_plus_random, BoxSet, QuadraticCost};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(text).expect("acceptance config parses")
}

fn noise_free(preset: &str, iters: usize, record_every: usize) -> Resolved {
    Resolved::new(config(&format!(
        r#"{{"problem": {{"preset": "{preset}"}},
            "algorithm": {{"alpha": {{"fraction_of_t2": 0.9}}, "iters": {iters}, "record_every": {record_every}}},
            "noise": {{"zero_noise": true}}}}"#
    )))
    .expect("preset resolves")
}

fn dispatch(d_zeta: f64, trials: usize) -> ExperimentConfig {
    config(&format!(
        r#"{{"problem": {{"preset": "dispatch14"}},
            "algorithm": {{"alpha": {{"fraction_of_t2": 0.9}}, "iters": 5000, "record_every": 10}},
            "noise": {{"d_eta": 1.0, "d_zeta": {d_zeta}, "q": 0.98}},
            "trials": {trials}, "seed": 1}}"#
    ))
}

fn criterion_1() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let expected = [("sym2", [1.0, 1.0]), ("kkt2", [2.0, 1.0])];
    for (name, hand) in expected {
        let r = noise_free(name, 20_000, 1);
        let started = Instant::now();
        let engine = Engine::new(&r.instance, &r.mixing).unwrap();
        let trace = engine.run(&r.schedule, &r.run_config(), 0).unwrap();
        let elapsed = started.elapsed();
        let x = &trace.final_state.x;
        let num: f64 = x.iter().zip(&r.optimum.x_star).map(|(a, b)| (a - b).norm_squared()).sum();
        let den: f64 = r.optimum.x_star.iter().map(|v| v.norm_squared()).sum();
        let rel = (num / den).sqrt();
        let hand_ok = r.optimum.x_star.iter().zip(hand).all(|(v, h)| (v[0] - h).abs() <= 1e-8);
        let grid_ok = verify_against_grid(&r.instance, &r.optimum).unwrap();
        let this = rel <= 1e-8 && elapsed < Duration::from_secs(1) && hand_ok && grid_ok;
        ok &= this;
        parts.push(format!("{name}: rel err {rel:.2e} in {:.0} ms", elapsed.as_secs_f64() * 1e3));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_2() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, iters) in [("sym2", 20_000), ("kkt2", 20_000), ("dispatch14", 20_000)] {
        let r = noise_free(name, iters, 1);
        let engine = Engine::new(&r.instance, &r.mixing).unwrap();
        let trace = engine.run(&r.schedule, &r.run_config(), 0).unwrap();
        let scale: f64 = r.optimum.x_star.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        let series: Vec<_> = trace.records.iter().map(|m| (m.k, m.mse.sqrt() / scale)).collect();
        match log_linear_fit(&series, 1e-8) {
            Some(fit) => {
                let this = fit.slope < 0.0 && fit.r_squared >= 0.99 && fit.converged_at.is_some();
                ok &= this;
                parts.push(format!("{name}: slope {:.3e}, R² {:.4}", fit.slope, fit.r_squared));
            }
            None => {
                ok = false;
                parts.push(format!("{name}: too few rounds to fit"));
            }
        }
    }
    outcome(ok, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let runs = [
        ("sym2", r#""noise": {"zero_noise": true}"#),
        ("sym2", r#""noise": {"d_eta": 1.0, "d_zeta": 1.0, "q": 0.98}"#),
        ("kkt2", r#""noise": {"d_eta": 2.0, "d_zeta": 2.0, "q": 0.95}"#),
        ("dispatch14", r#""noise": {"zero_noise": true}"#),
        ("dispatch14", r#""noise": {"d_eta": 1.0, "d_zeta": 1.0, "q": 0.98}"#),
    ];
    for (name, noise) in runs {
        let r = Resolved::new(config(&format!(
            r#"{{"problem": {{"preset": "{name}"}},
                "algorithm": {{"alpha": {{"fraction_of_t2": 0.9}}, "iters": 3000}}, {noise}, "trials": 4, "seed": 9}}"#
        )))
        .unwrap();
        let out = run_resolved(&r).unwrap();
        worst = worst.max(out.summary.verdict.tracking_max);
    }
    outcome(worst <= 1e-9, format!("max normalized residual {worst:.2e} over {} runs", runs.len() * 4))
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let r = Resolved::new(dispatch(1.0, 100)).unwrap();
    let out = run_resolved(&r).unwrap();
    let elapsed = started.elapsed();
    let s = &out.summary;
    let ok = s.failure.is_none() && s.verdict.contained && elapsed < Duration::from_secs(300);
    outcome(
        ok,
        format!(
            "E[mse] {:.3} (se {:.3}) in [{:.3}, {:.3}] with slack {:.2}, {:.1} s",
            s.empirical_mse,
            s.mse_std_error,
            s.verdict.lower,
            s.verdict.upper,
            s.verdict.slack,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let grid: Vec<(f64, f64)> = [0.5, 1.0, 2.0]
        .iter()
        .flat_map(|&d| [0.95, 0.98, 0.99].map(|q| (d, q)))
        .collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["sym2", "dispatch14"] {
        let r = Resolved::new(config(&format!(
            r#"{{"problem": {{"preset": "{name}"}}, "algorithm": {{"alpha": {{"fraction_of_t2": 0.9}}, "iters": 100}},
                "noise": {{"d_eta": 1.0, "d_zeta": 1.0, "q": 0.98}}}}"#
        )))
        .unwrap();
        let pair = AdjacentPair::with_default_shift(r.instance.clone(), 0, 1.0).unwrap();
        let cfg = RunConfig::new(r.alpha, 1);
        let table = sweep_epsilon(&pair, &r.mixing, &grid, &r.schedule, &cfg, 5, DEFAULT_HORIZON).unwrap();
        let mut envelope_ok = true;
        for &(d_zeta, q) in &grid {
            let schedule = NoiseSchedule::uniform(r.instance.n(), 1.0, d_zeta, q).unwrap();
            let rep = forced_difference_run(&pair, &r.mixing, &schedule, &cfg, 5, DEFAULT_HORIZON).unwrap();
            envelope_ok &= eta_bound_check(&rep, rep.alpha, rep.delta, rep.a_norm, rep.tau1, rep.tau2);
        }
        let certified = table.rows.iter().all(|row| row.admissible && row.eps_empirical <= row.eps_theory);
        let worst = table
            .rows
            .iter()
            .map(|row| row.eps_empirical / row.eps_theory)
            .fold(0.0, f64::max);
        let this = certified && envelope_ok && table.violations() == 0;
        ok &= this;
        parts.push(format!(
            "{name}: {} points, max eps_e/eps {worst:.3}, violations {}",
            table.rows.len(),
            table.violations()
        ));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let values = [0.5, 1.0, 2.0, 4.0];
    let table = sweep(&dispatch(1.0, 100), SweepParam::DZeta, &values).unwrap();
    let ran = table.rows.iter().all(|r| r.error.is_none());
    let mse: Vec<String> = table.rows.iter().map(|r| format!("{:.2}", r.empirical_mse)).collect();
    let eps: Vec<String> = table.rows.iter().map(|r| format!("{:.3}", r.eps_star)).collect();
    outcome(
        ran && table.mse_nondecreasing() && table.eps_star_decreasing(),
        format!("mse [{}], eps* [{}]", mse.join(", "), eps.join(", ")),
    )
}

fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> QuadraticCost {
    let b = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.5..1.5));
    let u = b.transpose() * &b + DMatrix::identity(p, p) * rng.random_range(0.1..1.0);
    let v = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
    QuadraticCost::new(u, v, 0.0).unwrap()
}

fn random_box(rng: &mut ChaCha8Rng, p: usize) -> BoxSet {
    let lo = DVector::from_fn(p, |_, _| rng.random_range(-3.0..0.0));
    let hi = DVector::from_fn(p, |_, _| rng.random_range(0.0..3.0));
    BoxSet::new(lo, hi).unwrap()
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut stochastic = true;
    for t in 0..50 {
        let n = rng.random_range(2..20);
        let chords = if n > 3 { n * (n - 3) / 2 } else { 0 };
        let extra = rng.random_range(0..=chords);
        let w = metropolis_weights(&ring_plus_random(n, extra, t).unwrap()).unwrap();
        let m = w.matrix();
        for i in 0..n {
            stochastic &= (m.row(i).sum() - 1.0).abs() < 1e-12 && (m.column(i).sum() - 1.0).abs() < 1e-12;
        }
        stochastic &= w.lambda_bar() < 1.0 - 1e-9;
    }
    if !stochastic {
        failures.push("doubly stochastic");
    }

    let draws = 1_000_000;
    let (mut abs, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let x = sample_laplace(1.0, &mut rng).unwrap();
        abs += x.abs();
        sq += x * x;
    }
    let (abs, sq) = (abs / draws as f64, sq / draws as f64);
    if (abs - 1.0).abs() > 0.01 || (sq - 2.0).abs() > 0.1 {
        failures.push("laplace moments");
    }

    let mut kkt_ok = true;
    let mut conj_ok = true;
    for _ in 0..100 {
        let p = rng.random_range(1..4);
        let f = random_spd(&mut rng, p);
        let bx = random_box(&mut rng, p);
        let c = DVector::from_fn(p, |_, _| rng.random_range(-8.0..8.0));
        let r = argmin_local(&f, &bx, &c).unwrap();
        kkt_ok &= r.kkt_residual <= inner_tol(&c) && bx.contains(&r.x, 0.0);

        let m = rng.random_range(1..=p);
        let a = DMatrix::from_fn(m, p, |_, _| rng.random_range(-1.5..1.5));
        let mu1 = DVector::from_fn(m, |_, _| rng.random_range(-5.0..5.0));
        let mu2 = DVector::from_fn(m, |_, _| rng.random_range(-5.0..5.0));
        conj_ok &= conjugate_smoothness_check(&f, &bx, &mu1, &mu2, &a).unwrap();
    }
    if !kkt_ok {
        failures.push("local KKT");
    }
    if !conj_ok {
        failures.push("conjugate smoothness");
    }

    for name in ["sym2", "kkt2"] {
        let r = noise_free(name, 10, 1);
        if !verify_against_grid(&r.instance, &r.optimum).unwrap() {
            failures.push("oracle grid");
        }
    }

    let cfg = dispatch(1.0, 6);
    let render = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let r = Resolved::new(cfg.clone()).unwrap();
            let out = run_resolved(&r).unwrap();
            (out.trace_csv(), out.summary_json())
        })
    };
    let reference = render(1);
    if [2, 4, 8].iter().any(|&t| render(t) != reference) {
        failures.push("thread-count determinism");
    }

    let detail = if failures.is_empty() {
        format!("E|x| {abs:.4}, E[x²] {sq:.4}, 100 solver and conjugate cases, reruns identical at 1/2/4/8 threads")
    } else {
        format!("failed: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 100 {
        let alpha = rng.random_range(1e-3..0.1);
        let phi = rng.random_range(0.2..3.0);
        let a_norm = rng.random_range(0.3..2.0);
        let Ok(qi) = q_interval(alpha, phi, a_norm) else { continue };
        let q = rng.random_range(qi.q_min..1.0);
        if q <= qi.q_min {
            continue;
        }
        let p = PrivacyParams {
            alpha,
            d_zeta: rng.random_range(0.1..5.0),
            d_eta: 1e12,
            phi,
            a_norm,
            q,
            delta: rng.random_range(0.1..3.0),
        };
        let eps = privacy_epsilon(&p, Denominator::NormSquared).unwrap();
        let star = epsilon_star(&p, Denominator::NormSquared).unwrap();
        worst = worst.max((eps - star).abs() / star);
        tested += 1;
    }
    outcome(worst <= 1e-9, format!("max relative gap {worst:.2e} over {tested} tuples"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("noise-free exactness", criterion_1),
        ("linear rate", criterion_2),
        ("tracking identity", criterion_3),
        ("MSE bound containment", criterion_4),
        ("privacy certificate", criterion_5),
        ("trade-off monotonicity", criterion_6),
        ("property suites", criterion_7),
        ("eps* limit identity", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = check();
        let tag = if result.passed { "PASS" } else { "FAIL" };
        println!("criterion {} [{tag}] {name}: {}", i + 1, result.detail);
        if !result.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
