//! Centralized ground truth by dual gradient ascent.
//!
//! The dual `g(μ) = Σ_i min_{z∈X_i}{f_i(z) − μᵀA_i z} + μᵀΣd_i` is concave
//! with gradient `Σd_i − ΣA_i x_i(μ)`, Lipschitz with constant
//! `Σ_i ‖A_i‖²/φ_i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{ProblemInstance, SmoothConvexCost};

pub const DUAL_TOL: f64 = 1e-10;
pub const MAX_OUTER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OptSolution {
    pub x_star: Vec<DVector<f64>>,
    pub mu_star: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Coordinatewise range of `Σ A_i x_i` over the boxes.
pub fn coupling_range(instance: &ProblemInstance) -> (DVector<f64>, DVector<f64>) {
    let (_, m, _) = instance.dims();
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    for a in instance.agents() {
        for r in 0..m {
            for j in 0..a.cost.dim() {
                let coef = a.coupling[(r, j)];
                if coef == 0.0 {
                    continue;
                }
                let (l, u) = (a.bounds.lower()[j], a.bounds.upper()[j]);
                let (min_t, max_t) = if coef > 0.0 { (coef * l, coef * u) } else { (coef * u, coef * l) };
                lo[r] += min_t;
                hi[r] += max_t;
            }
        }
    }
    (lo, hi)
}

pub fn check_feasible(instance: &ProblemInstance) -> Result<()> {
    let demand = instance.total_demand();
    let (lo, hi) = coupling_range(instance);
    for r in 0..demand.len() {
        let tol = 1e-12 * (1.0 + demand[r].abs());
        if demand[r] < lo[r] - tol || demand[r] > hi[r] + tol {
            return Err(Error::Infeasible(format!(
                "coupling row {r}: demand {} outside attainable range [{}, {}]",
                demand[r], lo[r], hi[r]
            )));
        }
    }
    Ok(())
}

/// Local responses `x_i(μ)`.
pub fn responses(instance: &ProblemInstance, mu: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    instance
        .agents()
        .iter()
        .map(|a| a.response(mu).map(|r| r.x))
        .collect()
}

pub fn dual_value(instance: &ProblemInstance, mu: &DVector<f64>) -> Result<f64> {
    let x = responses(instance, mu)?;
    let mut acc = mu.dot(&instance.total_demand());
    for (a, xi) in instance.agents().iter().zip(&x) {
        acc += a.cost.value(xi)? - mu.dot(&(&a.coupling * xi));
    }
    Ok(acc)
}

pub fn solve_dual(instance: &ProblemInstance) -> Result<OptSolution> {
    check_feasible(instance)?;
    let (_, m, _) = instance.dims();
    let lipschitz: f64 = instance
        .agents()
        .iter()
        .map(|a| a.a_norm().powi(2) / a.cost.strong_convexity())
        .sum();
    let step = 1.0 / lipschitz;

    let mut mu = DVector::zeros(m);
    let mut x = responses(instance, &mu)?;
    let mut grad = -instance.mismatch(&x);
    let mut iterations = 0;
    while grad.norm() > DUAL_TOL {
        if iterations == MAX_OUTER {
            return Err(Error::NoConvergence {
                iterations,
                gap: grad.norm(),
            });
        }
        mu += &grad * step;
        x = responses(instance, &mu)?;
        grad = -instance.mismatch(&x);
        iterations += 1;
    }
    let objective = instance.objective(&x)?;
    Ok(OptSolution {
        x_star: x,
        mu_star: mu,
        objective,
        iterations,
    })
}

/// Independent brute-force check for tiny instances (`n·p ≤ 4`): the coupling
/// is eliminated through the first `m` coordinates of the last agent and the
/// remaining coordinates are searched on a grid down to spacing `1e-3`.
pub fn verify_against_grid(instance: &ProblemInstance, sol: &OptSolution) -> Result<bool> {
    let (n, m, p) = instance.dims();
    if n * p > 4 {
        return Err(Error::Unsupported(format!("grid verification needs n·p <= 4, got {}", n * p)));
    }
    let last = instance.agent(n - 1);
    let pivot: DMatrix<f64> = last.coupling.columns(0, m).into_owned();
    let pivot_inv = pivot
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Unsupported("leading coupling block of the last agent is singular".into()))?;

    if sol.x_star.len() != n || sol.x_star.iter().any(|x| x.len() != p) {
        return Ok(false);
    }
    let feasible = instance.mismatch(&sol.x_star).norm() <= 1e-6
        && instance
            .agents()
            .iter()
            .zip(&sol.x_star)
            .all(|(a, x)| a.bounds.contains(x, 1e-9));
    if !feasible {
        return Ok(false);
    }

    // Free coordinates: every agent but the last in full, then the last
    // agent's trailing p − m entries.
    let free: Vec<(usize, usize)> = (0..n - 1)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .chain((m..p).map(|j| (n - 1, j)))
        .collect();
    let demand = instance.total_demand();

    let assemble = |values: &[f64]| -> Option<Vec<DVector<f64>>> {
        let mut x = vec![DVector::zeros(p); n];
        for (&(i, j), &v) in free.iter().zip(values) {
            x[i][j] = v;
        }
        let mut rhs = demand.clone();
        for (i, xi) in x.iter().enumerate().take(n - 1) {
            rhs -= &instance.agent(i).coupling * xi;
        }
        if p > m {
            rhs -= last.coupling.columns(m, p - m) * x[n - 1].rows(m, p - m);
        }
        let pinned = &pivot_inv * rhs;
        for j in 0..m {
            x[n - 1][j] = pinned[j];
        }
        last.bounds.contains(&x[n - 1], 1e-12).then_some(x)
    };
    let objective = |x: &[DVector<f64>]| instance.objective(x).unwrap_or(f64::INFINITY);

    let mut lo = Vec::with_capacity(free.len());
    let mut hi = Vec::with_capacity(free.len());
    for &(i, j) in &free {
        let s = sol.x_star[i][j];
        let window = 10.0 * (1.0 + s.abs());
        let b = &instance.agent(i).bounds;
        lo.push(b.lower()[j].max(s - window));
        hi.push(b.upper()[j].min(s + window));
    }

    let resolution = 1e-3;
    let mut best = f64::INFINITY;
    if free.is_empty() {
        if let Some(x) = assemble(&[]) {
            best = objective(&x);
        }
    } else if free.len() == 1 {
        let count = ((hi[0] - lo[0]) / resolution).ceil() as usize;
        for k in 0..=count {
            let v = (lo[0] + k as f64 * resolution).min(hi[0]);
            if let Some(x) = assemble(&[v]) {
                best = best.min(objective(&x));
            }
        }
    } else {
        // Coarse-to-fine: each level searches 41 points per axis and then
        // zooms in around the incumbent.
        let per_axis = 40usize;
        let mut center: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let mut half: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (h - l)).collect();
        loop {
            let spacing = half.iter().fold(0.0f64, |a, &h| a.max(2.0 * h / per_axis as f64));
            let total = (per_axis + 1).pow(free.len() as u32);
            let mut incumbent = center.clone();
            for idx in 0..total {
                let mut rem = idx;
                let point: Vec<f64> = (0..free.len())
                    .map(|d| {
                        let t = rem % (per_axis + 1);
                        rem /= per_axis + 1;
                        let v = center[d] - half[d] + 2.0 * half[d] * t as f64 / per_axis as f64;
                        v.max(lo[d]).min(hi[d])
                    })
                    .collect();
                if let Some(x) = assemble(&point) {
                    let val = objective(&x);
                    if val < best {
                        best = val;
                        incumbent = point;
                    }
                }
            }
            if spacing <= resolution {
                break;
            }
            center = incumbent;
            half.iter_mut().for_each(|h| *h = (*h * 0.25).max(resolution));
        }
    }
    let claimed = objective(&sol.x_star);
    Ok(claimed <= best + 1e-4)
}
