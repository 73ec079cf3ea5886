//! Per-agent x-update: `argmin_{z ∈ X_i} f_i(z) − cᵀz` with `c = A_iᵀμ_i`.
//!
//! Diagonal Hessians are solved coordinatewise in closed form. Anything else
//! goes through projected gradient with step `1/L`, which contracts at rate
//! `1 − φ/L` by strong convexity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{BoxSet, QuadraticCost, SmoothConvexCost};

pub const MAX_INNER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ArgminResult {
    pub x: DVector<f64>,
    /// Norm of the projected gradient at `x`.
    pub kkt_residual: f64,
}

/// Inner stopping tolerance for a given linear term.
pub fn inner_tol(c: &DVector<f64>) -> f64 {
    1e-11 * c.norm().max(1.0)
}

/// Norm of the box-KKT violation of `∇ = Ux + v − c` at `x`.
pub fn kkt_residual(cost: &QuadraticCost, bounds: &BoxSet, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let grad = cost.hessian() * x + cost.linear() - c;
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let mut acc = 0.0;
    for j in 0..x.len() {
        let g = grad[j];
        let r = if lo[j] == hi[j] {
            0.0
        } else if x[j] <= lo[j] {
            (-g).max(0.0)
        } else if x[j] >= hi[j] {
            g.max(0.0)
        } else {
            g.abs()
        };
        acc += r * r;
    }
    acc.sqrt()
}

pub fn argmin_local(cost: &QuadraticCost, bounds: &BoxSet, c: &DVector<f64>) -> Result<ArgminResult> {
    let p = cost.dim();
    if bounds.dim() != p || c.len() != p {
        return Err(Error::InvalidArgument(format!(
            "argmin dimensions disagree: cost {p}, box {}, linear term {}",
            bounds.dim(),
            c.len()
        )));
    }
    if bounds.is_empty() {
        return Err(Error::InvalidArgument("argmin over an empty box".into()));
    }

    let u = cost.hessian();
    let v = cost.linear();
    if cost.is_diagonal() {
        let x = DVector::from_fn(p, |j, _| {
            let z = (c[j] - v[j]) / u[(j, j)];
            z.max(bounds.lower()[j]).min(bounds.upper()[j])
        });
        let kkt_residual = kkt_residual(cost, bounds, c, &x);
        return Ok(ArgminResult { x, kkt_residual });
    }

    let tol = inner_tol(c);
    let step = 1.0 / cost.lipschitz();
    let rhs = c - v;
    let start = u
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(p));
    let mut x = bounds.project(&start);
    let mut residual = kkt_residual(cost, bounds, c, &x);
    let mut iterations = 0;
    while residual > tol {
        if iterations == MAX_INNER {
            return Err(Error::SolverFailure { iterations, residual });
        }
        let grad = u * &x - &rhs;
        x = bounds.project(&(&x - grad * step));
        residual = kkt_residual(cost, bounds, c, &x);
        iterations += 1;
    }
    Ok(ArgminResult { x, kkt_residual: residual })
}

/// Checks `‖x(μ1) − x(μ2)‖ ≤ ‖Aᵀ(μ1 − μ2)‖ / φ`, the `1/φ`-smoothness of the
/// conjugate restricted to the box.
pub fn conjugate_smoothness_check(
    cost: &QuadraticCost,
    bounds: &BoxSet,
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    coupling: &DMatrix<f64>,
) -> Result<bool> {
    let c1 = coupling.transpose() * mu1;
    let c2 = coupling.transpose() * mu2;
    let x1 = argmin_local(cost, bounds, &c1)?.x;
    let x2 = argmin_local(cost, bounds, &c2)?.x;
    let lhs = (&x1 - &x2).norm();
    let phi = cost.strong_convexity();
    let rhs = (&c1 - &c2).norm() / phi;
    let slack = 2.0 * (inner_tol(&c1) + inner_tol(&c2)) / phi + 1e-12 * (1.0 + x1.norm());
    Ok(lhs <= rhs + slack)
}
