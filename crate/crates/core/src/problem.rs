//! Constraint-coupled resource allocation instances.
//!
//! Each agent `i` owns a private strongly convex cost `f_i`, a coupling
//! matrix `A_i` and a demand `d_i`; the network must reach
//! `Σ A_i x_i = Σ d_i` with every `x_i` inside its local box.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::local_solver::ArgminResult;

const SYMMETRY_TOL: f64 = 1e-12;
const MIN_CURVATURE: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;

/// Interface the engine and oracle need from a private cost.
pub trait SmoothConvexCost {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    /// Strong convexity modulus φ.
    fn strong_convexity(&self) -> f64;
    /// Gradient Lipschitz constant L.
    fn lipschitz(&self) -> f64;
    /// Minimiser of `f(z) − cᵀz` over the box.
    fn argmin_linear(&self, bounds: &BoxSet, c: &DVector<f64>) -> Result<ArgminResult>;
}

/// `f(x) = ½ xᵀUx + vᵀx + w` with `U` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    u: DMatrix<f64>,
    v: DVector<f64>,
    w: f64,
    phi: f64,
    lipschitz: f64,
    diagonal: bool,
}

impl QuadraticCost {
    pub fn new(u: DMatrix<f64>, v: DVector<f64>, w: f64) -> Result<Self> {
        let p = u.nrows();
        if !u.is_square() || p == 0 {
            return Err(Error::InvalidArgument("cost Hessian must be square and nonempty".into()));
        }
        if v.len() != p {
            return Err(Error::InvalidArgument(format!(
                "linear term has length {} but Hessian is {p}x{p}",
                v.len()
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) || !w.is_finite() {
            return Err(Error::InvalidArgument("cost coefficients must be finite".into()));
        }
        let scale = u.amax().max(1.0);
        for i in 0..p {
            for j in (i + 1)..p {
                if (u[(i, j)] - u[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "cost Hessian is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eig = u.clone().symmetric_eigen().eigenvalues;
        let phi = eig.min();
        let lipschitz = eig.max();
        if phi < MIN_CURVATURE {
            return Err(Error::InvalidArgument(format!(
                "cost is not strongly convex (smallest Hessian eigenvalue {phi:e})"
            )));
        }
        let off_diagonal: f64 = (0..p)
            .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|ij| u[ij].abs())
            .sum();
        Ok(Self {
            u,
            v,
            w,
            phi,
            lipschitz,
            diagonal: off_diagonal <= 1e-14,
        })
    }

    /// `u x² + v x + w`, i.e. `U = 2u`.
    pub fn scalar(u: f64, v: f64, w: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, 2.0 * u),
            DVector::from_element(1, v),
            w,
        )
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn constant(&self) -> f64 {
        self.w
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// The cost `z ↦ f(z − shift)`.
    pub fn translated(&self, shift: &DVector<f64>) -> Result<Self> {
        self.check_dim(shift)?;
        let u_shift = &self.u * shift;
        let v = &self.v - &u_shift;
        let w = self.w + 0.5 * shift.dot(&u_shift) - self.v.dot(shift);
        Self::new(self.u.clone(), v, w)
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.u.nrows() {
            return Err(Error::InvalidArgument(format!(
                "expected a {}-vector, got length {}",
                self.u.nrows(),
                x.len()
            )));
        }
        Ok(())
    }
}

impl SmoothConvexCost for QuadraticCost {
    fn dim(&self) -> usize {
        self.u.nrows()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(0.5 * x.dot(&(&self.u * x)) + self.v.dot(x) + self.w)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(&self.u * x + &self.v)
    }

    fn strong_convexity(&self) -> f64 {
        self.phi
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn argmin_linear(&self, bounds: &BoxSet, c: &DVector<f64>) -> Result<ArgminResult> {
        crate::local_solver::argmin_local(self, bounds, c)
    }
}

/// Componentwise bounds; infinite entries are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidArgument("box bounds differ in length".into()));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("box bounds contain NaN".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(p: usize) -> Self {
        Self {
            lower: DVector::from_element(p, f64::NEG_INFINITY),
            upper: DVector::from_element(p, f64::INFINITY),
        }
    }

    pub fn scalar(lower: f64, upper: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, lower), DVector::from_element(1, upper))
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(self.upper.iter()).any(|(l, u)| l > u)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (l, u))| v.max(*l).min(*u)),
        )
    }

    pub fn translated(&self, shift: &DVector<f64>) -> Self {
        Self {
            lower: &self.lower + shift,
            upper: &self.upper + shift,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub cost: QuadraticCost,
    pub coupling: DMatrix<f64>,
    pub demand: DVector<f64>,
    pub bounds: BoxSet,
    a_norm: f64,
    lam_aa_min: f64,
}

impl AgentSpec {
    pub fn new(
        cost: QuadraticCost,
        coupling: DMatrix<f64>,
        demand: DVector<f64>,
        bounds: BoxSet,
    ) -> Result<Self> {
        let p = cost.dim();
        let m = coupling.nrows();
        if coupling.ncols() != p {
            return Err(Error::InvalidArgument(format!(
                "coupling matrix has {} columns but the decision vector has {p} entries",
                coupling.ncols()
            )));
        }
        if demand.len() != m {
            return Err(Error::InvalidArgument(format!(
                "demand has length {} but coupling has {m} rows",
                demand.len()
            )));
        }
        if bounds.dim() != p {
            return Err(Error::InvalidArgument("box dimension does not match the cost".into()));
        }
        if bounds.is_empty() {
            return Err(Error::InvalidArgument("local box is empty".into()));
        }
        if m == 0 || p < m {
            return Err(Error::InvalidArgument(format!(
                "coupling matrix {m}x{p} cannot have full row rank"
            )));
        }
        let sv = coupling.clone().svd(false, false).singular_values;
        let sigma_max = sv.max();
        let sigma_min = sv.min();
        if sigma_max <= 0.0 || sigma_min <= RANK_TOL * sigma_max {
            return Err(Error::InvalidArgument("coupling matrix is rank deficient".into()));
        }
        // AᵀA is p×p with rank m, so it is only invertible when p = m.
        let lam_aa_min = if p > m { 0.0 } else { sigma_min * sigma_min };
        if lam_aa_min <= (RANK_TOL * sigma_max).powi(2) {
            return Err(Error::InvalidArgument(format!(
                "AᵀA is singular for a {m}x{p} coupling matrix"
            )));
        }
        Ok(Self {
            cost,
            coupling,
            demand,
            bounds,
            a_norm: sigma_max,
            lam_aa_min,
        })
    }

    /// Scalar agent `u x² + v x + w` with coupling `a x`, demand `d`, box
    /// `[lo, hi]`.
    pub fn scalar(u: f64, v: f64, w: f64, a: f64, d: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            QuadraticCost::scalar(u, v, w)?,
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, d),
            BoxSet::scalar(lo, hi)?,
        )
    }

    pub fn a_norm(&self) -> f64 {
        self.a_norm
    }

    pub fn lam_aa_min(&self) -> f64 {
        self.lam_aa_min
    }

    /// Local minimiser of `f_i(z) − μᵀA_i z` over the box.
    pub fn response(&self, mu: &DVector<f64>) -> Result<ArgminResult> {
        let c = self.coupling.transpose() * mu;
        self.cost.argmin_linear(&self.bounds, &c)
    }
}

/// Strong convexity, smoothness and coupling constants of an instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moduli {
    pub phi_under: f64,
    pub l_bar: f64,
    pub a_norm: f64,
    pub lam_aa_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    agents: Vec<AgentSpec>,
    m: usize,
    p: usize,
}

impl ProblemInstance {
    pub fn new(agents: Vec<AgentSpec>) -> Result<Self> {
        let first = agents
            .first()
            .ok_or_else(|| Error::InvalidConfig("instance has no agents".into()))?;
        let m = first.coupling.nrows();
        let p = first.cost.dim();
        for (i, a) in agents.iter().enumerate() {
            if a.coupling.nrows() != m || a.cost.dim() != p {
                return Err(Error::InvalidConfig(format!(
                    "agent {i} has dimensions ({}, {}) but agent 0 has ({m}, {p})",
                    a.coupling.nrows(),
                    a.cost.dim()
                )));
            }
        }
        Ok(Self { agents, m, p })
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentSpec {
        &self.agents[i]
    }

    /// `(n, m, p)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.agents.len(), self.m, self.p)
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn moduli(&self) -> Moduli {
        let mut out = Moduli {
            phi_under: f64::INFINITY,
            l_bar: 0.0,
            a_norm: 0.0,
            lam_aa_min: f64::INFINITY,
        };
        for a in &self.agents {
            out.phi_under = out.phi_under.min(a.cost.strong_convexity());
            out.l_bar = out.l_bar.max(a.cost.lipschitz());
            out.a_norm = out.a_norm.max(a.a_norm);
            out.lam_aa_min = out.lam_aa_min.min(a.lam_aa_min);
        }
        out
    }

    pub fn total_demand(&self) -> DVector<f64> {
        self.agents
            .iter()
            .fold(DVector::zeros(self.m), |acc, a| acc + &a.demand)
    }

    /// `Σ_i (A_i x_i − d_i)`.
    pub fn mismatch(&self, x: &[DVector<f64>]) -> DVector<f64> {
        self.agents
            .iter()
            .zip(x)
            .fold(DVector::zeros(self.m), |acc, (a, xi)| {
                acc + &a.coupling * xi - &a.demand
            })
    }

    pub fn objective(&self, x: &[DVector<f64>]) -> Result<f64> {
        self.agents
            .iter()
            .zip(x)
            .map(|(a, xi)| a.cost.value(xi))
            .sum()
    }

    /// Copy of the instance where agent `i0` has cost `f(x − δ′)` and box
    /// translated by `+δ′`.
    pub fn shift_adjacent(&self, i0: usize, delta_prime: &DVector<f64>) -> Result<Self> {
        let agent = self.agents.get(i0).ok_or_else(|| {
            Error::InvalidArgument(format!("agent index {i0} out of range 0..{}", self.n()))
        })?;
        let cost = agent.cost.translated(delta_prime)?;
        let bounds = agent.bounds.translated(delta_prime);
        let mut agents = self.agents.clone();
        agents[i0] = AgentSpec::new(cost, agent.coupling.clone(), agent.demand.clone(), bounds)?;
        Self::new(agents)
    }
}
