//! Closed-form constants: contraction factor, admissible stepsizes,
//! mean-square accuracy bounds and the privacy level.
//!
//! All functions are pure. Stepsize bounds that depend on `α` through `C(α)`
//! are found by scanning `(0, α₁)` for the first inadmissible point and
//! bisecting the bracket down to `1e-12` relative width.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::NoiseSchedule;
use crate::problem::Moduli;

const BISECTION_TOL: f64 = 1e-12;
const SCAN_POINTS: usize = 2000;

/// `C = {1 + (‖A‖²α²/φ² − 2α/L)·λ_min(AᵀA)}^{1/2}`.
pub fn contraction_c(alpha: f64, phi_under: f64, l_bar: f64, a_norm: f64, lam_aa_min: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(phi_under > 0.0) || !(l_bar > 0.0) || !(a_norm > 0.0) || !(lam_aa_min > 0.0) {
        return Err(Error::Domain(format!(
            "contraction factor needs positive inputs (alpha {alpha}, phi {phi_under}, L {l_bar}, |A| {a_norm}, lam {lam_aa_min})"
        )));
    }
    let radicand = 1.0 + (a_norm * a_norm * alpha * alpha / (phi_under * phi_under) - 2.0 * alpha / l_bar) * lam_aa_min;
    if radicand < 0.0 {
        return Err(Error::Domain(format!("contraction radicand {radicand} is negative at alpha = {alpha}")));
    }
    Ok(radicand.sqrt())
}

fn c_of(alpha: f64, m: &Moduli) -> Result<f64> {
    contraction_c(alpha, m.phi_under, m.l_bar, m.a_norm, m.lam_aa_min)
}

/// Closed-form first stepsize clause `φ²/(2‖A‖²L)`.
pub fn alpha_max_first_clause(m: &Moduli) -> f64 {
    m.phi_under * m.phi_under / (2.0 * m.a_norm * m.a_norm * m.l_bar)
}

/// Right-hand side of the accuracy stepsize condition,
/// `φ[−(1−C) + √((1−C)² + 2(1−C)(1−λ̄)²)] / (2‖A‖)`.
pub fn accuracy_rhs(alpha: f64, m: &Moduli, lambda_bar: f64) -> Result<f64> {
    let s = 1.0 - c_of(alpha, m)?;
    let b = (1.0 - lambda_bar).powi(2);
    Ok(m.phi_under * (-s + (s * s + 2.0 * s * b).sqrt()) / (2.0 * m.a_norm))
}

/// Rate clause `((r−C)φ/(α‖A‖))·((r−λ̄)²φ/(2α‖A‖) − 1) > 1` together with
/// `r > max(C, λ̄)`.
pub fn rate_clause_holds(alpha: f64, r: f64, m: &Moduli, lambda_bar: f64) -> bool {
    let Ok(c) = c_of(alpha, m) else { return false };
    if r <= c || r <= lambda_bar {
        return false;
    }
    let t = m.phi_under / (alpha * m.a_norm);
    (r - c) * t * ((r - lambda_bar).powi(2) * t / 2.0 - 1.0) > 1.0
}

/// Supremum of `{α ∈ (0, upper) : pred(α)}`, assuming the admissible set is
/// an interval starting at 0. Returns `(sup, is_interval)`.
fn admissible_sup(upper: f64, pred: impl Fn(f64) -> bool) -> (f64, bool) {
    if !(upper > 0.0) {
        return (0.0, true);
    }
    let mut low = 0.0;
    let mut high = None;
    for j in 1..=SCAN_POINTS {
        let a = upper * j as f64 / SCAN_POINTS as f64;
        let a = if j == SCAN_POINTS { upper * (1.0 - 1e-15) } else { a };
        if pred(a) {
            low = a;
        } else {
            high = Some(a);
            break;
        }
    }
    let Some(mut high) = high else { return (upper, true) };
    if low == 0.0 {
        // Look for admissible values below the first scan point.
        let mut a = high;
        loop {
            a *= 0.5;
            if a < upper * 1e-30 {
                return (0.0, true);
            }
            if pred(a) {
                low = a;
                break;
            }
            high = a;
        }
    }
    while high - low > BISECTION_TOL * high {
        let mid = 0.5 * (low + high);
        if pred(mid) {
            low = mid;
        } else {
            high = mid;
        }
    }
    let scan_start = ((high / upper) * SCAN_POINTS as f64).ceil() as usize + 1;
    let interval = (scan_start..SCAN_POINTS).all(|j| !pred(upper * j as f64 / SCAN_POINTS as f64));
    (low, interval)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepsizeBounds {
    /// `φ²/(2‖A‖²L)`.
    pub alpha_max_t1: f64,
    /// Largest `α < alpha_max_t1` that also satisfies the rate clause at `r`.
    pub alpha_max_rate: f64,
    /// Largest `α < alpha_max_t1` satisfying the accuracy condition.
    pub alpha_max_t2: f64,
    pub rate: f64,
    /// True when one of the admissible sets is empty.
    pub empty: bool,
    /// True when the admissible sets were verified to be intervals.
    pub interval: bool,
}

/// Stepsize limits. `r` defaults to 1, where the rate clause coincides with
/// the accuracy condition.
pub fn stepsize_bounds(m: &Moduli, lambda_bar: f64, r: Option<f64>) -> StepsizeBounds {
    let t1 = alpha_max_first_clause(m);
    let rate = r.unwrap_or(1.0);
    if !t1.is_finite() || t1 <= 0.0 {
        return StepsizeBounds {
            alpha_max_t1: 0.0,
            alpha_max_rate: 0.0,
            alpha_max_t2: 0.0,
            rate,
            empty: true,
            interval: true,
        };
    }
    let (rate_sup, rate_iv) = admissible_sup(t1, |a| rate_clause_holds(a, rate, m, lambda_bar));
    let (t2_sup, t2_iv) = admissible_sup(t1, |a| accuracy_rhs(a, m, lambda_bar).is_ok_and(|rhs| a < rhs));
    StepsizeBounds {
        alpha_max_t1: t1,
        alpha_max_rate: rate_sup,
        alpha_max_t2: t2_sup,
        rate,
        empty: rate_sup == 0.0 || t2_sup == 0.0,
        interval: rate_iv && t2_iv,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseBounds {
    pub lower: f64,
    pub upper: f64,
    pub n_zeta: f64,
}

/// `N_ζ = Σ_i 2m d_ζi²/(1 − q_ζi²)` and the two-sided bound on
/// `E‖x∞ − x*‖²`.
pub fn mse_bounds(schedule: &NoiseSchedule, moduli: &Moduli, n: usize, m: usize) -> Result<MseBounds> {
    let mut n_zeta = 0.0;
    if !schedule.zero_noise() {
        for a in schedule.agents() {
            if a.d_zeta == 0.0 {
                continue;
            }
            if !(a.q_zeta > 0.0 && a.q_zeta < 1.0) {
                return Err(Error::DivergentNoise(a.q_zeta));
            }
            n_zeta += 2.0 * m as f64 * a.d_zeta * a.d_zeta / (1.0 - a.q_zeta * a.q_zeta);
        }
    }
    let nf = n as f64;
    let lower = n_zeta / (nf * nf * moduli.a_norm * moduli.a_norm);
    let upper = moduli.l_bar * moduli.l_bar * n_zeta
        / (nf * moduli.phi_under * moduli.phi_under * moduli.lam_aa_min * moduli.lam_aa_min);
    Ok(MseBounds { lower, upper, n_zeta })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QInterval {
    pub q_min: f64,
    pub tau1: f64,
    pub tau2: f64,
}

/// Roots of `φx² − α‖A‖²x − α‖A‖² = 0`; the larger one is the lower end of
/// the admissible decay interval `(q_min, 1)`.
pub fn q_interval(alpha: f64, phi: f64, a_norm: f64) -> Result<QInterval> {
    if !(alpha > 0.0 && phi > 0.0 && a_norm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "decay interval needs positive alpha, phi, |A| (got {alpha}, {phi}, {a_norm})"
        )));
    }
    let a2 = a_norm * a_norm;
    let disc = (alpha * alpha * a2 * a2 + 4.0 * phi * alpha * a2).sqrt();
    let tau1 = (alpha * a2 + disc) / (2.0 * phi);
    let tau2 = (alpha * a2 - disc) / (2.0 * phi);
    if tau1 >= 1.0 {
        return Err(Error::Domain(format!(
            "no admissible decay: q_min = {tau1} >= 1 at alpha = {alpha}"
        )));
    }
    debug_assert!(tau2 > -1.0 && tau2 < 0.0 && tau1 > -tau2);
    Ok(QInterval { q_min: tau1, tau2, tau1 })
}

/// Which denominator to use in the privacy level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Denominator {
    /// `φq² − α‖A‖²q − α‖A‖²`, the polynomial the geometric sum produces.
    NormSquared,
    /// `φq² − αq − α`, without the coupling norm.
    Unscaled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub alpha: f64,
    pub d_zeta: f64,
    pub d_eta: f64,
    pub phi: f64,
    pub a_norm: f64,
    pub q: f64,
    pub delta: f64,
}

fn privacy_denominator(p: &PrivacyParams, form: Denominator) -> Result<f64> {
    let interval = q_interval(p.alpha, p.phi, p.a_norm)?;
    if !(p.q > interval.q_min && p.q < 1.0) {
        return Err(Error::InadmissibleDecay { q: p.q, q_min: interval.q_min });
    }
    let scale = match form {
        Denominator::NormSquared => p.a_norm * p.a_norm,
        Denominator::Unscaled => 1.0,
    };
    let denom = p.phi * p.q * p.q - p.alpha * scale * p.q - p.alpha * scale;
    if denom <= 0.0 {
        return Err(Error::Domain(format!("privacy denominator {denom} is not positive")));
    }
    Ok(denom)
}

/// `ε = (1/(α d_ζ) + 1/d_η) · αφδ‖A‖ / denominator`.
pub fn privacy_epsilon(p: &PrivacyParams, form: Denominator) -> Result<f64> {
    if p.delta < 0.0 {
        return Err(Error::InvalidArgument("adjacency bound must be >= 0".into()));
    }
    let denom = privacy_denominator(p, form)?;
    if p.d_zeta <= 0.0 || p.d_eta <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((1.0 / (p.alpha * p.d_zeta) + 1.0 / p.d_eta) * p.alpha * p.phi * p.delta * p.a_norm / denom)
}

/// The `d_η → ∞` limit `φδ‖A‖ / (d_ζ · denominator)`.
pub fn epsilon_star(p: &PrivacyParams, form: Denominator) -> Result<f64> {
    let denom = privacy_denominator(p, form)?;
    if p.d_zeta <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(p.phi * p.delta * p.a_norm / (p.d_zeta * denom))
}

/// Geometric envelope `αδ‖A‖ (τ₁^{k−1} − τ₂^{k−1}) / (τ₁ − τ₂)` on `‖Δη(k)‖`;
/// zero for `k ≤ 1`.
pub fn eta_envelope(k: usize, alpha: f64, delta: f64, a_norm: f64, tau1: f64, tau2: f64) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    let e = (k - 1) as i32;
    alpha * delta * a_norm * (tau1.powi(e) - tau2.powi(e)) / (tau1 - tau2)
}

/// Everything the `bounds` listing reports for one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryConstants {
    pub alpha: f64,
    pub lambda_bar: f64,
    pub phi_under: f64,
    pub l_bar: f64,
    pub a_norm: f64,
    pub lam_aa_min: f64,
    pub c: f64,
    pub r_lb: f64,
    pub alpha_max_t1: f64,
    pub alpha_max_rate: f64,
    pub alpha_max_t2: f64,
    pub alpha_admissible: bool,
    pub n_zeta: f64,
    pub mse_lower: f64,
    pub mse_upper: f64,
    pub q_min: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub eps_theory: f64,
    pub eps_theory_unscaled: f64,
    pub eps_star: f64,
    pub eps_star_unscaled: f64,
}

impl TheoryConstants {
    /// Privacy entries are reported for `privacy_agent`, adjacency bound
    /// `delta`. Values that are undefined for this configuration are NaN.
    pub fn evaluate(
        moduli: &Moduli,
        agent_moduli: (f64, f64),
        lambda_bar: f64,
        alpha: f64,
        schedule: &NoiseSchedule,
        privacy_agent: usize,
        delta: f64,
        dims: (usize, usize),
    ) -> Result<Self> {
        let c = c_of(alpha, moduli).unwrap_or(f64::NAN);
        let steps = stepsize_bounds(moduli, lambda_bar, None);
        let decay = if schedule.is_silent() { 0.0 } else { schedule.max_decay() };
        let r_lb = decay.max(c).max(lambda_bar);
        let mse = mse_bounds(schedule, moduli, dims.0, dims.1)?;
        let (phi_i, a_i) = agent_moduli;
        let qi = q_interval(alpha, phi_i, a_i).ok();
        let noise = schedule.agent(privacy_agent);
        let params = PrivacyParams {
            alpha,
            d_zeta: noise.d_zeta,
            d_eta: noise.d_eta,
            phi: phi_i,
            a_norm: a_i,
            q: noise.q_zeta,
            delta,
        };
        let nan = |r: Result<f64>| r.unwrap_or(f64::NAN);
        Ok(Self {
            alpha,
            lambda_bar,
            phi_under: moduli.phi_under,
            l_bar: moduli.l_bar,
            a_norm: moduli.a_norm,
            lam_aa_min: moduli.lam_aa_min,
            c,
            r_lb,
            alpha_max_t1: steps.alpha_max_t1,
            alpha_max_rate: steps.alpha_max_rate,
            alpha_max_t2: steps.alpha_max_t2,
            alpha_admissible: alpha < steps.alpha_max_t2,
            n_zeta: mse.n_zeta,
            mse_lower: mse.lower,
            mse_upper: mse.upper,
            q_min: qi.map_or(f64::NAN, |q| q.q_min),
            tau1: qi.map_or(f64::NAN, |q| q.tau1),
            tau2: qi.map_or(f64::NAN, |q| q.tau2),
            eps_theory: nan(privacy_epsilon(&params, Denominator::NormSquared)),
            eps_theory_unscaled: nan(privacy_epsilon(&params, Denominator::Unscaled)),
            eps_star: nan(epsilon_star(&params, Denominator::NormSquared)),
            eps_star_unscaled: nan(epsilon_star(&params, Denominator::Unscaled)),
        })
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alpha", self.alpha.to_string()),
            ("lambda_bar", self.lambda_bar.to_string()),
            ("phi_under", self.phi_under.to_string()),
            ("L_bar", self.l_bar.to_string()),
            ("A_norm", self.a_norm.to_string()),
            ("lamAA_min", self.lam_aa_min.to_string()),
            ("C", self.c.to_string()),
            ("r_lb", self.r_lb.to_string()),
            ("alpha_max_t1", self.alpha_max_t1.to_string()),
            ("alpha_max_rate", self.alpha_max_rate.to_string()),
            ("alpha_max_t2", self.alpha_max_t2.to_string()),
            ("alpha_admissible", self.alpha_admissible.to_string()),
            ("N_zeta", self.n_zeta.to_string()),
            ("mse_lower", self.mse_lower.to_string()),
            ("mse_upper", self.mse_upper.to_string()),
            ("q_min", self.q_min.to_string()),
            ("tau1", self.tau1.to_string()),
            ("tau2", self.tau2.to_string()),
            ("eps_theory", self.eps_theory.to_string()),
            ("eps_theory_unscaled", self.eps_theory_unscaled.to_string()),
            ("eps_star", self.eps_star.to_string()),
            ("eps_star_unscaled", self.eps_star_unscaled.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(phi: f64) -> Moduli {
        Moduli { phi_under: phi, l_bar: phi, a_norm: 1.0, lam_aa_min: 1.0 }
    }

    fn params(alpha: f64, d_zeta: f64, d_eta: f64, delta: f64) -> PrivacyParams {
        PrivacyParams { alpha, d_zeta, d_eta, phi: 1.0, a_norm: 1.0, q: 0.98, delta }
    }

    #[test]
    fn c_substitution() {
        assert!((contraction_c(0.5, 2.0, 2.0, 1.0, 1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((contraction_c(1e-12, 2.0, 2.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-11);
        assert!(contraction_c(0.0, 2.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn c_below_one_at_first_clause_boundary() {
        for (phi, l, a, lam) in [(2.0, 2.0, 1.0, 1.0), (0.1, 0.3, 1.2, 0.64), (1.0, 10.0, 3.0, 0.5)] {
            let m = Moduli { phi_under: phi, l_bar: l, a_norm: a, lam_aa_min: lam };
            let c = contraction_c(alpha_max_first_clause(&m), phi, l, a, lam).unwrap();
            assert!(c < 1.0 && c > 0.0);
        }
    }

    #[test]
    fn negative_radicand_is_domain_error() {
        // With L far below φ the linear term dominates.
        assert!(matches!(contraction_c(1.0, 10.0, 0.1, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn first_clause_substitution() {
        let b = stepsize_bounds(&unit(2.0), 0.0, None);
        assert_eq!(b.alpha_max_t1, 1.0);
    }

    #[test]
    fn accuracy_bound_is_a_fixed_point() {
        let m = unit(2.0);
        let b = stepsize_bounds(&m, 0.0, None);
        // For this instance C(½) = ¾ and rhs(½) = ½ exactly.
        assert!((b.alpha_max_t2 - 0.5).abs() < 1e-10);
        let rhs = accuracy_rhs(b.alpha_max_t2, &m, 0.0).unwrap();
        assert!((rhs - b.alpha_max_t2).abs() <= 1e-10);
        assert!(b.interval && !b.empty);
        // The rate clause at r = 1 is the same condition.
        assert!((b.alpha_max_rate - b.alpha_max_t2).abs() < 1e-10);
    }

    #[test]
    fn accuracy_bound_with_slow_mixing() {
        let m = Moduli { phi_under: 0.1, l_bar: 0.2, a_norm: 1.2, lam_aa_min: 0.64 };
        for lam in [0.3, 0.7, 0.95] {
            let b = stepsize_bounds(&m, lam, None);
            let rhs = accuracy_rhs(b.alpha_max_t2, &m, lam).unwrap();
            assert!((rhs - b.alpha_max_t2).abs() <= 1e-10 * b.alpha_max_t2.max(1e-300) + 1e-15);
            assert!(b.alpha_max_t2 < b.alpha_max_t1);
        }
        let slow = stepsize_bounds(&m, 0.95, None).alpha_max_t2;
        let fast = stepsize_bounds(&m, 0.3, None).alpha_max_t2;
        assert!(slow < fast);
    }

    #[test]
    fn degenerate_curvature() {
        let b = stepsize_bounds(&Moduli { phi_under: 1e-200, l_bar: 1.0, a_norm: 1.0, lam_aa_min: 1.0 }, 0.0, None);
        assert!(b.alpha_max_t1 < 1e-300);
        assert!(b.alpha_max_t2 <= b.alpha_max_t1);
    }

    #[test]
    fn n_zeta_arithmetic() {
        let s = NoiseSchedule::uniform(2, 1.0, 1.0, 0.98).unwrap();
        let b = mse_bounds(&s, &unit(2.0), 2, 1).unwrap();
        assert!((b.n_zeta - 4.0 / 0.0396).abs() < 1e-9);
        assert!(b.lower <= b.upper);
        let quiet = mse_bounds(&NoiseSchedule::uniform(2, 1.0, 0.0, 0.98).unwrap(), &unit(2.0), 2, 1).unwrap();
        assert_eq!((quiet.n_zeta, quiet.lower, quiet.upper), (0.0, 0.0, 0.0));
    }

    #[test]
    fn epsilon_substitution() {
        let p = params(0.01, 1.0, 1.0, 1.0);
        let eps = privacy_epsilon(&p, Denominator::NormSquared).unwrap();
        assert!((eps - 1.01 / 0.9406).abs() < 1e-12);
        assert!((eps - 1.0738).abs() < 1e-4);
        assert_eq!(eps, privacy_epsilon(&p, Denominator::Unscaled).unwrap());
        let star = epsilon_star(&p, Denominator::NormSquared).unwrap();
        assert!((star - 1.0 / 0.9406).abs() < 1e-12);
        assert!((star - 1.0632).abs() < 1e-4);
        assert_eq!(privacy_epsilon(&params(0.01, 1.0, 1.0, 0.0), Denominator::NormSquared).unwrap(), 0.0);
    }

    #[test]
    fn epsilon_limit() {
        let p = PrivacyParams { d_eta: 1e12, ..params(0.01, 1.0, 1.0, 1.0) };
        let eps = privacy_epsilon(&p, Denominator::NormSquared).unwrap();
        let star = epsilon_star(&p, Denominator::NormSquared).unwrap();
        assert!((eps - star).abs() <= 1e-9 * star);
        let inf = PrivacyParams { d_eta: f64::INFINITY, ..p };
        assert_eq!(privacy_epsilon(&inf, Denominator::NormSquared).unwrap(), star);
    }

    #[test]
    fn epsilon_rejects_small_decay() {
        let p = PrivacyParams { q: 0.05, ..params(0.01, 1.0, 1.0, 1.0) };
        assert!(matches!(
            privacy_epsilon(&p, Denominator::NormSquared),
            Err(Error::InadmissibleDecay { .. })
        ));
    }

    #[test]
    fn epsilon_monotonicity() {
        let base = params(0.01, 1.0, 1.0, 1.0);
        let eps = |p: PrivacyParams| privacy_epsilon(&p, Denominator::NormSquared).unwrap();
        for k in 1..20 {
            let t = 0.2 * k as f64;
            let h = 1.05;
            assert!(eps(PrivacyParams { d_zeta: t * h, ..base }) < eps(PrivacyParams { d_zeta: t, ..base }));
            assert!(eps(PrivacyParams { d_eta: t * h, ..base }) < eps(PrivacyParams { d_eta: t, ..base }));
            assert!(eps(PrivacyParams { delta: t * h, ..base }) > eps(PrivacyParams { delta: t, ..base }));
            let a = 0.001 * k as f64;
            assert!(eps(PrivacyParams { alpha: a * h, ..base }) > eps(PrivacyParams { alpha: a, ..base }));
        }
    }

    #[test]
    fn decay_interval() {
        let qi = q_interval(0.01, 1.0, 1.0).unwrap();
        assert!((qi.q_min - (0.01 + (0.0001f64 + 0.04).sqrt()) / 2.0).abs() < 1e-15);
        assert!((qi.q_min - 0.10512).abs() < 1e-5);
        assert!(qi.tau1 > qi.tau2 && qi.tau2 > -1.0);
        assert!(q_interval(1e-14, 1.0, 1.0).unwrap().q_min < 1e-6);
        assert!(matches!(q_interval(1.0, 1.0, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn envelope_start() {
        let qi = q_interval(0.01, 1.0, 1.0).unwrap();
        assert_eq!(eta_envelope(1, 0.01, 1.0, 1.0, qi.tau1, qi.tau2), 0.0);
        assert!((eta_envelope(2, 0.01, 1.0, 1.0, qi.tau1, qi.tau2) - 0.01).abs() < 1e-15);
        // Second-order recursion e(k) = c (e(k−1) + e(k−2)) with c = α‖A‖²/φ.
        let e = |k| eta_envelope(k, 0.01, 1.0, 1.0, qi.tau1, qi.tau2);
        for k in 3..12 {
            assert!((e(k) - 0.01 * (e(k - 1) + e(k - 2))).abs() <= 1e-15 * e(k - 1).max(1e-300));
        }
    }
}
