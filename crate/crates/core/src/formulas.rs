//! Closed-form tail asymptotics, bounds and Laplace-transform asymptotics, plus
//! the classical reflection series for Brownian motion used as an exact oracle.
//!
//! Every evaluator works in log space; `value` underflows to 0 long before
//! `log_value` loses meaning.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::process::{factorial, ProcessSpec};
use crate::spectrum::ZolotarevConstants;

/// Prefactor·r^{-1} above this level marks an asymptotic as outside its regime.
pub const REGIME_PREFACTOR_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticValue {
    pub value: f64,
    pub log_value: f64,
    pub regime_warning: bool,
}

impl AsymptoticValue {
    fn from_log(log_value: f64, regime_warning: bool) -> Self {
        Self {
            value: log_value.exp(),
            log_value,
            regime_warning,
        }
    }
}

/// Φ̄(x) = P{N(0,1) > x}.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Φ(x) = P{N(0,1) ≤ x}.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// ln Φ̄(x), finite for all finite x.
pub fn log_normal_sf(x: f64) -> f64 {
    if x < 30.0 {
        return normal_sf(x).ln();
    }
    // Asymptotic series of the Mills ratio.
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2) + 105.0 / (x2 * x2 * x2 * x2);
    -0.5 * x2 - (x * (2.0 * PI).sqrt()).ln() + series.ln()
}

fn check_r(r: f64) -> Result<()> {
    if !(r > 0.0) || !r.is_finite() {
        return domain(format!("threshold r = {r} must be positive"));
    }
    Ok(())
}

/// Sharp asymptotic of P{sup_{[0,1]} |X_m| > r}.
///
/// m = 0: (4/√(2π)) r^{-1} e^{-r²/2};
/// m ≥ 1: 2/(m!√(2π(2m+1))) r^{-1} exp(-(m!)²(2m+1) r²/2).
pub fn asymptotic_tail_sup(spec: &ProcessSpec, r: f64) -> Result<AsymptoticValue> {
    check_r(r)?;
    let (log_pref, rate) = if spec.m() == 0 {
        ((4.0 / (2.0 * PI).sqrt()).ln(), 1.0)
    } else {
        let k = spec.two_m_plus_one() as f64;
        (
            (2.0 / (factorial(spec.m()) * (2.0 * PI * k).sqrt())).ln(),
            spec.m_fact_sq() * k,
        )
    };
    let log_front = log_pref - r.ln();
    Ok(AsymptoticValue::from_log(
        log_front - 0.5 * rate * r * r,
        log_front.exp() > REGIME_PREFACTOR_LIMIT,
    ))
}

/// Sharp asymptotic of P{‖X_m‖_{L²} > r}: c(λ) r^{-1} exp(-r²/(2λ_1)).
pub fn asymptotic_tail_l2(lambda1: f64, zc: &ZolotarevConstants, r: f64) -> Result<AsymptoticValue> {
    check_r(r)?;
    if !(lambda1 > 0.0) {
        return domain("λ_1 must be positive");
    }
    let log_front = zc.c_lambda.ln() - r.ln();
    Ok(AsymptoticValue::from_log(
        log_front - r * r / (2.0 * lambda1),
        log_front.exp() > REGIME_PREFACTOR_LIMIT,
    ))
}

/// Scale constant of the Brownian L^p tail and its Γ ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaP {
    pub p: f64,
    pub sigma: f64,
    /// Γ(1/2 + 1/p) / Γ(1 + 1/p)
    pub gamma_ratio: f64,
}

/// σ_p = (2/(pπ))^{1/2} (1 + p/2)^{(p-2)/(2p)} Γ(1/2+1/p)/Γ(1+1/p).
pub fn sigma_p(p: f64) -> Result<SigmaP> {
    if !(p > 0.0) || !p.is_finite() {
        return domain(format!("p = {p} must be positive and finite"));
    }
    let gamma_ratio = (libm::lgamma(0.5 + 1.0 / p) - libm::lgamma(1.0 + 1.0 / p)).exp();
    let sigma = (2.0 / (p * PI)).sqrt() * (1.0 + 0.5 * p).powf((p - 2.0) / (2.0 * p)) * gamma_ratio;
    Ok(SigmaP { p, sigma, gamma_ratio })
}

/// Sharp asymptotic of P{‖W‖_{L^p} > r}:
/// 2σ π^{-3/4} (Γ(1/2+1/p)/Γ(1+1/p))^{1/2} r^{-1} exp(-r²/(2σ²)).
pub fn asymptotic_tail_lp_bm(p: f64, r: f64) -> Result<AsymptoticValue> {
    check_r(r)?;
    let s = sigma_p(p)?;
    let log_front = (2.0 * s.sigma).ln() - 0.75 * PI.ln() + 0.5 * s.gamma_ratio.ln() - r.ln();
    Ok(AsymptoticValue::from_log(
        log_front - r * r / (2.0 * s.sigma * s.sigma),
        log_front.exp() > REGIME_PREFACTOR_LIMIT,
    ))
}

/// P{sup_{[0,1]} |W| > r} by the reflection principle,
/// 4 Σ_{k≥0} (-1)^k Φ̄((2k+1) r), summed until the terms drop below 1e-16.
pub fn reflection_tail_bm(r: f64) -> Result<f64> {
    check_r(r)?;
    let mut acc = 0.0;
    let mut k = 0u32;
    loop {
        let term = normal_sf((2 * k + 1) as f64 * r);
        let signed = if k.is_multiple_of(2) { term } else { -term };
        acc += signed;
        if term < 1e-16 {
            break;
        }
        k += 1;
    }
    Ok((4.0 * acc).clamp(0.0, 1.0))
}

/// P{sup_{[0,1]} |W| ≤ ε}, accurate in both regimes: the theta-function series
/// (4/π) Σ_{k≥0} (-1)^k/(2k+1) exp(-(2k+1)²π²/(8ε²)) for ε < 1, and one minus the
/// reflection tail otherwise.
pub fn reflection_small_ball_bm(eps: f64) -> Result<f64> {
    check_r(eps)?;
    if eps >= 1.0 {
        return Ok(1.0 - reflection_tail_bm(eps)?);
    }
    let c = PI * PI / (8.0 * eps * eps);
    let mut acc = 0.0;
    for k in 0..200u32 {
        let j = (2 * k + 1) as f64;
        let term = (-j * j * c).exp() / j;
        acc += if k.is_multiple_of(2) { term } else { -term };
        if term < 1e-18 * acc.abs() {
            break;
        }
    }
    Ok(4.0 / PI * acc)
}

/// Borell's inequality 2 exp(-(r - E‖Y‖)²/(2σ_T²)).
pub fn borell_bound(r: f64, mean_norm: f64, sigma_sq: f64) -> Result<f64> {
    if !(sigma_sq > 0.0) {
        return domain("σ_T² must be positive");
    }
    if !(r > mean_norm) {
        return domain(format!("r = {r} must exceed the mean norm {mean_norm}"));
    }
    let d = r - mean_norm;
    Ok(2.0 * (-d * d / (2.0 * sigma_sq)).exp())
}

/// ln of c1·exp(-r²/(2‖A_m‖_p) + c2·r^{2/(2m+3)}).
pub fn log_thm2_bound(spec: &ProcessSpec, r: f64, c1: f64, c2: f64, op_norm: f64) -> Result<f64> {
    check_r(r)?;
    if !(c1 > 0.0) || !(c2 > 0.0) || !(op_norm > 0.0) {
        return domain("c1, c2 and the operator norm must be positive");
    }
    let gamma = 2.0 / (2 * spec.m() + 3) as f64;
    Ok(c1.ln() - r * r / (2.0 * op_norm) + c2 * r.powf(gamma))
}

/// Entropy-driven upper bound on P{‖X_m‖_{L^p} > r}; `p` only selects which
/// operator norm the caller supplies.
pub fn thm2_bound(spec: &ProcessSpec, p: f64, r: f64, c1: f64, c2: f64, op_norm: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return domain(format!("p = {p} must be at least 1"));
    }
    Ok(log_thm2_bound(spec, r, c1, c2, op_norm)?.exp())
}

/// ln of c1·exp(-λ²/(2σ²) + c2 λ^{α/(α+1)} (ln λ)^{β/(α+1)}).
pub fn log_thm3_bound(lambda: f64, alpha: f64, beta: f64, sigma: f64, c1: f64, c2: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(sigma > 0.0) || !(lambda > 0.0) {
        return domain("λ, α and σ must be positive");
    }
    if beta != 0.0 && !(lambda > 1.0) {
        return domain(format!("λ = {lambda} must exceed 1 when β ≠ 0"));
    }
    if !(c1 > 0.0) {
        return domain("c1 must be positive");
    }
    let log_factor = if beta == 0.0 {
        1.0
    } else {
        lambda.ln().powf(beta / (alpha + 1.0))
    };
    Ok(c1.ln() - lambda * lambda / (2.0 * sigma * sigma) + c2 * lambda.powf(alpha / (alpha + 1.0)) * log_factor)
}

/// Small-ball to large-ball bound for a Gaussian vector whose small-ball exponent
/// is (α, β).
pub fn thm3_bound(lambda: f64, alpha: f64, beta: f64, sigma: f64, c1: f64, c2: f64) -> Result<f64> {
    Ok(log_thm3_bound(lambda, alpha, beta, sigma, c1, c2)?.exp())
}

/// Radius beyond which the r^{2/(2m+3)} correction of the entropy bound is
/// smaller than Borell's linear correction r·E‖X‖/σ² - E‖X‖²/(2σ²).
pub fn correction_crossover(spec: &ProcessSpec, mean_norm: f64, sigma_sq: f64, c2: f64) -> Result<f64> {
    if !(mean_norm > 0.0) || !(sigma_sq > 0.0) || !(c2 > 0.0) {
        return domain("mean norm, σ² and c2 must be positive");
    }
    let gamma = 2.0 / (2 * spec.m() + 3) as f64;
    let diff = |r: f64| r * mean_norm / sigma_sq - mean_norm * mean_norm / (2.0 * sigma_sq) - c2 * r.powf(gamma);
    let mut lo = mean_norm;
    let mut hi = mean_norm.max(1.0);
    while diff(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return domain("no crossover below 1e12");
        }
    }
    if diff(lo) > 0.0 {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if diff(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which Laplace-transform asymptotic to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaplaceTarget {
    /// E exp(r (sup X_m)^θ).
    Sup,
    /// E exp(r ‖X_m‖_{L²}^θ).
    L2 { lambda1: f64, c_lambda: f64 },
    /// Upper bound for E exp(r ‖X_m‖_{L^p}^θ).
    Lp { op_norm: f64, c1: f64, c2: f64 },
}

fn check_theta(theta: f64) -> Result<()> {
    if !(1.0..2.0).contains(&theta) {
        return domain(format!("θ = {theta} must lie in [1, 2)"));
    }
    Ok(())
}

/// c3(m,p,θ) = (2-θ)/(2θ) θ^{2/(2-θ)} ‖A_m‖_p^{θ/(2-θ)}.
pub fn laplace_c3(theta: f64, op_norm: f64) -> Result<f64> {
    check_theta(theta)?;
    let e = 2.0 - theta;
    Ok(e / (2.0 * theta) * theta.powf(2.0 / e) * op_norm.powf(theta / e))
}

/// ln of the Laplace-transform asymptotic (or upper bound for L^p).
pub fn laplace_asymptotic(spec: &ProcessSpec, target: LaplaceTarget, theta: f64, r: f64) -> Result<f64> {
    check_theta(theta)?;
    if !(r > 0.0) {
        return domain(format!("r = {r} must be positive"));
    }
    let e = 2.0 - theta;
    let growth = (r * theta).powf(2.0 / e);
    let lead = e / (2.0 * theta);
    match target {
        LaplaceTarget::Sup => {
            let k = spec.m_fact_sq() * spec.two_m_plus_one() as f64;
            Ok(-0.5 * e.ln() + lead * k.powf(theta / (theta - 2.0)) * growth)
        }
        LaplaceTarget::L2 { lambda1, c_lambda } => {
            if !(lambda1 > 0.0) || !(c_lambda > 0.0) {
                return domain("λ_1 and c(λ) must be positive");
            }
            Ok(c_lambda.ln() + 0.5 * (2.0 * PI / (e * lambda1)).ln() + lead * lambda1.powf(theta / e) * growth)
        }
        LaplaceTarget::Lp { op_norm, c1, c2 } => {
            if !(c1 > 0.0) || !(c2 > 0.0) || !(op_norm > 0.0) {
                return domain("c1, c2 and the operator norm must be positive");
            }
            let m = spec.m() as f64;
            Ok(c1.ln() + c2 * r.powf(2.0 / (e * (2.0 * m + 3.0))) + laplace_c3(theta, op_norm)? * r.powf(2.0 / e))
        }
    }
}

/// Ratio of the two sides of the tail/Laplace relation for a Gaussian supremum
/// ξ with maximal variance σ_T²:
///
/// P{ξ > u} versus √(2-θ) E[e^{r ξ^θ}] exp(-u²/(θσ_T²)) σ_T / (√(2π) u),
/// u = (rθσ_T²)^{1/(2-θ)}. Both evaluators return natural logs.
pub fn lifshits_consistency(
    log_tail_at: &dyn Fn(f64) -> Result<f64>,
    log_laplace_at: &dyn Fn(f64) -> Result<f64>,
    sigma_t_sq: f64,
    theta: f64,
    r: f64,
) -> Result<f64> {
    check_theta(theta)?;
    if !(sigma_t_sq > 0.0) || !(r > 0.0) {
        return domain("σ_T² and r must be positive");
    }
    let e = 2.0 - theta;
    let u = (r * theta * sigma_t_sq).powf(1.0 / e);
    let lhs = log_tail_at(u)?;
    let lap = log_laplace_at(r)?;
    if !lhs.is_finite() || !lap.is_finite() {
        return Err(Error::Domain(format!(
            "unresolvable inputs at r = {r}: log tail {lhs}, log Laplace {lap}"
        )));
    }
    let rhs = 0.5 * e.ln() + lap - u * u / (theta * sigma_t_sq) + 0.5 * sigma_t_sq.ln()
        - 0.5 * (2.0 * PI).ln()
        - u.ln();
    Ok((lhs - rhs).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{nystrom_spectrum, zolotarev_constants, NystromOptions, Spectrum};
    use approx::assert_relative_eq;

    /// The textbook form of the reflection sum, kept as an independent route.
    fn reflection_textbook(r: f64) -> f64 {
        let mut inside = 0.0;
        for k in -40i32..=40 {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            inside += s * (normal_cdf((2 * k + 1) as f64 * r) - normal_cdf((2 * k - 1) as f64 * r));
        }
        1.0 - inside
    }

    #[test]
    fn sup_tail_examples() {
        let p0 = ProcessSpec::new(0).unwrap();
        let a = asymptotic_tail_sup(&p0, 2.0).unwrap();
        let expect = 4.0 / (2.0 * PI).sqrt() * 0.5 * (-2.0f64).exp();
        assert_relative_eq!(a.value, expect, max_relative = 1e-14);
        assert!((a.value - 0.10798).abs() < 1e-5);

        let p1 = ProcessSpec::new(1).unwrap();
        let a = asymptotic_tail_sup(&p1, 1.0).unwrap();
        assert_relative_eq!(a.value, 2.0 / (6.0 * PI).sqrt() * (-1.5f64).exp(), max_relative = 1e-14);
        assert!((a.value - 0.10278).abs() < 1e-5);

        let ratio = asymptotic_tail_sup(&p0, 3.0).unwrap().value / reflection_tail_bm(3.0).unwrap();
        assert!((0.9..=1.1).contains(&ratio));
    }

    #[test]
    fn sup_tail_rejects_nonpositive_r() {
        let p = ProcessSpec::new(1).unwrap();
        assert!(asymptotic_tail_sup(&p, 0.0).is_err());
        assert!(asymptotic_tail_sup(&p, -1.0).is_err());
    }

    #[test]
    fn regime_warning_fires_at_small_r() {
        let p = ProcessSpec::new(0).unwrap();
        assert!(asymptotic_tail_sup(&p, 0.5).unwrap().regime_warning);
        assert!(!asymptotic_tail_sup(&p, 4.0).unwrap().regime_warning);
    }

    #[test]
    fn log_space_survives_large_r() {
        for m in 0..=5 {
            let p = ProcessSpec::new(m).unwrap();
            let a = asymptotic_tail_sup(&p, 50.0).unwrap();
            assert!(a.log_value.is_finite() && a.log_value < 0.0);
        }
        assert!(asymptotic_tail_lp_bm(3.0, 50.0).unwrap().log_value.is_finite());
        assert!(log_normal_sf(100.0).is_finite());
        assert_relative_eq!(log_normal_sf(29.9), normal_sf(29.9).ln(), max_relative = 1e-12);
        assert_relative_eq!(log_normal_sf(30.1), normal_sf(30.1).ln(), max_relative = 1e-12);
    }

    #[test]
    fn sigma_p_at_two_is_brownian_lambda1() {
        let s = sigma_p(2.0).unwrap();
        assert!((s.sigma * s.sigma - 4.0 / (PI * PI)).abs() < 1e-10);
        assert!((s.sigma * s.sigma - 0.405_284_7).abs() < 1e-7);
        for &p in &[1.0, 1.5, 2.0, 3.0, 10.0] {
            assert!(sigma_p(p).unwrap().sigma > 0.0);
        }
        assert!(sigma_p(0.0).is_err());
        assert!(asymptotic_tail_lp_bm(-1.0, 1.0).is_err());
    }

    #[test]
    fn lp_bm_matches_l2_route_at_p_two() {
        let z = zolotarev_constants(&Spectrum::brownian(2_000_000), 1e-6).unwrap();
        let lambda1 = 4.0 / (PI * PI);
        for &r in &[1.0, 2.0, 3.0] {
            let a = asymptotic_tail_lp_bm(2.0, r).unwrap();
            let b = asymptotic_tail_l2(lambda1, &z, r).unwrap();
            assert_relative_eq!(a.value, b.value, max_relative = 1e-6);
        }
    }

    #[test]
    fn l2_tail_example_and_monotonicity() {
        let p = ProcessSpec::new(0).unwrap();
        let s = nystrom_spectrum(&p, NystromOptions::default()).unwrap();
        let z = zolotarev_constants(&s, 1e-6).unwrap();
        let a = asymptotic_tail_l2(s.lambda1(), &z, 2.0).unwrap();
        let by_hand = 0.5732 * 0.5 * (-4.0f64 / (2.0 * 0.405_285)).exp();
        assert!((a.value - by_hand).abs() < 2e-6, "{}", a.value);
        let mut prev = f64::INFINITY;
        let mut r = s.lambda1().sqrt();
        while r < 10.0 {
            let v = asymptotic_tail_l2(s.lambda1(), &z, r).unwrap().value;
            assert!(v < prev);
            prev = v;
            r += 0.1;
        }
    }

    #[test]
    fn reflection_values() {
        assert!((reflection_tail_bm(1.0).unwrap() - 0.629_223).abs() < 1e-6);
        assert!(reflection_tail_bm(0.2).unwrap() > 0.999);
        let p0 = ProcessSpec::new(0).unwrap();
        // Mills-ratio correction: 1 - 1/r² + 3/r⁴ at r = 4.
        let ratio = reflection_tail_bm(4.0).unwrap() / asymptotic_tail_sup(&p0, 4.0).unwrap().value;
        assert!((ratio - (1.0 - 1.0 / 16.0 + 3.0 / 256.0)).abs() < 0.005, "ratio={ratio}");
        let ratio = reflection_tail_bm(12.0).unwrap() / asymptotic_tail_sup(&p0, 12.0).unwrap().value;
        assert!((ratio - 1.0).abs() < 0.01, "ratio={ratio}");
        for &r in &[0.3, 0.7, 1.0, 1.5, 2.5] {
            assert!((reflection_tail_bm(r).unwrap() - reflection_textbook(r)).abs() < 1e-13);
        }
    }

    #[test]
    fn small_ball_series_agree() {
        for &e in &[0.6, 0.8, 0.99] {
            let theta = reflection_small_ball_bm(e).unwrap();
            let refl = 1.0 - reflection_tail_bm(e).unwrap();
            assert!((theta - refl).abs() < 1e-13, "eps={e}");
        }
        assert!(reflection_small_ball_bm(0.05).unwrap() > 0.0);
    }

    #[test]
    fn reflection_ratio_approaches_one() {
        let p0 = ProcessSpec::new(0).unwrap();
        let ratios: Vec<f64> = [2.0, 3.0, 4.0]
            .iter()
            .map(|&r| asymptotic_tail_sup(&p0, r).unwrap().value / reflection_tail_bm(r).unwrap())
            .collect();
        assert!((ratios[0] - 1.0).abs() > (ratios[1] - 1.0).abs());
        assert!((ratios[1] - 1.0).abs() > (ratios[2] - 1.0).abs());
        assert!((0.88..=1.12).contains(&ratios[2]));
    }

    #[test]
    fn borell_behaviour() {
        assert!(borell_bound(1.0, 1.0, 1.0).is_err());
        assert!(borell_bound(2.0, 1.0, 0.0).is_err());
        assert!((borell_bound(1.0 + 1e-9, 1.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
        // E sup|W| = sqrt(π/2).
        let b = borell_bound(3.0, (PI / 2.0).sqrt(), 1.0).unwrap();
        assert!(b > reflection_tail_bm(3.0).unwrap());
    }

    #[test]
    fn thm2_correction_exponent() {
        for m in 1..=4 {
            let p = ProcessSpec::new(m).unwrap();
            let op = 0.08;
            let corr = |r: f64| log_thm2_bound(&p, r, 1.0, 1.3, op).unwrap() + r * r / (2.0 * op);
            let (r1, r2) = (3.0f64, 7.0f64);
            let slope = (corr(r2).ln() - corr(r1).ln()) / (r2.ln() - r1.ln());
            assert!((slope - 2.0 / (2 * m + 3) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn thm3_reduces_to_thm2() {
        for m in 1..=4 {
            let p = ProcessSpec::new(m).unwrap();
            let op = 0.05f64;
            let alpha = 2.0 / (2 * m + 1) as f64;
            assert!((alpha / (alpha + 1.0) - 2.0 / (2 * m + 3) as f64).abs() < 1e-15);
            for &r in &[1.5, 3.0, 8.0] {
                let a = thm3_bound(r, alpha, 0.0, op.sqrt(), 1.7, 0.9).unwrap();
                let b = thm2_bound(&p, 2.0, r, 1.7, 0.9, op).unwrap();
                assert_relative_eq!(a, b, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn thm3_domain_and_monotonicity() {
        assert!(thm3_bound(0.9, 1.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(thm3_bound(0.9, 1.0, 0.0, 1.0, 1.0, 1.0).is_ok());
        let a = thm3_bound(3.0, 0.5, 1.0, 1.0, 1.0, 0.5).unwrap();
        let b = thm3_bound(3.0, 0.5, 1.0, 1.0, 1.0, 0.8).unwrap();
        assert!(b > a);
    }

    #[test]
    fn crossover_is_positive() {
        let p = ProcessSpec::new(1).unwrap();
        let r = correction_crossover(&p, 0.3, 0.08, 1.0).unwrap();
        assert!(r > 0.0);
        let gamma = 0.4;
        let lin = r * 0.3 / 0.08 - 0.09 / 0.16;
        assert!((lin - r.powf(gamma)).abs() < 1e-9);
    }

    #[test]
    fn laplace_sup_theta_one() {
        let p = ProcessSpec::new(1).unwrap();
        for &r in &[1.0, 4.0, 9.0] {
            let l = laplace_asymptotic(&p, LaplaceTarget::Sup, 1.0, r).unwrap();
            assert_relative_eq!(l, r * r / 6.0, max_relative = 1e-14);
        }
        assert!(laplace_asymptotic(&p, LaplaceTarget::Sup, 2.0, 1.0).is_err());
        assert!(laplace_asymptotic(&p, LaplaceTarget::Sup, 0.9, 1.0).is_err());
    }

    #[test]
    fn c3_matches_l2_leading_coefficient() {
        let lambda1 = 0.080_890_681_677;
        let c3 = laplace_c3(1.0, lambda1).unwrap();
        assert_relative_eq!(c3, 0.5 * lambda1, max_relative = 1e-15);
        let p = ProcessSpec::new(1).unwrap();
        let r = 40.0;
        let l2 = laplace_asymptotic(&p, LaplaceTarget::L2 { lambda1, c_lambda: 0.3 }, 1.0, r).unwrap();
        let const_part = 0.3f64.ln() + 0.5 * (2.0 * PI / lambda1).ln();
        assert_relative_eq!((l2 - const_part) / (r * r), c3, max_relative = 1e-12);
    }

    #[test]
    fn lifshits_closed_forms_agree_exactly() {
        // One-sided version of the sharp sup asymptotic against the Laplace display.
        let p = ProcessSpec::new(1).unwrap();
        let s2 = p.max_variance();
        let tail = |u: f64| Ok(asymptotic_tail_sup(&p, u)?.log_value - 2f64.ln());
        let lap = |r: f64| laplace_asymptotic(&p, LaplaceTarget::Sup, 1.0, r);
        for &r in &[5.0, 10.0, 20.0] {
            let ratio = lifshits_consistency(&tail, &lap, s2, 1.0, r).unwrap();
            assert!((ratio - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lifshits_exact_tail_converges() {
        let p = ProcessSpec::new(1).unwrap();
        let s2 = p.max_variance();
        let tail = |u: f64| Ok(log_normal_sf(u / s2.sqrt()));
        let lap = |r: f64| laplace_asymptotic(&p, LaplaceTarget::Sup, 1.0, r);
        let r5 = lifshits_consistency(&tail, &lap, s2, 1.0, 5.0).unwrap();
        let r10 = lifshits_consistency(&tail, &lap, s2, 1.0, 10.0).unwrap();
        assert!((0.8..=1.25).contains(&r10));
        assert!((r10 - 1.0).abs() < (r5 - 1.0).abs());
    }

    #[test]
    fn lifshits_scale_covariance() {
        // Gaussian ξ ~ N(0, σ²) at θ = 1: the relation is exact up to the Mills
        // ratio, which depends on r and σ only through rσ.
        let theta = 1.0;
        let run = |s2: f64, r: f64| {
            let tail = move |u: f64| Ok(log_normal_sf(u / s2.sqrt()));
            let lap = move |r: f64| Ok(0.5 * r * r * s2);
            lifshits_consistency(&tail, &lap, s2, theta, r).unwrap()
        };
        let a = run(1.0, 3.0);
        let b = run(4.0, 1.5);
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn lifshits_rejects_unresolvable() {
        let tail = |_u: f64| Ok(f64::NEG_INFINITY);
        let lap = |_r: f64| Ok(1.0);
        assert!(lifshits_consistency(&tail, &lap, 1.0, 1.0, 3.0).is_err());
    }
}
