//! Closed-form quantities of the m-times integrated Brownian motion X_m.
//!
//! X_0 is standard Brownian motion and X_m(t) = ∫_0^t X_{m-1}(s) ds, equivalently
//! X_m(t) = (1/m!) ∫_0^t (t - s)^m dW(s). Everything here is a pure function of
//! its inputs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::cholesky;

/// Largest supported integration order; 20! is the last factorial that fits in u64.
pub const MAX_ORDER: usize = 20;

const FACTORIALS: [u64; MAX_ORDER + 1] = {
    let mut f = [1u64; MAX_ORDER + 1];
    let mut i = 1;
    while i <= MAX_ORDER {
        f[i] = f[i - 1] * i as u64;
        i += 1;
    }
    f
};

/// n! as f64 for n ≤ 20.
pub fn factorial(n: usize) -> f64 {
    FACTORIALS[n] as f64
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (FACTORIALS[n] / FACTORIALS[k] / FACTORIALS[n - k]) as f64
}

/// Integration order of the process together with its recurring constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    m: usize,
    m_fact_sq: f64,
    two_m_plus_one: usize,
}

impl ProcessSpec {
    pub fn new(m: usize) -> Result<Self> {
        if m > MAX_ORDER {
            return domain(format!("integration order m = {m} exceeds {MAX_ORDER}"));
        }
        let f = factorial(m);
        Ok(Self {
            m,
            m_fact_sq: f * f,
            two_m_plus_one: 2 * m + 1,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// (m!)²
    pub fn m_fact_sq(&self) -> f64 {
        self.m_fact_sq
    }

    pub fn two_m_plus_one(&self) -> usize {
        self.two_m_plus_one
    }

    /// Var X_m(1) = 1/((m!)²(2m+1)), the maximal variance on [0,1].
    pub fn max_variance(&self) -> f64 {
        1.0 / (self.m_fact_sq * self.two_m_plus_one as f64)
    }

    /// ∫_0^1 K_m(t,t) dt, the trace of the covariance operator.
    pub fn trace(&self) -> f64 {
        self.max_variance() / (2 * self.m + 2) as f64
    }
}

fn check_time(t: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return domain(format!("{name} = {t} outside [0, 1]"));
    }
    Ok(())
}

/// Covariance K_m(s,t) = (1/(m!)²) ∫_0^{min(s,t)} (s-u)^m (t-u)^m du.
///
/// Substituting v = min(s,t) - u turns the integrand into v^m (v + |s-t|)^m, whose
/// binomial expansion has only nonnegative terms.
pub fn kernel_value(spec: &ProcessSpec, s: f64, t: f64) -> Result<f64> {
    check_time(s, "s")?;
    check_time(t, "t")?;
    Ok(kernel_unchecked(spec, s, t))
}

#[inline]
pub(crate) fn kernel_unchecked(spec: &ProcessSpec, s: f64, t: f64) -> f64 {
    let m = spec.m;
    let w = s.min(t);
    if w <= 0.0 {
        return 0.0;
    }
    let d = (s - t).abs();
    let mut acc = 0.0;
    // term_k = C(m,k) d^{m-k} w^{m+k+1} / (m+k+1)
    let mut w_pow = w.powi(m as i32 + 1);
    for k in 0..=m {
        acc += binomial(m, k) * d.powi((m - k) as i32) * w_pow / (m + k + 1) as f64;
        w_pow *= w;
    }
    acc / spec.m_fact_sq
}

/// Var X_m(t) = t^{2m+1} / ((m!)² (2m+1)).
pub fn variance(spec: &ProcessSpec, t: f64) -> Result<f64> {
    check_time(t, "t")?;
    Ok(t.powi(spec.two_m_plus_one as i32) * spec.max_variance())
}

/// Exact one-step law of the state vector (X_0, ..., X_m).
///
/// X(t+h) = transition · X(t) + η with η ~ N(0, noise_cov).
#[derive(Debug, Clone)]
pub struct StateTransition {
    pub h: f64,
    pub transition: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    pub noise_chol: DMatrix<f64>,
    /// Diagonal jitter that had to be added before factorizing (0 when none).
    pub jitter: f64,
}

/// Builds the exact transition over a step of length `h`.
///
/// The noise covariance factors as D·H·D with D = diag(h^{k+1/2}) and
/// H[j][k] = 1/(j! k! (j+k+1)), so the Cholesky factor is D·chol(H). This keeps
/// the factorization well scaled for tiny steps.
pub fn state_transition(spec: &ProcessSpec, h: f64) -> Result<StateTransition> {
    if !(h > 0.0) || !h.is_finite() {
        return domain(format!("step h = {h} must be positive"));
    }
    let d = spec.m + 1;
    let transition = DMatrix::from_fn(d, d, |k, j| {
        if j <= k {
            h.powi((k - j) as i32) / factorial(k - j)
        } else {
            0.0
        }
    });
    let scaled = DMatrix::from_fn(d, d, |j, k| {
        1.0 / (factorial(j) * factorial(k) * (j + k + 1) as f64)
    });
    let (chol_scaled, jitter) = match cholesky(&scaled) {
        Ok(l) => (l, 0.0),
        Err(Error::NotPositiveDefinite { .. }) => {
            let jitter = 1e-15 * scaled.trace();
            let mut bumped = scaled.clone();
            for i in 0..d {
                bumped[(i, i)] += jitter;
            }
            (cholesky(&bumped)?, jitter)
        }
        Err(e) => return Err(e),
    };
    let scale: Vec<f64> = (0..d).map(|k| h.powf(k as f64 + 0.5)).collect();
    let noise_cov = DMatrix::from_fn(d, d, |j, k| scaled[(j, k)] * scale[j] * scale[k]);
    let noise_chol = DMatrix::from_fn(d, d, |i, j| chol_scaled[(i, j)] * scale[i]);
    if noise_chol.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotPositiveDefinite {
            pivot: 0,
            value: f64::NAN,
        });
    }
    Ok(StateTransition {
        h,
        transition,
        noise_cov,
        noise_chol,
        jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Expansion of both factors (s-u)^m (t-u)^m, integrated term by term.
    fn kernel_double_sum(m: usize, s: f64, t: f64) -> f64 {
        let w = s.min(t);
        let mut acc = 0.0;
        for j in 0..=m {
            for k in 0..=m {
                let sign = if (j + k) % 2 == 0 { 1.0 } else { -1.0 };
                acc += binomial(m, j)
                    * binomial(m, k)
                    * sign
                    * s.powi((m - j) as i32)
                    * t.powi((m - k) as i32)
                    * w.powi((j + k + 1) as i32)
                    / (j + k + 1) as f64;
            }
        }
        acc / (factorial(m) * factorial(m))
    }

    #[test]
    fn kernel_examples() {
        let p0 = ProcessSpec::new(0).unwrap();
        assert_relative_eq!(kernel_value(&p0, 0.3, 0.7).unwrap(), 0.3, max_relative = 1e-15);
        let p1 = ProcessSpec::new(1).unwrap();
        assert_relative_eq!(
            kernel_value(&p1, 0.5, 1.0).unwrap(),
            0.25 * (3.0 - 0.5) / 6.0,
            max_relative = 1e-15
        );
        let p2 = ProcessSpec::new(2).unwrap();
        assert_relative_eq!(kernel_value(&p2, 1.0, 1.0).unwrap(), 0.05, max_relative = 1e-15);
    }

    #[test]
    fn kernel_rejects_outside_unit_interval() {
        let p = ProcessSpec::new(1).unwrap();
        assert!(matches!(kernel_value(&p, -0.1, 0.5), Err(Error::Domain(_))));
        assert!(matches!(kernel_value(&p, 0.5, 1.5), Err(Error::Domain(_))));
        assert!(matches!(variance(&p, 1.01), Err(Error::Domain(_))));
    }

    #[test]
    fn order_guard() {
        assert!(ProcessSpec::new(20).is_ok());
        assert!(ProcessSpec::new(21).is_err());
        assert_eq!(ProcessSpec::new(20).unwrap().m_fact_sq(), (2432902008176640000f64).powi(2));
    }

    #[test]
    fn variance_examples() {
        let p0 = ProcessSpec::new(0).unwrap();
        assert_eq!(variance(&p0, 1.0).unwrap(), 1.0);
        let p1 = ProcessSpec::new(1).unwrap();
        assert_relative_eq!(variance(&p1, 1.0).unwrap(), 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(variance(&p1, 0.5).unwrap(), 0.125 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(
            variance(&p1, 0.5).unwrap(),
            kernel_value(&p1, 0.5, 0.5).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn variance_strictly_increasing_maximized_at_one() {
        for m in 0..=6 {
            let p = ProcessSpec::new(m).unwrap();
            let vals: Vec<f64> = (0..=1000).map(|i| variance(&p, i as f64 / 1000.0).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]));
            let argmax = vals
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 1000);
            assert_relative_eq!(vals[1000], p.max_variance(), max_relative = 1e-15);
        }
    }

    #[test]
    fn kernel_matrix_is_psd() {
        for m in 0..=5 {
            let p = ProcessSpec::new(m).unwrap();
            let grid: Vec<f64> = (1..=12).map(|i| i as f64 / 12.0).collect();
            let k = DMatrix::from_fn(12, 12, |i, j| kernel_value(&p, grid[i], grid[j]).unwrap());
            let eig = k.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-10, "m={m} min eig {}", eig.min());
        }
    }

    #[test]
    fn transition_examples() {
        let p0 = ProcessSpec::new(0).unwrap();
        let st = state_transition(&p0, 0.25).unwrap();
        assert_eq!(st.transition[(0, 0)], 1.0);
        assert_relative_eq!(st.noise_cov[(0, 0)], 0.25, max_relative = 1e-15);

        let p1 = ProcessSpec::new(1).unwrap();
        let st = state_transition(&p1, 1.0).unwrap();
        let expect_t = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let expect_c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0 / 3.0]);
        assert!((st.transition - expect_t).amax() < 1e-15);
        assert!((st.noise_cov - expect_c).amax() < 1e-15);

        let p2 = ProcessSpec::new(2).unwrap();
        let st = state_transition(&p2, 1.0).unwrap();
        assert_relative_eq!(st.noise_cov[(2, 2)], 0.05, max_relative = 1e-14);
        assert_relative_eq!(st.noise_cov[(2, 2)], variance(&p2, 1.0).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn transition_rejects_nonpositive_step() {
        let p = ProcessSpec::new(1).unwrap();
        assert!(state_transition(&p, 0.0).is_err());
        assert!(state_transition(&p, -1.0).is_err());
    }

    #[test]
    fn large_order_falls_back_to_jitter() {
        let p = ProcessSpec::new(20).unwrap();
        let st = state_transition(&p, 0.5).unwrap();
        assert!(st.noise_chol.iter().all(|x| x.is_finite()));
    }

    fn rel_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        a.iter()
            .zip(b.iter())
            .all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(f64::MIN_POSITIVE))
    }

    proptest! {
        #[test]
        fn kernel_symmetric_and_matches_double_sum(m in 0usize..6, s in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            let p = ProcessSpec::new(m).unwrap();
            let a = kernel_value(&p, s, t).unwrap();
            let b = kernel_value(&p, t, s).unwrap();
            prop_assert_eq!(a, b);
            let c = kernel_double_sum(m, s, t);
            prop_assert!((a - c).abs() <= 1e-12 * a.abs().max(1e-300) + 1e-15);
            let bound = (kernel_value(&p, s, s).unwrap() * kernel_value(&p, t, t).unwrap()).sqrt();
            prop_assert!(a >= 0.0 && a <= bound * (1.0 + 1e-14));
        }

        #[test]
        fn variance_is_kernel_diagonal(m in 0usize..8, t in 0.0f64..=1.0) {
            let p = ProcessSpec::new(m).unwrap();
            let v = variance(&p, t).unwrap();
            let k = kernel_value(&p, t, t).unwrap();
            prop_assert!((v - k).abs() <= 1e-14 * v.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn chapman_kolmogorov(m in 0usize..5, h1 in 1e-3f64..0.6, h2 in 1e-3f64..0.6) {
            let p = ProcessSpec::new(m).unwrap();
            let a = state_transition(&p, h1).unwrap();
            let b = state_transition(&p, h2).unwrap();
            let ab = state_transition(&p, h1 + h2).unwrap();
            let t = &b.transition * &a.transition;
            prop_assert!(rel_close(&t, &ab.transition, 1e-12));
            let c = &b.transition * &a.noise_cov * b.transition.transpose() + &b.noise_cov;
            prop_assert!(rel_close(&c, &ab.noise_cov, 1e-12));
        }

        #[test]
        fn noise_factor_reconstructs(m in 0usize..8, h in 1e-4f64..1.0) {
            let p = ProcessSpec::new(m).unwrap();
            let st = state_transition(&p, h).unwrap();
            let back = &st.noise_chol * st.noise_chol.transpose();
            prop_assert!(rel_close(&back, &st.noise_cov, 1e-12));
        }
    }
}
