//! Spectrum of the covariance operator A_m f(t) = ∫_0^1 K_m(s,t) f(s) ds.
//!
//! The operator is discretized on a Gauss–Legendre rule (Nyström). The kernel has
//! a jump in its (2m+1)-th derivative across the diagonal, which limits the
//! Nyström error to O(n^{-(2m+2)}); when the node count is divisible by 4 the
//! leading eigenvalues and the Zolotarev product are additionally extrapolated
//! from the n, n/2 and n/4 solutions.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::process::{kernel_unchecked, ProcessSpec};
use crate::quadrature::QuadratureRule;
use crate::rng::RngStream;

/// Eigenvalues below this fraction of λ_1 are treated as numerically zero.
pub const RELATIVE_EIGEN_FLOOR: f64 = 1e-14;

pub const DEFAULT_NODES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NystromOptions {
    pub nodes: usize,
    /// Extrapolate leading eigenvalues and derived constants from coarser solves.
    pub richardson: bool,
}

impl Default for NystromOptions {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_NODES,
            richardson: true,
        }
    }
}

impl NystromOptions {
    pub fn nodes(nodes: usize) -> Self {
        Self {
            nodes,
            ..Self::default()
        }
    }
}

/// Eigen-decomposition of the discretized covariance operator.
#[derive(Debug, Clone)]
pub struct Spectrum {
    m: usize,
    /// Plain Nyström eigenvalues, nonincreasing and nonnegative.
    eigenvalues: Vec<f64>,
    /// Column k holds f_k at the quadrature nodes, orthonormal under the weights.
    eigenvectors: Option<DMatrix<f64>>,
    rule: Option<QuadratureRule>,
    /// Extrapolated values of the leading eigenvalues.
    refined: Vec<f64>,
    /// Eigenvalues of the n/2 and n/4 node solves, kept for extrapolating
    /// derived constants.
    coarse: Option<(Vec<f64>, Vec<f64>)>,
}

fn kernel_matrix(spec: &ProcessSpec, nodes: &[f64]) -> DMatrix<f64> {
    let n = nodes.len();
    let rows: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|&s| nodes.iter().map(|&t| kernel_unchecked(spec, s, t)).collect())
        .collect();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

fn symmetrized(spec: &ProcessSpec, rule: &QuadratureRule) -> DMatrix<f64> {
    let k = kernel_matrix(spec, &rule.nodes);
    let sw: Vec<f64> = rule.weights.iter().map(|w| w.sqrt()).collect();
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| sw[i] * k[(i, j)] * sw[j])
}

fn sorted_eigenvalues(values: impl Iterator<Item = f64>) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (i, &x) in v.iter().enumerate() {
        if x < -1e-8 {
            return Err(Error::NegativeEigenvalue { index: i, value: x });
        }
    }
    Ok(v.into_iter().map(|x| x.max(0.0)).collect())
}

fn coarse_eigenvalues(spec: &ProcessSpec, nodes: usize) -> Result<Vec<f64>> {
    let rule = QuadratureRule::gauss_legendre(nodes)?;
    let b = symmetrized(spec, &rule);
    sorted_eigenvalues(b.symmetric_eigenvalues().iter().copied())
}

/// Two-level Richardson extrapolation of a quantity computed with n, n/2, n/4
/// nodes whose error expands in powers n^{-p}, n^{-(p+1)}.
fn richardson(fine: f64, mid: f64, coarse: f64, p: i32) -> f64 {
    let f1 = 2f64.powi(p) - 1.0;
    let f2 = 2f64.powi(p + 1) - 1.0;
    let r_fine = fine + (fine - mid) / f1;
    let r_mid = mid + (mid - coarse) / f1;
    r_fine + (r_fine - r_mid) / f2
}

/// Nyström discretization of A_m on an n-node Gauss–Legendre rule.
pub fn nystrom_spectrum(spec: &ProcessSpec, opts: NystromOptions) -> Result<Spectrum> {
    let n = opts.nodes;
    if n < 8 {
        return domain(format!("Nyström needs at least 8 nodes, got {n}"));
    }
    let rule = QuadratureRule::gauss_legendre(n)?;
    let b = symmetrized(spec, &rule);
    let eig = SymmetricEigen::new(b);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigenvalues = sorted_eigenvalues(order.iter().map(|&i| eig.eigenvalues[i]))?;

    let inv_sw: Vec<f64> = rule.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        // Fix the sign so the value nearest t = 1 is nonnegative.
        let sign = if v[n - 1] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, col)] = sign * v[i] * inv_sw[i];
        }
    }

    let mut spectrum = Spectrum {
        m: spec.m(),
        eigenvalues,
        eigenvectors: Some(vectors),
        rule: Some(rule),
        refined: Vec::new(),
        coarse: None,
    };

    if opts.richardson && n.is_multiple_of(4) && n / 4 >= 8 {
        let mid = coarse_eigenvalues(spec, n / 2)?;
        let low = coarse_eigenvalues(spec, n / 4)?;
        let p = 2 * spec.m() as i32 + 2;
        let count = n / 16;
        let mut refined = Vec::with_capacity(count);
        for k in 0..count {
            let mut v = richardson(spectrum.eigenvalues[k], mid[k], low[k], p);
            if let Some(&prev) = refined.last() {
                v = v.min(prev);
            }
            refined.push(v);
        }
        // Keep the spliced sequence nonincreasing.
        if let Some(&next) = spectrum.eigenvalues.get(count) {
            if let Some(last) = refined.last_mut() {
                *last = last.max(next);
            }
        }
        spectrum.refined = refined;
        spectrum.coarse = Some((mid, low));
    }
    Ok(spectrum)
}

impl Spectrum {
    /// Spectrum from a bare eigenvalue list (no eigenfunctions).
    pub fn from_eigenvalues(m: usize, mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return domain("empty eigenvalue list");
        }
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if eigenvalues.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return domain("eigenvalues must be finite and nonnegative");
        }
        Ok(Self {
            m,
            eigenvalues,
            eigenvectors: None,
            rule: None,
            refined: Vec::new(),
            coarse: None,
        })
    }

    /// Closed-form Brownian spectrum λ_n = 4/((2n-1)²π²), n = 1..=terms.
    pub fn brownian(terms: usize) -> Self {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let eigenvalues = (1..=terms.max(1))
            .map(|n| {
                let k = (2 * n - 1) as f64;
                4.0 / (k * k * pi2)
            })
            .collect();
        Self {
            m: 0,
            eigenvalues,
            eigenvectors: None,
            rule: None,
            refined: Vec::new(),
            coarse: None,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_nodes(&self) -> usize {
        self.rule.as_ref().map_or(0, |r| r.len())
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Plain (unextrapolated) eigenvalues.
    pub fn raw_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Best available estimate of λ_{k+1} (0-based index).
    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.refined.get(k).copied().unwrap_or(self.eigenvalues[k])
    }

    /// Eigenvalue list with the extrapolated leading entries spliced in.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.eigenvalue(k)).collect()
    }

    pub fn refined_count(&self) -> usize {
        self.refined.len()
    }

    pub fn lambda1(&self) -> f64 {
        self.eigenvalue(0)
    }

    pub fn gap(&self) -> f64 {
        if self.len() < 2 {
            return self.lambda1();
        }
        self.eigenvalue(0) - self.eigenvalue(1)
    }

    pub fn rule(&self) -> Option<&QuadratureRule> {
        self.rule.as_ref()
    }

    pub fn eigenvectors(&self) -> Option<&DMatrix<f64>> {
        self.eigenvectors.as_ref()
    }

    /// Σ λ_n over the plain eigenvalues.
    pub fn trace_sum(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Exact trace ∫_0^1 K_m(t,t) dt.
    pub fn exact_trace(&self) -> f64 {
        ProcessSpec::new(self.m).map(|p| p.trace()).unwrap_or(f64::NAN)
    }

    /// Number of eigenvalues above the relative floor.
    pub fn significant_terms(&self) -> usize {
        let l1 = self.eigenvalues[0];
        self.eigenvalues
            .iter()
            .take_while(|&&x| x > RELATIVE_EIGEN_FLOOR * l1)
            .count()
    }

    /// Nyström extension of f_k to an arbitrary t, scaled by sqrt(λ_k):
    /// sqrt(λ_k) f_k(t) = λ_k^{-1/2} Σ_j w_j K(t, t_j) f_k(t_j).
    pub fn scaled_eigenfunction_at(&self, spec: &ProcessSpec, k: usize, t: f64) -> Result<f64> {
        let (vecs, rule) = match (&self.eigenvectors, &self.rule) {
            (Some(v), Some(r)) => (v, r),
            _ => return domain("spectrum carries no eigenfunctions"),
        };
        let lam = self.eigenvalues[k];
        if lam <= 0.0 {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for j in 0..rule.len() {
            acc += rule.weights[j] * kernel_unchecked(spec, t, rule.nodes[j]) * vecs[(j, k)];
        }
        Ok(acc / lam.sqrt())
    }

    /// Matrix of sqrt(λ_k) f_k(t_i), one row per grid point and one column per term.
    pub fn kl_basis(&self, spec: &ProcessSpec, grid: &[f64], terms: usize) -> Result<DMatrix<f64>> {
        if spec.m() != self.m {
            return domain("spectrum computed for a different order");
        }
        let terms = terms.min(self.significant_terms());
        let rows: Vec<Vec<f64>> = grid
            .par_iter()
            .map(|&t| {
                (0..terms)
                    .map(|k| self.scaled_eigenfunction_at(spec, k, t))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(grid.len(), terms, |i, k| rows[i][k]))
    }

    pub fn summary(&self) -> SpectrumSummary {
        let sum = self.trace_sum();
        let exact = self.exact_trace();
        SpectrumSummary {
            m: self.m,
            n_nodes: self.n_nodes(),
            eigenvalues: self.eigenvalues(),
            refined_terms: self.refined.len(),
            trace_check: TraceCheck {
                eigenvalue_sum: sum,
                exact,
                relative_error: (sum - exact).abs() / exact,
            },
            gap: self.gap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCheck {
    pub eigenvalue_sum: f64,
    pub exact: f64,
    pub relative_error: f64,
}

/// JSON form of a spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub m: usize,
    pub n_nodes: usize,
    pub eigenvalues: Vec<f64>,
    pub refined_terms: usize,
    pub trace_check: TraceCheck,
    pub gap: f64,
}

/// Two-sided bound on the top eigenvalue,
/// 1/((m!)²(m+1)²(2m+3)) ≤ λ_1 ≤ 1/((m!)²(2m+1)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenBoundReport {
    pub m: usize,
    pub lower: f64,
    pub upper: f64,
    pub lambda1: f64,
    /// min(λ_1 - lower, upper - λ_1), in units of λ_1·(m!)².
    pub margin: f64,
    pub passed: bool,
}

pub fn check_eigen_bounds(spec: &ProcessSpec, spectrum: &Spectrum) -> Result<EigenBoundReport> {
    if spec.m() != spectrum.m() {
        return domain("spectrum computed for a different order");
    }
    let m = spec.m() as f64;
    let f2 = spec.m_fact_sq();
    let lower_scaled = 1.0 / ((m + 1.0) * (m + 1.0) * (2.0 * m + 3.0));
    let upper_scaled = 1.0 / (2.0 * m + 1.0);
    let lambda1 = spectrum.lambda1();
    let scaled = lambda1 * f2;
    let margin = (scaled - lower_scaled).min(upper_scaled - scaled);
    Ok(EigenBoundReport {
        m: spec.m(),
        lower: lower_scaled / f2,
        upper: upper_scaled / f2,
        lambda1,
        margin,
        passed: margin > 0.0,
    })
}

/// Constants of the sharp L² tail: c̄ = Π_{n≥2} (1 - λ_n/λ_1)^{-1/2} and
/// c(λ) = 2 c̄ sqrt(λ_1/(2π)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZolotarevConstants {
    pub c_bar: f64,
    pub c_lambda: f64,
    /// exp(Σ_{n>N} λ_n / (2λ_1)) - 1 with the tail sum taken from the trace remainder.
    pub truncation_error_bound: f64,
    /// Number of factors in the truncated product (including n = 1).
    pub terms: usize,
}

fn truncated_product(eigenvalues: &[f64]) -> (f64, usize, f64) {
    let l1 = eigenvalues[0];
    let mut log_prod = 0.0;
    let mut count = 1;
    let mut included = l1;
    for &l in &eigenvalues[1..] {
        if l <= RELATIVE_EIGEN_FLOOR * l1 {
            break;
        }
        log_prod += -0.5 * (-(l / l1)).ln_1p();
        included += l;
        count += 1;
    }
    (log_prod.exp(), count, included)
}

pub fn zolotarev_constants(spectrum: &Spectrum, tol: f64) -> Result<ZolotarevConstants> {
    let l1 = spectrum.lambda1();
    if spectrum.len() > 1 {
        let l2 = spectrum.eigenvalue(1);
        if l1 - l2 < tol * l1 {
            return Err(Error::SpectralGap {
                lambda1: l1,
                lambda2: l2,
            });
        }
    }
    let raw = spectrum.raw_eigenvalues();
    let (plain, terms, included) = truncated_product(raw);
    let c_bar = match &spectrum.coarse {
        Some((mid, low)) => {
            let (c_mid, _, _) = truncated_product(mid);
            let (c_low, _, _) = truncated_product(low);
            richardson(plain, c_mid, c_low, 2 * spectrum.m as i32 + 2)
        }
        None => plain,
    };
    let remainder = (spectrum.exact_trace() - included).max(0.0);
    let truncation_error_bound = if remainder.is_finite() {
        (0.5 * remainder / raw[0]).exp_m1()
    } else {
        0.0
    };
    Ok(ZolotarevConstants {
        c_bar,
        c_lambda: 2.0 * c_bar * (l1 / (2.0 * std::f64::consts::PI)).sqrt(),
        truncation_error_bound,
        terms,
    })
}

/// Result of the nonlinear power iteration for ‖A_m‖_{q→p}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorNorm {
    pub p: f64,
    pub value: f64,
    pub iterations: usize,
    /// Maximizing g at the quadrature nodes, with ‖g‖_q = 1.
    pub maximizer: Vec<f64>,
}

pub const POWER_ITERATION_CAP: usize = 20_000;
const RESTARTS: usize = 5;

struct Discrete<'a> {
    k: DMatrix<f64>,
    w: &'a [f64],
    p: f64,
}

impl Discrete<'_> {
    fn apply(&self, g: &[f64]) -> Vec<f64> {
        let wg: Vec<f64> = g.iter().zip(self.w).map(|(a, b)| a * b).collect();
        let v = &self.k * nalgebra::DVector::from_vec(wg);
        v.as_slice().to_vec()
    }

    fn norm(&self, v: &[f64], r: f64) -> f64 {
        if r.is_infinite() {
            return v.iter().fold(0.0, |a, &x| a.max(x.abs()));
        }
        v.iter()
            .zip(self.w)
            .map(|(x, w)| w * x.abs().powf(r))
            .sum::<f64>()
            .powf(1.0 / r)
    }

    /// Maximizer of ⟨u, g⟩ over the unit q-ball.
    fn dual_direction(&self, u: &[f64]) -> Vec<f64> {
        if self.p == 1.0 {
            return u.iter().map(|&x| if x < 0.0 { -1.0 } else { 1.0 }).collect();
        }
        let scale = self.norm(u, self.p).powf(self.p - 1.0);
        u.iter()
            .map(|&x| x.signum() * x.abs().powf(self.p - 1.0) / scale)
            .collect()
    }

    fn gauge(&self, v: &[f64]) -> Vec<f64> {
        if self.p == 1.0 {
            return v.iter().map(|&x| if x < 0.0 { -1.0 } else { 1.0 }).collect();
        }
        v.iter().map(|&x| x.signum() * x.abs().powf(self.p - 1.0)).collect()
    }

    fn q(&self) -> f64 {
        if self.p == 1.0 {
            f64::INFINITY
        } else {
            self.p / (self.p - 1.0)
        }
    }

    fn normalize_q(&self, g: &mut [f64]) {
        let n = self.norm(g, self.q());
        if n > 0.0 {
            g.iter_mut().for_each(|x| *x /= n);
        }
    }

    /// Conditional-gradient ascent of ‖A g‖_p on the q-ball:
    /// g ← argmax_{‖h‖_q≤1} ⟨A ψ_p(A g), h⟩. The objective is convex, so each
    /// step cannot decrease it.
    fn ascend(&self, mut g: Vec<f64>, tol: f64) -> Result<(f64, usize, Vec<f64>)> {
        self.normalize_q(&mut g);
        let mut prev = self.norm(&self.apply(&g), self.p);
        for it in 1..=POWER_ITERATION_CAP {
            let v = self.apply(&g);
            let u = self.apply(&self.gauge(&v));
            g = self.dual_direction(&u);
            let value = self.norm(&self.apply(&g), self.p);
            if (value - prev).abs() <= tol * value {
                return Ok((value, it, g));
            }
            prev = value;
        }
        let last = self.norm(&self.apply(&g), self.p);
        Err(Error::NoConvergence {
            iterations: POWER_ITERATION_CAP,
            previous: prev,
            last,
        })
    }
}

/// ‖A_m‖_p = sup_{‖g‖_q ≤ 1} ‖A_m g‖_p with 1/p + 1/q = 1, on the given rule.
///
/// `tol` is relative: iteration stops when successive values agree to `tol·value`.
/// The constant function and five seeded random starts are tried; the largest
/// value wins.
pub fn operator_p_norm(spec: &ProcessSpec, p: f64, rule: &QuadratureRule, tol: f64) -> Result<OperatorNorm> {
    if !(p >= 1.0) || !p.is_finite() {
        return domain(format!("p = {p} must lie in [1, ∞)"));
    }
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    let problem = Discrete {
        k: kernel_matrix(spec, &rule.nodes),
        w: &rule.weights,
        p,
    };
    let n = rule.len();
    let mut best = problem.ascend(vec![1.0; n], tol)?;
    let mut iterations = best.1;
    let mut gen = RngStream::new(0x0b0d_5eed, p.to_bits()).generator(0);
    for _ in 0..RESTARTS {
        let start: Vec<f64> = (0..n).map(|_| gen.normal()).collect();
        let cand = problem.ascend(start, tol)?;
        iterations += cand.1;
        if cand.0 > best.0 {
            best = cand;
        }
    }
    Ok(OperatorNorm {
        p,
        value: best.0,
        iterations,
        maximizer: best.2,
    })
}

/// sup over the q-ball of the quadratic form ⟨A_m g, g⟩, by the single-application
/// ascent g ← argmax ⟨A g, h⟩. This is the variance of the dual-ball supremum and
/// coincides with ‖A_m‖_p for a covariance kernel.
pub fn dual_ball_variance(spec: &ProcessSpec, p: f64, rule: &QuadratureRule, tol: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return domain(format!("p = {p} must lie in [1, ∞)"));
    }
    let problem = Discrete {
        k: kernel_matrix(spec, &rule.nodes),
        w: &rule.weights,
        p,
    };
    let quad = |g: &[f64]| -> f64 {
        let ag = problem.apply(g);
        ag.iter().zip(g).zip(problem.w).map(|((a, b), w)| a * b * w).sum()
    };
    let mut g = vec![1.0; rule.len()];
    problem.normalize_q(&mut g);
    let mut prev = quad(&g);
    for _ in 0..POWER_ITERATION_CAP {
        g = problem.dual_direction(&problem.apply(&g));
        let value = quad(&g);
        if (value - prev).abs() <= tol * value {
            return Ok(value);
        }
        prev = value;
    }
    Err(Error::NoConvergence {
        iterations: POWER_ITERATION_CAP,
        previous: prev,
        last: quad(&g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn bm_lambda(n: usize) -> f64 {
        let k = (2 * n - 1) as f64;
        4.0 / (k * k * PI * PI)
    }

    #[test]
    fn brownian_spectrum_at_200_nodes() {
        let p = ProcessSpec::new(0).unwrap();
        let s = nystrom_spectrum(&p, NystromOptions::nodes(200)).unwrap();
        assert!((s.eigenvalue(0) - 0.405_284_7).abs() < 1e-6);
        assert!((s.eigenvalue(1) - 0.045_031_6).abs() < 1e-6);
        assert!((s.trace_sum() - 0.5).abs() < 1e-4);
    }

    #[test]
    fn plain_nystrom_has_second_order_error_for_brownian_kernel() {
        let p = ProcessSpec::new(0).unwrap();
        let opts = NystromOptions {
            nodes: 128,
            richardson: false,
        };
        let s = nystrom_spectrum(&p, opts).unwrap();
        let err = s.eigenvalue(0) - bm_lambda(1);
        // Error ≈ 0.137 / n².
        assert!(err > 0.0 && err < 1e-5, "err={err}");
        assert_eq!(s.refined_count(), 0);
    }

    #[test]
    fn m1_lambda1_inside_bound_window() {
        let p = ProcessSpec::new(1).unwrap();
        let s = nystrom_spectrum(&p, NystromOptions::nodes(200)).unwrap();
        assert!(s.lambda1() >= 0.05 && s.lambda1() <= 1.0 / 3.0);
    }

    #[test]
    fn eigenvectors_weight_orthonormal() {
        let p = ProcessSpec::new(2).unwrap();
        let s = nystrom_spectrum(&p, NystromOptions::nodes(64)).unwrap();
        let v = s.eigenvectors().unwrap();
        let w = &s.rule().unwrap().weights;
        for a in 0..10 {
            for b in 0..10 {
                let g: f64 = (0..64).map(|i| w[i] * v[(i, a)] * v[(i, b)]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn eigenvalues_nonincreasing_and_trace_identity() {
        for m in 0..=5 {
            let p = ProcessSpec::new(m).unwrap();
            let s = nystrom_spectrum(&p, NystromOptions::nodes(128)).unwrap();
            let ev = s.eigenvalues();
            assert!(ev.windows(2).all(|w| w[0] >= w[1]), "m={m}");
            let rel = (s.trace_sum() - p.trace()).abs() / p.trace();
            assert!(rel < 1e-3, "m={m} rel={rel}");
        }
    }

    #[test]
    fn nystrom_convergence_between_n_and_2n() {
        for m in 0..=5 {
            let p = ProcessSpec::new(m).unwrap();
            let a = nystrom_spectrum(&p, NystromOptions::nodes(128)).unwrap();
            let b = nystrom_spectrum(&p, NystromOptions::nodes(256)).unwrap();
            let d = (a.lambda1() - b.lambda1()).abs();
            assert!(d < 1e-8, "m={m} diff={d}");
        }
    }

    #[test]
    fn scaled_eigenfunction_reproduces_nodes() {
        let p = ProcessSpec::new(1).unwrap();
        let s = nystrom_spectrum(&p, NystromOptions::nodes(64)).unwrap();
        let rule = s.rule().unwrap().clone();
        let v = s.eigenvectors().unwrap();
        for k in 0..4 {
            let at = s.scaled_eigenfunction_at(&p, k, rule.nodes[10]).unwrap();
            assert_relative_eq!(at, s.raw_eigenvalues()[k].sqrt() * v[(10, k)], max_relative = 1e-9);
        }
    }

    #[test]
    fn eigen_bound_examples() {
        let p1 = ProcessSpec::new(1).unwrap();
        let s1 = nystrom_spectrum(&p1, NystromOptions::nodes(64)).unwrap();
        let r = check_eigen_bounds(&p1, &s1).unwrap();
        assert_relative_eq!(r.lower, 1.0 / 20.0, max_relative = 1e-15);
        assert_relative_eq!(r.upper, 1.0 / 3.0, max_relative = 1e-15);
        assert!(r.passed);

        let p0 = ProcessSpec::new(0).unwrap();
        let r = check_eigen_bounds(&p0, &Spectrum::brownian(10)).unwrap();
        assert_relative_eq!(r.lower, 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(r.upper, 1.0, max_relative = 1e-15);
        assert!(r.passed && (r.lambda1 - 0.4053).abs() < 1e-4);

        let p2 = ProcessSpec::new(2).unwrap();
        let s2 = nystrom_spectrum(&p2, NystromOptions::nodes(64)).unwrap();
        let r = check_eigen_bounds(&p2, &s2).unwrap();
        assert_relative_eq!(r.lower, 1.0 / 252.0, max_relative = 1e-15);
        assert_relative_eq!(r.upper, 1.0 / 20.0, max_relative = 1e-15);
        assert!(r.passed);
    }

    #[test]
    fn zolotarev_brownian() {
        let p = ProcessSpec::new(0).unwrap();
        let s = nystrom_spectrum(&p, NystromOptions::nodes(256)).unwrap();
        let z = zolotarev_constants(&s, 1e-6).unwrap();
        let exact = 2.0 / PI.sqrt();
        assert!((z.c_bar - exact).abs() < 1e-7, "c_bar={}", z.c_bar);
        assert!((z.c_lambda - 0.5732).abs() < 1e-4);
        assert_relative_eq!(
            z.c_lambda,
            2.0 * z.c_bar * (s.lambda1() / (2.0 * PI)).sqrt(),
            max_relative = 1e-15
        );

        // Closed-form eigenvalues, truncated: the reported bound covers the gap.
        let a = Spectrum::brownian(100_000);
        let z = zolotarev_constants(&a, 1e-6).unwrap();
        assert!(z.c_bar <= exact);
        assert!(exact / z.c_bar - 1.0 <= z.truncation_error_bound * 1.0001);
        assert!(z.truncation_error_bound < 2e-6);
    }

    #[test]
    fn zolotarev_empty_product() {
        let s = Spectrum::from_eigenvalues(1, vec![0.08, 0.0, 0.0]).unwrap();
        let z = zolotarev_constants(&s, 1e-6).unwrap();
        assert_eq!(z.c_bar, 1.0);
        assert_eq!(z.terms, 1);
    }

    #[test]
    fn zolotarev_refuses_degenerate_gap() {
        let s = Spectrum::from_eigenvalues(1, vec![0.1, 0.1 - 1e-9, 0.01]).unwrap();
        assert!(matches!(zolotarev_constants(&s, 1e-6), Err(Error::SpectralGap { .. })));
    }

    #[test]
    fn p_norm_two_is_lambda1() {
        let rule = QuadratureRule::gauss_legendre(128).unwrap();
        for m in 0..=2 {
            let p = ProcessSpec::new(m).unwrap();
            let s = nystrom_spectrum(
                &p,
                NystromOptions {
                    nodes: 128,
                    richardson: false,
                },
            )
            .unwrap();
            let tol = 1e-10;
            let norm = operator_p_norm(&p, 2.0, &rule, tol).unwrap();
            let l1 = s.raw_eigenvalues()[0];
            assert!((norm.value - l1).abs() <= 10.0 * tol * l1, "m={m}");
        }
        let p0 = ProcessSpec::new(0).unwrap();
        let norm = operator_p_norm(&p0, 2.0, &QuadratureRule::gauss_legendre(256).unwrap(), 1e-12).unwrap();
        assert!((norm.value - 4.0 / (PI * PI)).abs() < 5e-6);
    }

    #[test]
    fn p_norm_one_is_double_integral_of_kernel() {
        // For a positive kernel the q = ∞ ball is maximized by g ≡ 1, so
        // ‖A_m‖_1 = ∫∫K_m = Var X_{m+1}(1).
        let rule = QuadratureRule::gauss_legendre(128).unwrap();
        for m in 0..=3 {
            let p = ProcessSpec::new(m).unwrap();
            let norm = operator_p_norm(&p, 1.0, &rule, 1e-12).unwrap();
            let exact = ProcessSpec::new(m + 1).unwrap().max_variance();
            // The Brownian kernel's kink limits Gauss–Legendre to O(n^-2).
            let tol = if m == 0 { 5e-5 } else { 1e-9 };
            assert_relative_eq!(norm.value, exact, max_relative = tol);
        }
    }

    #[test]
    fn p_norm_one_dominates_random_sign_vectors() {
        // Independent lower-bound oracle: ‖A g‖_1 for sign vectors on a 64-point grid.
        let p = ProcessSpec::new(0).unwrap();
        let n = 64;
        let grid: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let h = 1.0 / n as f64;
        let mut gen = RngStream::new(5, 5).generator(0);
        let mut best = 0.0f64;
        for _ in 0..2000 {
            let g: Vec<f64> = (0..n).map(|_| if gen.uniform() < 0.5 { -1.0 } else { 1.0 }).collect();
            let mut l1 = 0.0;
            for i in 0..n {
                let ag: f64 = (0..n).map(|j| grid[i].min(grid[j]) * g[j] * h).sum();
                l1 += ag.abs() * h;
            }
            best = best.max(l1);
        }
        let norm = operator_p_norm(&p, 1.0, &QuadratureRule::gauss_legendre(128).unwrap(), 1e-12).unwrap();
        assert!(best <= norm.value + 1e-3, "oracle {best} vs {}", norm.value);
        assert!(norm.value <= 4.0 / (PI * PI));
    }

    #[test]
    fn p_norm_monotone_in_p_and_matches_quadratic_form() {
        let rule = QuadratureRule::gauss_legendre(96).unwrap();
        let p = ProcessSpec::new(1).unwrap();
        let mut prev = 0.0;
        for &pp in &[1.0, 1.5, 2.0, 3.0, 6.0] {
            let norm = operator_p_norm(&p, pp, &rule, 1e-11).unwrap();
            assert!(norm.value >= prev * (1.0 - 1e-9), "p={pp}");
            prev = norm.value;
            let sigma2 = dual_ball_variance(&p, pp, &rule, 1e-12).unwrap();
            assert_relative_eq!(norm.value, sigma2, max_relative = 1e-6);
        }
    }

    #[test]
    fn p_norm_rejects_bad_p() {
        let rule = QuadratureRule::gauss_legendre(16).unwrap();
        let p = ProcessSpec::new(1).unwrap();
        assert!(operator_p_norm(&p, 0.5, &rule, 1e-8).is_err());
        assert!(operator_p_norm(&p, f64::INFINITY, &rule, 1e-8).is_err());
    }

    #[test]
    fn symmetrization_bound_for_bilinear_form() {
        let p = ProcessSpec::new(1).unwrap();
        let s = nystrom_spectrum(
            &p,
            NystromOptions {
                nodes: 64,
                richardson: false,
            },
        )
        .unwrap();
        let rule = s.rule().unwrap();
        let k = kernel_matrix(&p, &rule.nodes);
        let w = &rule.weights;
        let form = |f: &[f64], g: &[f64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..64 {
                for j in 0..64 {
                    acc += w[i] * w[j] * f[i] * k[(i, j)] * g[j];
                }
            }
            acc
        };
        let norm2 = |f: &[f64]| f.iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>().sqrt();
        let mut gen = RngStream::new(9, 1).generator(0);
        let l1 = s.raw_eigenvalues()[0];
        for _ in 0..200 {
            let mut f: Vec<f64> = (0..64).map(|_| gen.normal()).collect();
            let mut g: Vec<f64> = (0..64).map(|_| gen.normal() + 0.5).collect();
            let nf = norm2(&f);
            let ng = norm2(&g);
            f.iter_mut().for_each(|x| *x /= nf);
            g.iter_mut().for_each(|x| *x /= ng);
            let u: Vec<f64> = f.iter().zip(&g).map(|(a, b)| 0.5 * (a + b)).collect();
            let bil = form(&f, &g);
            assert!(bil <= form(&u, &u) + 1e-15);
            assert!(bil <= l1 * (1.0 + 1e-12));
        }
    }
}
