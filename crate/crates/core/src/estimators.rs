//! Monte Carlo estimators for upper tails, small balls and Laplace transforms of
//! norms of X_m, with Cameron–Martin importance sampling for rare events.
//!
//! Paths are processed in the fixed chunk partition of [`par_chunks`], and all
//! sums are compensated, so results do not depend on the worker count.

use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::formulas::{asymptotic_tail_l2, asymptotic_tail_lp_bm, asymptotic_tail_sup};
use crate::linalg::KahanSum;
use crate::process::{kernel_unchecked, ProcessSpec};
use crate::quadrature::adaptive_simpson;
use crate::rng::{NormalGen, RngStream};
use crate::simulate::{kl_scales, par_chunks, PathSample, PathSampler, TimeGrid};
use crate::spectrum::{nystrom_spectrum, zolotarev_constants, NystromOptions, Spectrum};

pub const MIN_TAIL_SAMPLES: usize = 1000;
pub const DEFAULT_GRID: usize = 4096;
pub const DEFAULT_KL_TERMS: usize = 400;
pub const DEFAULT_ESS_FLOOR: f64 = 100.0;
/// Relative standard error of the empirical tail at the Laplace splice point.
pub const SPLICE_RELATIVE_STDERR: f64 = 0.1;
/// Accepted range of empirical / asymptotic tail at the splice point.
pub const SPLICE_RATIO_WINDOW: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormSpec {
    Sup,
    Lp { p: f64 },
}

impl NormSpec {
    pub fn lp(p: f64) -> Result<Self> {
        let n = NormSpec::Lp { p };
        n.validate()?;
        Ok(n)
    }

    pub fn l2() -> Self {
        NormSpec::Lp { p: 2.0 }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NormSpec::Sup => "sup",
            NormSpec::Lp { .. } => "lp",
        }
    }

    pub fn p(&self) -> Option<f64> {
        match self {
            NormSpec::Sup => None,
            NormSpec::Lp { p } => Some(*p),
        }
    }

    pub fn is_l2(&self) -> bool {
        matches!(self, NormSpec::Lp { p } if *p == 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NormSpec::Sup => Ok(()),
            NormSpec::Lp { p } if *p >= 1.0 && p.is_finite() => Ok(()),
            NormSpec::Lp { p } => domain(format!("p = {p} must be finite and at least 1")),
        }
    }
}

impl fmt::Display for NormSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormSpec::Sup => write!(f, "sup"),
            NormSpec::Lp { p } => write!(f, "L^{p}"),
        }
    }
}

/// Trapezoid weights for the grid. If the grid starts after 0, the origin
/// (where X_m vanishes) is prepended and only its effect on the first weight is kept.
pub fn trapezoid_weights(points: &[f64]) -> Result<Vec<f64>> {
    if points.is_empty() {
        return domain("empty grid");
    }
    let origin = points[0] > 0.0;
    if points.len() + usize::from(origin) < 2 {
        return domain("an L^p norm needs at least two grid points");
    }
    let n = points.len();
    Ok((0..n)
        .map(|i| {
            let left = if i > 0 {
                points[i] - points[i - 1]
            } else if origin {
                points[0]
            } else {
                0.0
            };
            let right = if i + 1 < n { points[i + 1] - points[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect())
}

#[inline]
fn norm_of(values: &[f64], norm: NormSpec, weights: &[f64]) -> f64 {
    match norm {
        NormSpec::Sup => values.iter().fold(0.0f64, |m, &x| {
            let a = x.abs();
            if a > m {
                a
            } else {
                m
            }
        }),
        NormSpec::Lp { p: 2.0 } => {
            let s: f64 = values.iter().zip(weights).map(|(x, w)| w * x * x).sum();
            s.sqrt()
        }
        NormSpec::Lp { p } => {
            let s: f64 = values.iter().zip(weights).map(|(x, w)| w * x.abs().powf(p)).sum();
            s.powf(1.0 / p)
        }
    }
}

/// Norm of the path's X_m component on its grid: grid maximum of |X_m| or the
/// trapezoid L^p norm.
pub fn norm_evaluate(path: &PathSample, norm: NormSpec) -> Result<f64> {
    norm.validate()?;
    let xm = path.xm();
    match norm {
        NormSpec::Sup => Ok(norm_of(&xm, norm, &[])),
        NormSpec::Lp { .. } => {
            let w = trapezoid_weights(path.grid.points())?;
            Ok(norm_of(&xm, norm, &w))
        }
    }
}

/// Probability that a Brownian bridge from `x` to `y` over time `dt` stays in
/// (lo, hi), by the method of images.
pub fn bridge_stay_probability(x: f64, y: f64, dt: f64, lo: f64, hi: f64) -> f64 {
    if !(x > lo && x < hi && y > lo && y < hi) {
        return 0.0;
    }
    if dt <= 0.0 {
        return 1.0;
    }
    let near = ((hi - x) * (hi - y)).min((x - lo) * (y - lo));
    // Leading image terms are exp(-2·near/dt); below e^{-40} they are dropped.
    if near > 20.0 * dt {
        return 1.0;
    }
    let w = hi - lo;
    let d = y - x;
    let two_t = 2.0 * dt;
    let mut s = 0.0;
    for k in -3i32..=3 {
        let shift = 2.0 * k as f64 * w;
        let a = d + shift;
        let b = y + x - 2.0 * hi + shift;
        let ea = -(a * a - d * d) / two_t;
        let eb = -(b * b - d * d) / two_t;
        if ea > -40.0 {
            s += ea.exp();
        }
        if eb > -40.0 {
            s -= eb.exp();
        }
    }
    s.clamp(0.0, 1.0)
}

/// Probability that the piecewise Brownian bridge through the grid values stays
/// in (-level, level). `dts[i]` is the length of the interval ending at point i,
/// which starts from the origin for i = 0. `grid_max` is max |values|; when it
/// is far enough below the level every image term is negligible.
fn path_stay(values: &[f64], dts: &[f64], dt_max: f64, level: f64, grid_max: f64) -> f64 {
    if grid_max >= level {
        return 0.0;
    }
    let gap = level - grid_max;
    if gap * gap > 20.0 * dt_max {
        return 1.0;
    }
    let mut prod = 1.0;
    let mut prev = 0.0;
    for (&y, &dt) in values.iter().zip(dts) {
        prod *= bridge_stay_probability(prev, y, dt, -level, level);
        if prod == 0.0 {
            break;
        }
        prev = y;
    }
    prod
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L2Route {
    /// ‖X‖² = Σ λ_k Z_k² from the Karhunen–Loève coefficients.
    Kl,
    /// Trapezoid quadrature on the simulation grid.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupCorrection {
    /// Grid maximum only.
    None,
    /// For m = 0, integrate out the continuous excursions between grid points with
    /// the Brownian-bridge crossing probability. Ignored for m ≥ 1.
    Bridge,
}

/// Sampling settings shared by the estimators.
#[derive(Debug, Clone, Copy)]
pub struct McOptions<'a> {
    pub grid_points: usize,
    pub l2_route: L2Route,
    pub kl_terms: usize,
    pub sup_correction: SupCorrection,
    pub ess_floor: f64,
    /// Spectrum for the KL route and eigenfunction drift; computed on demand.
    pub spectrum: Option<&'a Spectrum>,
}

impl Default for McOptions<'_> {
    fn default() -> Self {
        Self {
            grid_points: DEFAULT_GRID,
            l2_route: L2Route::Kl,
            kl_terms: DEFAULT_KL_TERMS,
            sup_correction: SupCorrection::Bridge,
            ess_floor: DEFAULT_ESS_FLOOR,
            spectrum: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftKind {
    None,
    /// μ(t) = a K_m(t,1)/K_m(1,1), for grid-evaluated norms.
    Endpoint,
    /// μ = a f_1, for the L² norm on the KL route.
    TopEigenfunction,
}

/// Importance-sampling configuration. With `symmetric`, the proposal is the
/// equal mixture of the +μ and -μ shifts; otherwise only +μ is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ISConfig {
    pub drift: DriftKind,
    /// Shift magnitude a; `None` means a = r.
    pub shift: Option<f64>,
    pub symmetric: bool,
}

impl Default for ISConfig {
    fn default() -> Self {
        Self::plain()
    }
}

impl ISConfig {
    pub fn plain() -> Self {
        Self {
            drift: DriftKind::None,
            shift: None,
            symmetric: true,
        }
    }

    pub fn endpoint() -> Self {
        Self {
            drift: DriftKind::Endpoint,
            ..Self::plain()
        }
    }

    pub fn top_eigenfunction() -> Self {
        Self {
            drift: DriftKind::TopEigenfunction,
            ..Self::plain()
        }
    }

    pub fn with_shift(mut self, a: f64) -> Self {
        self.shift = Some(a);
        self
    }

    pub fn one_sided(mut self) -> Self {
        self.symmetric = false;
        self
    }

    fn validate(&self) -> Result<()> {
        if let Some(a) = self.shift {
            if !(a >= 0.0) || !a.is_finite() {
                return domain(format!("shift magnitude {a} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    fn magnitude(&self, r: f64) -> f64 {
        match self.drift {
            DriftKind::None => 0.0,
            _ => self.shift.unwrap_or(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMethod {
    Plain,
    Importance,
}

impl EstimateMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimateMethod::Plain => "plain",
            EstimateMethod::Importance => "importance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteKind {
    Grid,
    KarhunenLoeve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub m: usize,
    pub norm: NormSpec,
    pub r: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// estimate ± 3·stderr, clamped to [0,1].
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
    pub method: EstimateMethod,
    pub drift: DriftKind,
    pub shift: f64,
    pub symmetric: bool,
    pub route: RouteKind,
    pub grid_points: Option<usize>,
    pub kl_terms: Option<usize>,
    pub bridge_corrected: bool,
    pub weight_mean: f64,
    pub weight_stderr: f64,
    /// (Σ w h)² / Σ (w h)² over the weighted indicators h.
    pub effective_sample_size: f64,
    pub ess_warning: bool,
    pub seed: u64,
    pub stream_id: u64,
}

impl TailEstimate {
    pub const CSV_HEADER: &'static str = "m,norm,p,r,method,estimate,stderr,n,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.m,
            self.norm.kind(),
            self.norm.p().map(|p| p.to_string()).unwrap_or_default(),
            self.r,
            self.method.as_str(),
            self.estimate,
            self.stderr,
            self.n_samples,
            self.seed
        )
    }

    pub fn relative_stderr(&self) -> f64 {
        self.stderr / self.estimate
    }
}

/// Compensated first and second moments of a weighted statistic and of the weight.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    h: KahanSum,
    h2: KahanSum,
    w: KahanSum,
    w2: KahanSum,
}

impl Moments {
    #[inline]
    fn push(&mut self, h: f64, w: f64) {
        self.n += 1;
        if h != 0.0 {
            self.h.add(h);
            self.h2.add(h * h);
        }
        self.w.add(w);
        self.w2.add(w * w);
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.h.merge(&o.h);
        self.h2.merge(&o.h2);
        self.w.merge(&o.w);
        self.w2.merge(&o.w2);
    }

    fn mean_stderr(sum: &KahanSum, sum2: &KahanSum, n: u64) -> (f64, f64) {
        let nf = n as f64;
        let mean = sum.value() / nf;
        let var = ((sum2.value() - nf * mean * mean) / (nf - 1.0)).max(0.0);
        (mean, (var / nf).sqrt())
    }

    fn stat(&self) -> (f64, f64) {
        Self::mean_stderr(&self.h, &self.h2, self.n)
    }

    fn weight(&self) -> (f64, f64) {
        Self::mean_stderr(&self.w, &self.w2, self.n)
    }

    fn ess(&self) -> f64 {
        let s2 = self.h2.value();
        if s2 > 0.0 {
            self.h.value().powi(2) / s2
        } else {
            0.0
        }
    }
}

fn log_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// Cameron–Martin shift along a direction h with ‖h‖²_H = a²/var, observed
/// through a coordinate whose drift-free law is N(0, var).
#[derive(Debug, Clone, Copy)]
struct Tilt {
    a: f64,
    var: f64,
    symmetric: bool,
}

impl Tilt {
    fn active(&self) -> bool {
        self.a != 0.0
    }

    #[inline]
    fn sign(&self, gen: &mut NormalGen) -> f64 {
        if !self.active() {
            0.0
        } else if self.symmetric && gen.uniform() < 0.5 {
            -1.0
        } else {
            1.0
        }
    }

    /// dP/dQ at a shifted coordinate value.
    #[inline]
    fn weight(&self, coord: f64) -> f64 {
        if !self.active() {
            return 1.0;
        }
        let z = self.a * coord / self.var;
        let base = self.a * self.a / (2.0 * self.var);
        if self.symmetric {
            (base - log_cosh(z)).exp()
        } else {
            (base - z).exp()
        }
    }
}

struct GridPlan {
    sampler: PathSampler,
    len: usize,
    weights: Vec<f64>,
    drift: Vec<f64>,
    dts: Vec<f64>,
    dt_max: f64,
    bridge: bool,
    k11: f64,
}

impl GridPlan {
    fn new(spec: &ProcessSpec, norm_needs_bridge: bool, opts: &McOptions) -> Result<Self> {
        let grid = TimeGrid::uniform(opts.grid_points)?;
        let pts = grid.points();
        let k11 = spec.max_variance();
        let mut prev = 0.0;
        let dts: Vec<f64> = pts
            .iter()
            .map(|&t| {
                let d = t - prev;
                prev = t;
                d
            })
            .collect();
        Ok(Self {
            sampler: PathSampler::state_stepping(spec, &grid)?,
            len: grid.len(),
            weights: trapezoid_weights(pts)?,
            drift: pts.iter().map(|&t| kernel_unchecked(spec, t, 1.0) / k11).collect(),
            dt_max: dts.iter().fold(0.0f64, |a, &d| a.max(d)),
            dts,
            bridge: norm_needs_bridge && spec.m() == 0 && opts.sup_correction == SupCorrection::Bridge,
            k11,
        })
    }

    /// Runs `stat(values, out)` on `n` (possibly shifted) paths and accumulates one
    /// set of moments per output slot.
    fn pass<F>(&self, n: usize, rng: RngStream, tilt: Tilt, slots: usize, stat: F) -> Vec<Moments>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let parts = par_chunks(n, rng, |_, count, gen| {
            let mut buf = vec![0.0; self.len];
            let mut out = vec![0.0; slots];
            let mut acc = vec![Moments::default(); slots];
            for _ in 0..count {
                let sign = tilt.sign(gen);
                self.sampler.fill_xm(gen, &mut buf);
                if tilt.active() {
                    let shift = sign * tilt.a;
                    for (b, d) in buf.iter_mut().zip(&self.drift) {
                        *b += shift * d;
                    }
                }
                let w = tilt.weight(buf[self.len - 1]);
                stat(&buf, &mut out);
                for (a, &h) in acc.iter_mut().zip(&out) {
                    a.push(w * h, w);
                }
            }
            acc
        });
        merge_parts(parts, slots)
    }
}

struct KlPlan {
    scales: Vec<f64>,
}

impl KlPlan {
    fn new(spec: &ProcessSpec, spectrum: &Spectrum, opts: &McOptions) -> Result<Self> {
        if spectrum.m() != spec.m() {
            return domain("spectrum computed for a different order");
        }
        let terms = opts.kl_terms.min(spectrum.significant_terms()).max(1);
        Ok(Self {
            scales: kl_scales(spectrum, terms),
        })
    }

    fn lambda1(&self) -> f64 {
        self.scales[0] * self.scales[0]
    }

    /// Runs `stat(‖c‖², out)` on `n` coefficient vectors, the first one shifted.
    fn pass<F>(&self, n: usize, rng: RngStream, tilt: Tilt, slots: usize, stat: F) -> Vec<Moments>
    where
        F: Fn(f64, &mut [f64]) + Sync,
    {
        let parts = par_chunks(n, rng, |_, count, gen| {
            let mut out = vec![0.0; slots];
            let mut acc = vec![Moments::default(); slots];
            for _ in 0..count {
                let sign = tilt.sign(gen);
                let mut first = 0.0;
                let mut sq = 0.0;
                for (k, s) in self.scales.iter().enumerate() {
                    let mut c = s * gen.normal();
                    if k == 0 {
                        c += sign * tilt.a;
                        first = c;
                    }
                    sq += c * c;
                }
                let w = tilt.weight(first);
                stat(sq, &mut out);
                for (a, &h) in acc.iter_mut().zip(&out) {
                    a.push(w * h, w);
                }
            }
            acc
        });
        merge_parts(parts, slots)
    }

    fn norms(&self, n: usize, rng: RngStream) -> Vec<f64> {
        par_chunks(n, rng, |_, count, gen| {
            (0..count)
                .map(|_| {
                    self.scales
                        .iter()
                        .map(|s| {
                            let c = s * gen.normal();
                            c * c
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .collect::<Vec<f64>>()
        })
        .concat()
    }
}

fn merge_parts(parts: Vec<Vec<Moments>>, slots: usize) -> Vec<Moments> {
    let mut total = vec![Moments::default(); slots];
    for part in &parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    total
}

enum Plan {
    Grid(GridPlan),
    Kl(KlPlan),
}

fn uses_kl(norm: NormSpec, opts: &McOptions) -> bool {
    norm.is_l2() && opts.l2_route == L2Route::Kl
}

fn build_plan(spec: &ProcessSpec, norm: NormSpec, opts: &McOptions) -> Result<Plan> {
    if uses_kl(norm, opts) {
        let owned;
        let spectrum = match opts.spectrum {
            Some(s) => s,
            None => {
                owned = nystrom_spectrum(spec, NystromOptions::default())?;
                &owned
            }
        };
        Ok(Plan::Kl(KlPlan::new(spec, spectrum, opts)?))
    } else {
        Ok(Plan::Grid(GridPlan::new(spec, norm == NormSpec::Sup, opts)?))
    }
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("{name} = {x} must be positive and finite"));
    }
    Ok(())
}

/// Estimate of P{‖X_m‖ > r} with default sampling options.
pub fn mc_tail(
    spec: &ProcessSpec,
    norm: NormSpec,
    r: f64,
    n: usize,
    rng: RngStream,
    is: &ISConfig,
) -> Result<TailEstimate> {
    mc_tail_with(spec, norm, r, n, rng, is, &McOptions::default())
}

pub fn mc_tail_with(
    spec: &ProcessSpec,
    norm: NormSpec,
    r: f64,
    n: usize,
    rng: RngStream,
    is: &ISConfig,
    opts: &McOptions,
) -> Result<TailEstimate> {
    norm.validate()?;
    check_positive("threshold r", r)?;
    is.validate()?;
    if n < MIN_TAIL_SAMPLES {
        return domain(format!("tail estimation needs at least {MIN_TAIL_SAMPLES} paths, got {n}"));
    }
    let a = is.magnitude(r);
    let plan = build_plan(spec, norm, opts)?;
    let (moments, route, grid_points, kl_terms, bridge) = match &plan {
        Plan::Grid(g) => {
            if is.drift == DriftKind::TopEigenfunction {
                return domain("eigenfunction drift needs the L² norm on the Karhunen–Loève route");
            }
            let tilt = Tilt {
                a,
                var: g.k11,
                symmetric: is.symmetric,
            };
            let m = g.pass(n, rng, tilt, 1, |y, out| {
                let v = norm_of(y, norm, &g.weights);
                out[0] = if v > r {
                    1.0
                } else if g.bridge {
                    1.0 - path_stay(y, &g.dts, g.dt_max, r, v)
                } else {
                    0.0
                };
            });
            (m[0], RouteKind::Grid, Some(g.len), None, g.bridge)
        }
        Plan::Kl(k) => {
            if is.drift == DriftKind::Endpoint {
                return domain("endpoint drift needs a grid-evaluated norm");
            }
            let tilt = Tilt {
                a,
                var: k.lambda1(),
                symmetric: is.symmetric,
            };
            let r2 = r * r;
            let m = k.pass(n, rng, tilt, 1, |sq, out| out[0] = if sq > r2 { 1.0 } else { 0.0 });
            (m[0], RouteKind::KarhunenLoeve, None, Some(k.scales.len()), false)
        }
    };
    let (estimate, stderr) = moments.stat();
    let (weight_mean, weight_stderr) = moments.weight();
    let ess = moments.ess();
    Ok(TailEstimate {
        m: spec.m(),
        norm,
        r,
        estimate,
        stderr,
        ci_low: (estimate - 3.0 * stderr).clamp(0.0, 1.0),
        ci_high: (estimate + 3.0 * stderr).clamp(0.0, 1.0),
        n_samples: n,
        method: if is.drift == DriftKind::None {
            EstimateMethod::Plain
        } else {
            EstimateMethod::Importance
        },
        drift: is.drift,
        shift: a,
        symmetric: is.symmetric,
        route,
        grid_points,
        kl_terms,
        bridge_corrected: bridge,
        weight_mean,
        weight_stderr,
        effective_sample_size: ess,
        ess_warning: ess < opts.ess_floor,
        seed: rng.seed,
        stream_id: rng.stream_id,
    })
}

/// Plain-MC tails of several norms evaluated on the same grid paths, so that the
/// pathwise ordering of the norms carries over to the estimates exactly.
pub fn mc_tail_coupled(
    spec: &ProcessSpec,
    norms: &[NormSpec],
    r: f64,
    n: usize,
    rng: RngStream,
    opts: &McOptions,
) -> Result<Vec<TailEstimate>> {
    check_positive("threshold r", r)?;
    for norm in norms {
        norm.validate()?;
    }
    let plan = GridPlan::new(spec, norms.contains(&NormSpec::Sup), opts)?;
    let tilt = Tilt {
        a: 0.0,
        var: 1.0,
        symmetric: true,
    };
    let moments = plan.pass(n, rng, tilt, norms.len(), |y, out| {
        for (o, &norm) in out.iter_mut().zip(norms) {
            let v = norm_of(y, norm, &plan.weights);
            *o = if v > r {
                1.0
            } else if plan.bridge && norm == NormSpec::Sup {
                1.0 - path_stay(y, &plan.dts, plan.dt_max, r, v)
            } else {
                0.0
            };
        }
    });
    Ok(norms
        .iter()
        .zip(&moments)
        .map(|(&norm, mo)| {
            let (estimate, stderr) = mo.stat();
            TailEstimate {
                m: spec.m(),
                norm,
                r,
                estimate,
                stderr,
                ci_low: (estimate - 3.0 * stderr).clamp(0.0, 1.0),
                ci_high: (estimate + 3.0 * stderr).clamp(0.0, 1.0),
                n_samples: n,
                method: EstimateMethod::Plain,
                drift: DriftKind::None,
                shift: 0.0,
                symmetric: true,
                route: RouteKind::Grid,
                grid_points: Some(plan.len),
                kl_terms: None,
                bridge_corrected: plan.bridge && norm == NormSpec::Sup,
                weight_mean: 1.0,
                weight_stderr: 0.0,
                effective_sample_size: mo.ess(),
                ess_warning: mo.ess() < opts.ess_floor,
                seed: rng.seed,
                stream_id: rng.stream_id,
            }
        })
        .collect())
}

/// `n` independent samples of ‖X_m‖ (grid maximum for the sup norm).
pub fn sample_norms(spec: &ProcessSpec, norm: NormSpec, n: usize, rng: RngStream, opts: &McOptions) -> Result<Vec<f64>> {
    norm.validate()?;
    match build_plan(spec, norm, opts)? {
        Plan::Kl(k) => Ok(k.norms(n, rng)),
        Plan::Grid(g) => Ok(par_chunks(n, rng, |_, count, gen| {
            let mut buf = vec![0.0; g.len];
            (0..count)
                .map(|_| {
                    g.sampler.fill_xm(gen, &mut buf);
                    norm_of(&buf, norm, &g.weights)
                })
                .collect::<Vec<f64>>()
        })
        .concat()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

/// Sample mean of ‖X_m‖.
pub fn mc_norm_mean(spec: &ProcessSpec, norm: NormSpec, n: usize, rng: RngStream, opts: &McOptions) -> Result<MeanEstimate> {
    if n < 2 {
        return domain("a mean estimate needs at least two paths");
    }
    let xs = sample_norms(spec, norm, n, rng, opts)?;
    let (mut s, mut s2) = (KahanSum::new(), KahanSum::new());
    for &x in &xs {
        s.add(x);
        s2.add(x * x);
    }
    let (mean, stderr) = Moments::mean_stderr(&s, &s2, n as u64);
    Ok(MeanEstimate {
        mean,
        stderr,
        n_samples: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBallPoint {
    pub eps: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallCurve {
    pub m: usize,
    pub norm: NormSpec,
    pub n_samples: usize,
    pub points: Vec<SmallBallPoint>,
    /// Least-squares slope of log(-log P̂) against log ε.
    pub slope: f64,
    pub intercept: f64,
    /// -2/(2m+1).
    pub predicted_slope: f64,
    pub bridge_corrected: bool,
    pub seed: u64,
    pub stream_id: u64,
}

/// Estimates P{‖X_m‖ ≤ ε} for each ε on shared paths and fits the exponent.
pub fn small_ball_curve(
    spec: &ProcessSpec,
    norm: NormSpec,
    eps_list: &[f64],
    n: usize,
    rng: RngStream,
) -> Result<SmallBallCurve> {
    small_ball_curve_with(spec, norm, eps_list, n, rng, &McOptions::default(), 1.0)
}

/// As [`small_ball_curve`]; points with P̂ above `max_probability` are left out of
/// the fit along with those below 10/n.
pub fn small_ball_curve_with(
    spec: &ProcessSpec,
    norm: NormSpec,
    eps_list: &[f64],
    n: usize,
    rng: RngStream,
    opts: &McOptions,
    max_probability: f64,
) -> Result<SmallBallCurve> {
    norm.validate()?;
    if eps_list.is_empty() {
        return domain("empty ε list");
    }
    for &e in eps_list {
        check_positive("ε", e)?;
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return domain("ε list must be strictly decreasing");
    }
    if n < 2 {
        return domain("small-ball estimation needs at least two paths");
    }
    let k = eps_list.len();
    let plain = Tilt {
        a: 0.0,
        var: 1.0,
        symmetric: true,
    };
    let (moments, bridge) = match build_plan(spec, norm, opts)? {
        Plan::Grid(g) => {
            let m = g.pass(n, rng, plain, k, |y, out| {
                let v = norm_of(y, norm, &g.weights);
                for (o, &e) in out.iter_mut().zip(eps_list) {
                    *o = if v >= e {
                        0.0
                    } else if g.bridge {
                        path_stay(y, &g.dts, g.dt_max, e, v)
                    } else {
                        1.0
                    };
                }
            });
            (m, g.bridge)
        }
        Plan::Kl(kl) => {
            let m = kl.pass(n, rng, plain, k, |sq, out| {
                for (o, &e) in out.iter_mut().zip(eps_list) {
                    *o = if sq <= e * e { 1.0 } else { 0.0 };
                }
            });
            (m, false)
        }
    };
    let floor = 10.0 / n as f64;
    let points: Vec<SmallBallPoint> = eps_list
        .iter()
        .zip(&moments)
        .map(|(&eps, mo)| {
            let (estimate, stderr) = mo.stat();
            SmallBallPoint {
                eps,
                estimate,
                stderr,
                included: estimate >= floor && estimate <= max_probability && estimate < 1.0,
            }
        })
        .collect();
    let (slope, intercept) = fit_small_ball_slope(&points)?;
    Ok(SmallBallCurve {
        m: spec.m(),
        norm,
        n_samples: n,
        points,
        slope,
        intercept,
        predicted_slope: -2.0 / spec.two_m_plus_one() as f64,
        bridge_corrected: bridge,
        seed: rng.seed,
        stream_id: rng.stream_id,
    })
}

/// Ordinary least squares of log(-log P̂) on log ε over the included points.
pub fn fit_small_ball_slope(points: &[SmallBallPoint]) -> Result<(f64, f64)> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.included)
        .map(|p| (p.eps.ln(), (-p.estimate.ln()).ln()))
        .collect();
    if xy.len() < 3 {
        return Err(Error::FitRefused(format!(
            "{} includable points, at least 3 needed",
            xy.len()
        )));
    }
    let nf = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::FitRefused("all included ε coincide".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplaceMethod {
    DirectMc,
    TailIntegral,
}

/// Where the empirical tail was handed over to the asymptotic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpliceRecord {
    pub crossover: f64,
    pub mc_tail: f64,
    pub asymptotic_tail: f64,
    pub ratio: f64,
    /// Fraction of the transform contributed by the asymptotic part.
    pub asymptotic_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceEstimate {
    pub m: usize,
    pub norm: NormSpec,
    pub r: f64,
    pub theta: f64,
    pub method: LaplaceMethod,
    pub value: f64,
    pub log_value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub splice: Option<SpliceRecord>,
    pub seed: u64,
    pub stream_id: u64,
}

type LogTail = Box<dyn Fn(f64) -> Result<f64>>;

fn asymptotic_log_tail(spec: &ProcessSpec, norm: NormSpec, opts: &McOptions) -> Result<LogTail> {
    let spec = *spec;
    match norm {
        NormSpec::Sup => Ok(Box::new(move |x| Ok(asymptotic_tail_sup(&spec, x)?.log_value))),
        NormSpec::Lp { p: 2.0 } => {
            let owned;
            let spectrum = match opts.spectrum {
                Some(s) => s,
                None => {
                    owned = nystrom_spectrum(&spec, NystromOptions::default())?;
                    &owned
                }
            };
            let zc = zolotarev_constants(spectrum, 1e-6)?;
            let lambda1 = spectrum.lambda1();
            Ok(Box::new(move |x| Ok(asymptotic_tail_l2(lambda1, &zc, x)?.log_value)))
        }
        NormSpec::Lp { p } if spec.m() == 0 => Ok(Box::new(move |x| Ok(asymptotic_tail_lp_bm(p, x)?.log_value))),
        NormSpec::Lp { p } => domain(format!("no sharp tail asymptotic for m = {}, p = {p}", spec.m())),
    }
}

/// Estimate of E exp(r ‖X_m‖^θ) with default sampling options.
pub fn laplace_estimate(
    spec: &ProcessSpec,
    norm: NormSpec,
    r: f64,
    theta: f64,
    method: LaplaceMethod,
    n: usize,
    rng: RngStream,
) -> Result<LaplaceEstimate> {
    laplace_estimate_with(spec, norm, r, theta, method, n, rng, &McOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn laplace_estimate_with(
    spec: &ProcessSpec,
    norm: NormSpec,
    r: f64,
    theta: f64,
    method: LaplaceMethod,
    n: usize,
    rng: RngStream,
    opts: &McOptions,
) -> Result<LaplaceEstimate> {
    norm.validate()?;
    if !(1.0..2.0).contains(&theta) {
        return domain(format!("θ = {theta} must lie in [1, 2)"));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return domain(format!("r = {r} must be finite and non-negative"));
    }
    let mut out = LaplaceEstimate {
        m: spec.m(),
        norm,
        r,
        theta,
        method,
        value: 1.0,
        log_value: 0.0,
        stderr: 0.0,
        n_samples: n,
        splice: None,
        seed: rng.seed,
        stream_id: rng.stream_id,
    };
    if r == 0.0 {
        return Ok(out);
    }
    if n < 2 {
        return domain("a Laplace estimate needs at least two paths");
    }
    let mut xs = sample_norms(spec, norm, n, rng, opts)?;
    match method {
        LaplaceMethod::DirectMc => {
            let (mut s, mut s2) = (KahanSum::new(), KahanSum::new());
            for &x in &xs {
                let g = (r * x.powf(theta)).exp();
                s.add(g);
                s2.add(g * g);
            }
            let (mean, stderr) = Moments::mean_stderr(&s, &s2, n as u64);
            out.value = mean;
            out.log_value = mean.ln();
            out.stderr = stderr;
        }
        LaplaceMethod::TailIntegral => {
            let log_tail = asymptotic_log_tail(spec, norm, opts)?;
            xs.sort_by(f64::total_cmp);
            let nf = n as f64;
            let target = SPLICE_RELATIVE_STDERR * SPLICE_RELATIVE_STDERR;
            let k_min = (1..n)
                .find(|&k| (1.0 - k as f64 / nf) / (k as f64) < target)
                .ok_or_else(|| Error::Splice(format!("{n} paths cannot resolve any tail to 10%")))?;
            let x_c = xs[n - 1 - k_min];
            let mc_tail = xs.iter().filter(|&&x| x > x_c).count() as f64 / nf;
            let asym_tail = log_tail(x_c)?.exp();
            let ratio = mc_tail / asym_tail;
            if !(SPLICE_RATIO_WINDOW.0..=SPLICE_RATIO_WINDOW.1).contains(&ratio) {
                return Err(Error::Splice(format!(
                    "empirical tail {mc_tail} and asymptotic {asym_tail} disagree at x = {x_c} (ratio {ratio})"
                )));
            }

            // ∫_0^{x_c} g'(x) P̂(x) dx = mean of g(min(ξ, x_c)) - 1.
            let (mut s, mut s2) = (KahanSum::new(), KahanSum::new());
            for &x in &xs {
                let v = (r * x.min(x_c).powf(theta)).exp_m1();
                s.add(v);
                s2.add(v * v);
            }
            let (body, stderr) = Moments::mean_stderr(&s, &s2, n as u64);

            let log_integrand = |x: f64| -> f64 {
                let lt = log_tail(x).unwrap_or(f64::NEG_INFINITY);
                (r * theta).ln() + (theta - 1.0) * x.ln() + r * x.powf(theta) + lt
            };
            let step = 0.05 * x_c.max(0.1);
            let mut peak = log_integrand(x_c);
            let mut x_hi = x_c;
            for _ in 0..100_000 {
                x_hi += step;
                let v = log_integrand(x_hi);
                peak = peak.max(v);
                if v < peak - 60.0 {
                    break;
                }
            }
            let scaled = |x: f64| (log_integrand(x) - peak).exp();
            let width = x_hi - x_c;
            let integral = adaptive_simpson(&scaled, x_c, x_hi, 1e-13 * width, 40);
            let log_body = body.ln_1p();
            let log_asym = peak + integral.ln();
            let hi = log_body.max(log_asym);
            let log_value = hi + (-(log_body - log_asym).abs()).exp().ln_1p();
            out.log_value = log_value;
            out.value = log_value.exp();
            out.stderr = stderr;
            out.splice = Some(SpliceRecord {
                crossover: x_c,
                mc_tail,
                asymptotic_tail: asym_tail,
                ratio,
                asymptotic_share: (log_asym - log_value).exp(),
            });
        }
    }
    Ok(out)
}
