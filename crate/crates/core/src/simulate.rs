//! Exact finite-dimensional sampling of X_m.
//!
//! Three interchangeable samplers produce the same Gaussian law on a grid:
//! exact stepping of the state vector (X_0, ..., X_m), a dense Cholesky factor of
//! the kernel matrix, and the Karhunen–Loève expansion from a Nyström spectrum.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::linalg::cholesky;
use crate::process::{kernel_unchecked, state_transition, ProcessSpec};
use crate::rng::{NormalGen, RngStream};
use crate::spectrum::Spectrum;

/// Paths per chunk of the fixed work partition. Chunk `c` always draws from
/// generator `c` of the stream, so results do not depend on the number of workers.
pub const PATH_CHUNK: usize = 1024;

/// Upper limit on grid size for the dense Cholesky sampler.
pub const CHOLESKY_GRID_CAP: usize = 4096;

/// Strictly increasing times in [0,1] ending exactly at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return domain("time grid is empty");
        }
        if points[0] < 0.0 {
            return domain("time grid starts before 0");
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("time grid must be strictly increasing");
        }
        if *points.last().unwrap() != 1.0 {
            return domain("time grid must end exactly at t = 1");
        }
        Ok(Self { points })
    }

    /// {1/n, 2/n, ..., 1}; the origin contributes the zero state implicitly.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return domain("uniform grid needs at least one point");
        }
        let mut points: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64).collect();
        points[n - 1] = 1.0;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMethod {
    StateStepping,
    Cholesky,
    KarhunenLoeve,
}

impl SamplingMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMethod::StateStepping => "state-stepping",
            SamplingMethod::Cholesky => "cholesky",
            SamplingMethod::KarhunenLoeve => "karhunen-loeve",
        }
    }
}

/// One sampled trajectory on a grid.
///
/// State stepping records the whole state (X_0, ..., X_m) per grid point; the other
/// samplers only produce X_m, stored as a single column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub grid: TimeGrid,
    /// Row-major `grid.len() × width` matrix.
    pub states: Vec<f64>,
    pub width: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub method: SamplingMethod,
}

impl PathSample {
    /// X_m at each grid point.
    pub fn xm(&self) -> Vec<f64> {
        self.states
            .chunks_exact(self.width)
            .map(|row| row[self.width - 1])
            .collect()
    }

    /// CSV block with header `t,x0,...,xm`. Components the sampler did not
    /// produce are left empty.
    pub fn to_csv(&self, m: usize) -> String {
        let mut out = String::from("t");
        for k in 0..=m {
            let _ = write!(out, ",x{k}");
        }
        out.push('\n');
        for (i, &t) in self.grid.points().iter().enumerate() {
            let _ = write!(out, "{t}");
            let row = &self.states[i * self.width..(i + 1) * self.width];
            for k in 0..=m {
                let offset = k as isize - (m + 1 - self.width) as isize;
                if offset >= 0 {
                    let _ = write!(out, ",{}", row[offset as usize]);
                } else {
                    out.push(',');
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct StepKernel {
    h: f64,
    transition: Vec<f64>,
    chol: Vec<f64>,
}

/// A sampler prepared for one (process, grid, method) triple and reusable
/// across paths.
#[derive(Debug, Clone)]
pub enum PathSampler {
    StateStepping {
        dim: usize,
        kernels: Vec<StepKernel>,
        /// Index into `kernels` for each grid interval, the first one starting at 0.
        steps: Vec<usize>,
    },
    Cholesky {
        /// Grid points at t = 0 carry the zero state.
        zeros: usize,
        factor: DMatrix<f64>,
    },
    KarhunenLoeve {
        basis: DMatrix<f64>,
    },
}

impl PathSampler {
    pub fn state_stepping(spec: &ProcessSpec, grid: &TimeGrid) -> Result<Self> {
        let dim = spec.m() + 1;
        let mut kernels: Vec<StepKernel> = Vec::new();
        let mut steps = Vec::with_capacity(grid.len());
        let mut prev = 0.0;
        for &t in grid.points() {
            let h = t - prev;
            prev = t;
            if h == 0.0 {
                // Only possible for a leading t = 0 point.
                steps.push(usize::MAX);
                continue;
            }
            let found = kernels.iter().position(|k| (k.h - h).abs() <= 1e-15 * h);
            let idx = match found {
                Some(i) => i,
                None => {
                    let st = state_transition(spec, h)?;
                    kernels.push(StepKernel {
                        h,
                        transition: st.transition.transpose().as_slice().to_vec(),
                        chol: st.noise_chol.transpose().as_slice().to_vec(),
                    });
                    kernels.len() - 1
                }
            };
            steps.push(idx);
        }
        Ok(PathSampler::StateStepping { dim, kernels, steps })
    }

    pub fn cholesky(spec: &ProcessSpec, grid: &TimeGrid) -> Result<Self> {
        if grid.len() > CHOLESKY_GRID_CAP {
            return domain(format!(
                "Cholesky sampler limited to {CHOLESKY_GRID_CAP} grid points, got {}",
                grid.len()
            ));
        }
        let zeros = grid.points().iter().take_while(|&&t| t == 0.0).count();
        let pts = &grid.points()[zeros..];
        let n = pts.len();
        let sigma = DMatrix::from_fn(n, n, |i, j| kernel_unchecked(spec, pts[i], pts[j]));
        let factor = cholesky(&sigma)?;
        Ok(PathSampler::Cholesky { zeros, factor })
    }

    pub fn karhunen_loeve(spec: &ProcessSpec, grid: &TimeGrid, spectrum: &Spectrum, terms: usize) -> Result<Self> {
        let basis = spectrum.kl_basis(spec, grid.points(), terms)?;
        Ok(PathSampler::KarhunenLoeve { basis })
    }

    pub fn new(
        spec: &ProcessSpec,
        grid: &TimeGrid,
        method: SamplingMethod,
        spectrum: Option<&Spectrum>,
    ) -> Result<Self> {
        match method {
            SamplingMethod::StateStepping => Self::state_stepping(spec, grid),
            SamplingMethod::Cholesky => Self::cholesky(spec, grid),
            SamplingMethod::KarhunenLoeve => match spectrum {
                Some(s) => Self::karhunen_loeve(spec, grid, s, s.len()),
                None => domain("Karhunen–Loève sampling needs a spectrum"),
            },
        }
    }

    pub fn method(&self) -> SamplingMethod {
        match self {
            PathSampler::StateStepping { .. } => SamplingMethod::StateStepping,
            PathSampler::Cholesky { .. } => SamplingMethod::Cholesky,
            PathSampler::KarhunenLoeve { .. } => SamplingMethod::KarhunenLoeve,
        }
    }

    /// Columns stored per grid point by [`fill_states`](Self::fill_states).
    pub fn width(&self) -> usize {
        match self {
            PathSampler::StateStepping { dim, .. } => *dim,
            _ => 1,
        }
    }

    /// Writes one path into `out` (`grid.len() × width`, row-major).
    pub fn fill_states(&self, gen: &mut NormalGen, out: &mut [f64]) {
        match self {
            PathSampler::StateStepping { dim, kernels, steps } => {
                let d = *dim;
                let mut state = [0.0f64; 21];
                let mut z = [0.0f64; 21];
                let mut next = [0.0f64; 21];
                for (i, &s) in steps.iter().enumerate() {
                    if s != usize::MAX {
                        let k = &kernels[s];
                        for zj in z.iter_mut().take(d) {
                            *zj = gen.normal();
                        }
                        for (r, nr) in next.iter_mut().enumerate().take(d) {
                            let mut acc = 0.0;
                            let row_t = &k.transition[r * d..r * d + r + 1];
                            let row_l = &k.chol[r * d..r * d + r + 1];
                            for c in 0..=r {
                                acc += row_t[c] * state[c] + row_l[c] * z[c];
                            }
                            *nr = acc;
                        }
                        state[..d].copy_from_slice(&next[..d]);
                    }
                    out[i * d..(i + 1) * d].copy_from_slice(&state[..d]);
                }
            }
            _ => self.fill_xm(gen, out),
        }
    }

    /// Writes X_m at each grid point into `out`.
    pub fn fill_xm(&self, gen: &mut NormalGen, out: &mut [f64]) {
        match self {
            PathSampler::StateStepping { dim, kernels, steps } => {
                let d = *dim;
                if d == 1 {
                    let mut x = 0.0;
                    for (i, &s) in steps.iter().enumerate() {
                        if s != usize::MAX {
                            x += kernels[s].chol[0] * gen.normal();
                        }
                        out[i] = x;
                    }
                    return;
                }
                let mut state = [0.0f64; 21];
                let mut z = [0.0f64; 21];
                let mut next = [0.0f64; 21];
                for (i, &s) in steps.iter().enumerate() {
                    if s != usize::MAX {
                        let k = &kernels[s];
                        for zj in z.iter_mut().take(d) {
                            *zj = gen.normal();
                        }
                        for (r, nr) in next.iter_mut().enumerate().take(d) {
                            let mut acc = 0.0;
                            for c in 0..=r {
                                acc += k.transition[r * d + c] * state[c] + k.chol[r * d + c] * z[c];
                            }
                            *nr = acc;
                        }
                        state[..d].copy_from_slice(&next[..d]);
                    }
                    out[i] = state[d - 1];
                }
            }
            PathSampler::Cholesky { zeros, factor } => {
                let n = factor.nrows();
                out[..*zeros].iter_mut().for_each(|x| *x = 0.0);
                let mut z = vec![0.0; n];
                gen.fill_normal(&mut z);
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, zj) in z.iter().enumerate().take(i + 1) {
                        acc += factor[(i, j)] * zj;
                    }
                    out[zeros + i] = acc;
                }
            }
            PathSampler::KarhunenLoeve { basis } => {
                let terms = basis.ncols();
                let mut z = vec![0.0; terms];
                gen.fill_normal(&mut z);
                for (i, o) in out.iter_mut().enumerate().take(basis.nrows()) {
                    let mut acc = 0.0;
                    for (k, zk) in z.iter().enumerate() {
                        acc += basis[(i, k)] * zk;
                    }
                    *o = acc;
                }
            }
        }
    }
}

fn single_path(sampler: &PathSampler, grid: &TimeGrid, rng: RngStream) -> PathSample {
    let width = sampler.width();
    let mut states = vec![0.0; grid.len() * width];
    let mut gen = rng.generator(0);
    sampler.fill_states(&mut gen, &mut states);
    PathSample {
        grid: grid.clone(),
        states,
        width,
        seed: rng.seed,
        stream_id: rng.stream_id,
        method: sampler.method(),
    }
}

/// One path by exact stepping of the state vector. The initial state at t_0 is
/// the exact law started from zero at time 0.
pub fn sample_path_exact(spec: &ProcessSpec, grid: &TimeGrid, rng: RngStream) -> Result<PathSample> {
    let sampler = PathSampler::state_stepping(spec, grid)?;
    Ok(single_path(&sampler, grid, rng))
}

/// One path of X_m drawn as N(0, Σ) with Σ the kernel matrix on the grid.
pub fn sample_path_cholesky(spec: &ProcessSpec, grid: &TimeGrid, rng: RngStream) -> Result<PathSample> {
    let sampler = PathSampler::cholesky(spec, grid)?;
    Ok(single_path(&sampler, grid, rng))
}

/// One path of X_m from the Karhunen–Loève expansion.
pub fn sample_path_kl(spec: &ProcessSpec, grid: &TimeGrid, spectrum: &Spectrum, rng: RngStream) -> Result<PathSample> {
    let sampler = PathSampler::karhunen_loeve(spec, grid, spectrum, spectrum.len())?;
    Ok(single_path(&sampler, grid, rng))
}

/// KL coefficients sqrt(λ_n) Z_n for n = 1..=n_terms. Their squared l² norm is the
/// squared L² norm of the (truncated) path.
pub fn sample_kl(spectrum: &Spectrum, n_terms: usize, rng: RngStream) -> Result<Vec<f64>> {
    if n_terms > spectrum.len() {
        return domain(format!(
            "requested {n_terms} KL terms from a spectrum of length {}",
            spectrum.len()
        ));
    }
    let mut gen = rng.generator(0);
    Ok(fill_kl(spectrum, n_terms, &mut gen))
}

pub(crate) fn kl_scales(spectrum: &Spectrum, n_terms: usize) -> Vec<f64> {
    spectrum.raw_eigenvalues()[..n_terms].iter().map(|l| l.sqrt()).collect()
}

fn fill_kl(spectrum: &Spectrum, n_terms: usize, gen: &mut NormalGen) -> Vec<f64> {
    kl_scales(spectrum, n_terms).into_iter().map(|s| s * gen.normal()).collect()
}

/// Runs `work(chunk_index, paths_in_chunk, generator)` over the fixed partition of
/// `n` paths and returns the per-chunk results in chunk order.
pub fn par_chunks<T, F>(n: usize, rng: RngStream, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize, &mut NormalGen) -> T + Sync,
{
    let chunks = n.div_ceil(PATH_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = PATH_CHUNK.min(n - c * PATH_CHUNK);
            let mut gen = rng.generator(c as u64);
            work(c, count, &mut gen)
        })
        .collect()
}

/// X_m on the grid for `n` paths, row-major `n × grid.len()`.
pub fn sample_xm_matrix(sampler: &PathSampler, grid_len: usize, n: usize, rng: RngStream) -> Vec<f64> {
    let parts = par_chunks(n, rng, |_, count, gen| {
        let mut block = vec![0.0; count * grid_len];
        for row in block.chunks_exact_mut(grid_len) {
            sampler.fill_xm(gen, row);
        }
        block
    });
    parts.concat()
}

/// `n` KL coefficient vectors, row-major `n × n_terms`.
pub fn sample_kl_matrix(spectrum: &Spectrum, n_terms: usize, n: usize, rng: RngStream) -> Result<Vec<f64>> {
    if n_terms > spectrum.len() {
        return domain("more KL terms than eigenvalues");
    }
    let parts = par_chunks(n, rng, |_, count, gen| {
        let mut block = Vec::with_capacity(count * n_terms);
        for _ in 0..count {
            block.extend(fill_kl(spectrum, n_terms, gen));
        }
        block
    });
    Ok(parts.concat())
}
