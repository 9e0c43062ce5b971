//! Command-line front end. The `ibmtail` binary only forwards to [`run`].
//!
//! Each subcommand writes one primary output (CSV or JSON) to `--out` or stdout.
//! With `--out`, a manifest with the configuration and wall time is written next to
//! it as `<out>.manifest.json`. The primary output never contains timings, so two
//! runs with the same configuration produce identical bytes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::estimators::{
    laplace_estimate_with, mc_norm_mean, mc_tail_with, small_ball_curve_with, ISConfig, L2Route, LaplaceMethod,
    McOptions, NormSpec, SupCorrection, TailEstimate, DEFAULT_GRID, DEFAULT_KL_TERMS,
};
use crate::formulas::{
    asymptotic_tail_l2, asymptotic_tail_lp_bm, asymptotic_tail_sup, borell_bound, laplace_asymptotic, thm2_bound,
    LaplaceTarget,
};
use crate::process::{kernel_value, ProcessSpec};
use crate::quadrature::QuadratureRule;
use crate::rng::RngStream;
use crate::simulate::{sample_path_cholesky, sample_path_exact, sample_path_kl, PathSample, TimeGrid};
use crate::spectrum::{
    check_eigen_bounds, dual_ball_variance, nystrom_spectrum, operator_p_norm, zolotarev_constants, NystromOptions,
    Spectrum, DEFAULT_NODES,
};
use crate::verify::{verify, Scale, CRITERIA};

pub const DEFAULT_SEED: u64 = 20240601;

const STREAM_SIMULATE: u64 = 1;
const STREAM_TAIL: u64 = 2;
const STREAM_MEAN: u64 = 3;
const STREAM_SMALL_BALL: u64 = 4;
const STREAM_LAPLACE: u64 = 5;

const ZOLOTAREV_TOL: f64 = 1e-6;
const OPERATOR_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(
    name = "ibmtail",
    version,
    about = "Tail probabilities, small balls and Laplace transforms of integrated Brownian motion"
)]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Covariance kernel K_m(s,t) on all (s,t) pairs.
    Kernel(KernelArgs),
    /// Nyström eigenvalues, eigenvalue bounds and the L² tail constants.
    Spectrum(SpectrumArgs),
    /// Sample paths of X_m and its lower-order integrals.
    Simulate(SimulateArgs),
    /// Monte Carlo estimate of P{‖X_m‖ > r}.
    Tail(TailArgs),
    /// Small-ball probabilities P{‖X_m‖ ≤ ε} and the fitted exponent.
    Smallball(SmallBallArgs),
    /// Estimate of E exp(r ‖X_m‖^θ).
    Laplace(LaplaceArgs),
    /// Monte Carlo tail against the sharp asymptotic and the upper bounds.
    Compare(CompareArgs),
    /// Run the acceptance battery.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    #[arg(long, env = "IBMTAIL_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Sup,
    Lp,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NormArgs {
    #[arg(long, value_enum, default_value_t = NormKind::Sup)]
    pub norm: NormKind,
    /// Exponent of the L^p norm.
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub p: f64,
}

impl NormArgs {
    fn spec(&self) -> Result<NormSpec, CliError> {
        match self.norm {
            NormKind::Sup => Ok(NormSpec::Sup),
            NormKind::Lp => Ok(NormSpec::lp(self.p)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteArg {
    Kl,
    Grid,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SamplingArgs {
    /// Uniform grid points on (0,1] for grid-evaluated norms.
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    /// How the L² norm is computed.
    #[arg(long, value_enum, default_value_t = RouteArg::Kl)]
    pub l2_route: RouteArg,
    #[arg(long, default_value_t = DEFAULT_KL_TERMS)]
    pub kl_terms: usize,
    /// Quadrature nodes of the Nyström spectrum.
    #[arg(long, default_value_t = DEFAULT_NODES)]
    pub nodes: usize,
    /// Use the raw grid maximum for m = 0 instead of the bridge-corrected sup.
    #[arg(long)]
    pub no_bridge: bool,
}

impl SamplingArgs {
    fn options<'a>(&self, spectrum: Option<&'a Spectrum>) -> McOptions<'a> {
        McOptions {
            grid_points: self.grid,
            l2_route: match self.l2_route {
                RouteArg::Kl => L2Route::Kl,
                RouteArg::Grid => L2Route::Grid,
            },
            kl_terms: self.kl_terms,
            sup_correction: if self.no_bridge {
                SupCorrection::None
            } else {
                SupCorrection::Bridge
            },
            spectrum,
            ..McOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IsKind {
    None,
    Endpoint,
    Eigen,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IsArgs {
    /// Importance-sampling drift.
    #[arg(long = "is", value_enum, default_value_t = IsKind::None)]
    pub kind: IsKind,
    /// Drift magnitude; defaults to r.
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<f64>,
    /// Shift in one direction only instead of the symmetric mixture.
    #[arg(long)]
    pub one_sided: bool,
}

impl IsArgs {
    fn config(&self, norm: NormSpec, sampling: &SamplingArgs) -> Result<ISConfig, CliError> {
        let mut is = match self.kind {
            IsKind::None => return Ok(ISConfig::plain()),
            IsKind::Endpoint => ISConfig::endpoint(),
            IsKind::Eigen => {
                if !norm.is_l2() || sampling.l2_route != RouteArg::Kl {
                    return Err(CliError::Usage("--is eigen requires --norm lp --p 2 on the kl route".into()));
                }
                ISConfig::top_eigenfunction()
            }
        };
        if let Some(a) = self.shift {
            is = is.with_shift(a);
        }
        if self.one_sided {
            is = is.one_sided();
        }
        Ok(is)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KernelArgs {
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub s: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub t: Vec<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpectrumArgs {
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    pub nodes: usize,
    /// Report plain Nyström eigenvalues without extrapolation.
    #[arg(long)]
    pub no_richardson: bool,
    /// Number of eigenvalues listed.
    #[arg(long, default_value_t = 20)]
    pub terms: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerArg {
    StateStepping,
    Cholesky,
    KarhunenLoeve,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 1024)]
    pub grid: usize,
    #[arg(long, value_enum, default_value_t = SamplerArg::StateStepping)]
    pub method: SamplerArg,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    pub nodes: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TailArgs {
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[command(flatten)]
    pub norm: NormArgs,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub r: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[command(flatten)]
    pub is: IsArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmallBallArgs {
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[command(flatten)]
    pub norm: NormArgs,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// Points with a larger estimated probability are left out of the fit.
    #[arg(long, default_value_t = 1.0)]
    pub max_probability: f64,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplaceMethodArg {
    DirectMc,
    TailIntegral,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LaplaceArgs {
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[command(flatten)]
    pub norm: NormArgs,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub r: Vec<f64>,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub theta: f64,
    #[arg(long, value_enum, default_value_t = LaplaceMethodArg::TailIntegral)]
    pub method: LaplaceMethodArg,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[command(flatten)]
    pub norm: NormArgs,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub r: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// Constants of the entropy bound.
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c2: f64,
    #[command(flatten)]
    pub is: IsArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleArg {
    Small,
    Full,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = ScaleArg::Full)]
    pub scale: ScaleArg,
    /// Criterion ids; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Vec<u8>,
    #[command(flatten)]
    pub common: Common,
}

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid arguments or parameters outside a routine's domain; exit code 2.
    Usage(String),
    /// Numerical or I/O failure; exit code 1.
    Failure(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(msg) => CliError::Usage(msg),
            other => CliError::Failure(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }

    /// One line: `error: usage: ...` or `error: <library error>`.
    pub fn line(&self) -> String {
        let text = match self {
            CliError::Usage(msg) => format!("error: usage: {msg}"),
            CliError::Failure(e) => format!("error: {e}"),
        };
        text.replace(['\n', '\r'], " ")
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.into())
    }
}

/// Primary output of a command.
struct Output {
    text: String,
    /// False when the run completed but a check inside it failed (verify).
    ok: bool,
}

struct Provenance {
    command: &'static str,
    seed: u64,
    config: Value,
    hash: String,
}

impl Provenance {
    fn new(command: &Command) -> Self {
        let config = serde_json::to_value(command).unwrap_or(Value::Null);
        let canonical = serde_json::to_string(&config).unwrap_or_default();
        let digest = Sha256::digest(canonical.as_bytes());
        let hash = digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Self {
            command: command.name(),
            seed: command.common().seed,
            config,
            hash,
        }
    }

    fn csv_comment(&self) -> String {
        format!(
            "# ibmtail {} command={} seed={} config_sha256={}\n",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.seed,
            self.hash
        )
    }

    fn json(&self, results: Value) -> String {
        let doc = json!({
            "provenance": {
                "tool": "ibmtail",
                "version": env!("CARGO_PKG_VERSION"),
                "command": self.command,
                "seed": self.seed,
                "config_sha256": self.hash,
            },
            "config": self.config,
            "results": results,
        });
        let mut s = serde_json::to_string_pretty(&doc).unwrap_or_default();
        s.push('\n');
        s
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Kernel(_) => "kernel",
            Command::Spectrum(_) => "spectrum",
            Command::Simulate(_) => "simulate",
            Command::Tail(_) => "tail",
            Command::Smallball(_) => "smallball",
            Command::Laplace(_) => "laplace",
            Command::Compare(_) => "compare",
            Command::Verify(_) => "verify",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Kernel(a) => &a.common,
            Command::Spectrum(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Tail(a) => &a.common,
            Command::Smallball(a) => &a.common,
            Command::Laplace(a) => &a.common,
            Command::Compare(a) => &a.common,
            Command::Verify(a) => &a.common,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns the
/// exit code. Errors are reported on stderr as a single line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let rendered = e.render().to_string();
            let first = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).line());
            return 2;
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

/// Runs a parsed command; `Ok(false)` means it completed with failed checks.
pub fn execute(cli: &Cli) -> Result<bool, CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // A second call in the same process fails; the first pool stays in use.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let start = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let prov = Provenance::new(&cli.command);
    let output = match &cli.command {
        Command::Kernel(a) => kernel_cmd(a, &prov)?,
        Command::Spectrum(a) => spectrum_cmd(a, &prov)?,
        Command::Simulate(a) => simulate_cmd(a, &prov)?,
        Command::Tail(a) => tail_cmd(a, &prov)?,
        Command::Smallball(a) => small_ball_cmd(a, &prov)?,
        Command::Laplace(a) => laplace_cmd(a, &prov)?,
        Command::Compare(a) => compare_cmd(a, &prov)?,
        Command::Verify(a) => verify_cmd(a, &prov)?,
    };
    let common = cli.command.common();
    match &common.out {
        Some(path) => {
            write_atomic(path, output.text.as_bytes())?;
            let manifest = json!({
                "tool": "ibmtail",
                "version": env!("CARGO_PKG_VERSION"),
                "command": prov.command,
                "config": prov.config,
                "seed": prov.seed,
                "config_sha256": prov.hash,
                "primary_output": path,
                "format": common.format,
                "threads": rayon::current_num_threads(),
                "started_unix": started_unix,
                "wall_seconds": start.elapsed().as_secs_f64(),
            });
            let mut text = serde_json::to_string_pretty(&manifest).unwrap_or_default();
            text.push('\n');
            write_atomic(&manifest_path(path), text.as_bytes())?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(output.text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(output.ok)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes through a temporary file in the target directory and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::from(e.error))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn json_results<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn spectrum_for(m: &ProcessSpec, nodes: usize) -> Result<Spectrum, CliError> {
    Ok(nystrom_spectrum(m, NystromOptions::nodes(nodes))?)
}

/// Sharp tail asymptotic where one is known.
fn sharp_tail(spec: &ProcessSpec, norm: NormSpec, spectrum: Option<&Spectrum>, r: f64) -> Result<Option<f64>, CliError> {
    Ok(match norm {
        NormSpec::Sup => Some(asymptotic_tail_sup(spec, r)?.value),
        NormSpec::Lp { p: 2.0 } => match spectrum {
            Some(s) => {
                let zc = zolotarev_constants(s, ZOLOTAREV_TOL)?;
                Some(asymptotic_tail_l2(s.lambda1(), &zc, r)?.value)
            }
            None => None,
        },
        NormSpec::Lp { p } if spec.m() == 0 => Some(asymptotic_tail_lp_bm(p, r)?.value),
        NormSpec::Lp { .. } => None,
    })
}

fn check_r(r: &[f64]) -> Result<(), CliError> {
    match r.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        Some(x) => Err(CliError::Usage(format!("r = {x} must be finite and positive"))),
        None => Ok(()),
    }
}

fn kernel_cmd(a: &KernelArgs, prov: &Provenance) -> Result<Output, CliError> {
    let spec = ProcessSpec::new(a.m)?;
    let mut rows = Vec::with_capacity(a.s.len() * a.t.len());
    for &s in &a.s {
        for &t in &a.t {
            rows.push((s, t, kernel_value(&spec, s, t)?));
        }
    }
    let text = match a.common.format {
        Format::Csv => {
            let mut out = prov.csv_comment();
            out.push_str("m,s,t,value\n");
            for (s, t, v) in &rows {
                let _ = writeln!(out, "{},{s},{t},{v}", a.m);
            }
            out
        }
        Format::Json => prov.json(Value::Array(
            rows.iter().map(|(s, t, v)| json!({"m": a.m, "s": s, "t": t, "value": v})).collect(),
        )),
    };
    Ok(Output { text, ok: true })
}

fn spectrum_cmd(a: &SpectrumArgs, prov: &Provenance) -> Result<Output, CliError> {
    let spec = ProcessSpec::new(a.m)?;
    let spectrum = nystrom_spectrum(
        &spec,
        NystromOptions {
            nodes: a.nodes,
            richardson: !a.no_richardson,
        },
    )?;
    let bounds = check_eigen_bounds(&spec, &spectrum)?;
    let zc = zolotarev_constants(&spectrum, ZOLOTAREV_TOL)?;
    let shown = a.terms.min(spectrum.len());
    let text = match a.common.format {
        Format::Csv => {
            let mut out = prov.csv_comment();
            let _ = writeln!(
                out,
                "# lambda1_lower={} lambda1_upper={} c_bar={} c_lambda={}",
                bounds.lower, bounds.upper, zc.c_bar, zc.c_lambda
            );
            out.push_str("m,k,eigenvalue,raw_eigenvalue\n");
            for k in 0..shown {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    a.m,
                    k + 1,
                    spectrum.eigenvalue(k),
                    spectrum.raw_eigenvalues()[k]
                );
            }
            out
        }
        Format::Json => {
            let mut summary = spectrum.summary();
            summary.eigenvalues.truncate(shown);
            prov.json(json!({
                "spectrum": summary,
                "bounds": bounds,
                "zolotarev": zc,
            }))
        }
    };
    Ok(Output { text, ok: true })
}

fn simulate_cmd(a: &SimulateArgs, prov: &Provenance) -> Result<Output, CliError> {
    let spec = ProcessSpec::new(a.m)?;
    let grid = TimeGrid::uniform(a.grid)?;
    if a.paths == 0 {
        return Err(CliError::Usage("--paths must be at least 1".into()));
    }
    let spectrum = match a.method {
        SamplerArg::KarhunenLoeve => Some(spectrum_for(&spec, a.nodes)?),
        _ => None,
    };
    let base = RngStream::new(a.common.seed, STREAM_SIMULATE);
    let mut paths: Vec<PathSample> = Vec::with_capacity(a.paths);
    for i in 0..a.paths {
        let rng = base.substream(i as u64);
        paths.push(match (a.method, &spectrum) {
            (SamplerArg::StateStepping, _) => sample_path_exact(&spec, &grid, rng)?,
            (SamplerArg::Cholesky, _) => sample_path_cholesky(&spec, &grid, rng)?,
            (SamplerArg::KarhunenLoeve, Some(s)) => sample_path_kl(&spec, &grid, s, rng)?,
            (SamplerArg::KarhunenLoeve, None) => unreachable!("spectrum computed above"),
        });
    }
    let text = match a.common.format {
        Format::Csv => {
            let mut out = prov.csv_comment();
            for (i, path) in paths.iter().enumerate() {
                let block = path.to_csv(a.m);
                let mut lines = block.lines();
                if i == 0 {
                    let _ = writeln!(out, "path,{}", lines.next().unwrap_or("t"));
                } else {
                    lines.next();
                }
                for line in lines {
                    let _ = writeln!(out, "{i},{line}");
                }
            }
            out
        }
        Format::Json => prov.json(json_results(&paths)),
    };
    Ok(Output { text, ok: true })
}

/// Random stream of the `tail` and `compare` estimates at level r.
pub fn tail_stream(seed: u64, r: f64) -> RngStream {
    RngStream::new(seed, STREAM_TAIL).substream(r.to_bits())
}

fn tail_cmd(a: &TailArgs, prov: &Provenance) -> Result<Output, CliError> {
    let spec = ProcessSpec::new(a.m)?;
    let norm = a.norm.spec()?;
    check_r(&a.r)?;
    let is = a.is.config(norm, &a.sampling)?;
    let spectrum = if norm.is_l2() {
        Some(spectrum_for(&spec, a.sampling.nodes)?)
    } else {
        None
    };
    let opts = a.sampling.options(spectrum.as_ref());
    let mut rows = Vec::with_capacity(a.r.len());
    for &r in &a.r {
        let est = mc_tail_with(&spec, norm, r, a.n, tail_stream(a.common.seed, r), &is, &opts)?;
        let asym = sharp_tail(&spec, norm, spectrum.as_ref(), r)?;
        rows.push((est, asym));
    }
    let text = match a.common.format {
        Format::Csv => {
            let mut out = prov.csv_comment();
            let _ = writeln!(out, "{},asymptotic", TailEstimate::CSV_HEADER);
            for (est, asym) in &rows {
                let _ = writeln!(out, "{},{}", est.csv_row(), opt(*asym));
            }
            out
        }
        Format::Json => prov.json(Value::Array(
            rows.iter()
                .map(|(est, asym)| json!({"estimate": est, "asymptotic": asym}))
                .collect(),
        )),
    };
    Ok(Output { text, ok: true })
}

fn small_ball_cmd(a: &SmallBallArgs, prov: &Provenance) -> Result<Output, CliError> {
    let spec = ProcessSpec::new(a.m)?;
    let norm = a.norm.spec()?;
    let spectrum = if norm.is_l2() {
        Some(spectrum_for(&spec, a.sampling.nodes)?)
    } else {
        None
    };
    let opts = a.sampling.options(spectrum.as_ref());
    let rng = RngStream::new(a.common.seed, STREAM_SMALL_BALL);
    let curve = small_ball_curve_with(&spec, norm, &a.eps, a.n, rng, &opts, a.max_probability)?;
    let text = match a.common.format {
        Format::Csv => {
            let mut out = prov.csv_comment();
            let _ = writeln!(
                out,
                "# slope={} intercept={} predicted_slope={}",
                curve.slope, curve.intercept, curve.predicted_slope
            );
            out.push_str("m,norm,p,eps,estimate,stderr,included,n,seed\n");
            for pt in &curve.points {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    a.m,
                    norm.kind(),
                    opt(norm.p()),
                    pt.eps,
                    pt.estimate,
                    pt.stderr,
                    pt.included,
                    a.n,
                    a.common.seed
                );
            }
            out
        }
        Format::Json => prov.json(json_results(&curve)),
    };
    Ok(Output { text, ok: true })
}

fn laplace_cmd(a: &LaplaceArgs, prov: &Provenance) -> Result<Output, CliError> {
    let spec = ProcessSpec::new(a.m)?;
    let norm = a.norm.spec()?;
    let method = match a.method {
        LaplaceMethodArg::DirectMc => LaplaceMethod::DirectMc,
        LaplaceMethodArg::TailIntegral => LaplaceMethod::TailIntegral,
    };
    let spectrum = if norm.is_l2() {
        Some(spectrum_for(&spec, a.sampling.nodes)?)
    } else {
        None
    };
    let target = match (norm, &spectrum) {
        (NormSpec::Sup, _) => Some(LaplaceTarget::Sup),
        (NormSpec::Lp { .. }, Some(s)) => {
            let zc = zolotarev_constants(s, ZOLOTAREV_TOL)?;
            Some(LaplaceTarget::L2 {
                lambda1: s.lambda1(),
                c_lambda: zc.c_lambda,
            })
        }
        _ => None,
    };
    let opts = a.sampling.options(spectrum.as_ref());
    let mut rows = Vec::with_capacity(a.r.len());
    for &r in &a.r {
        let rng = RngStream::new(a.common.seed, STREAM_LAPLACE).substream(r.to_bits());
        let est = laplace_estimate_with(&spec, norm, r, a.theta, method, a.n, rng, &opts)?;
        let asym = match target {
            Some(t) if r > 0.0 => Some(laplace_asymptotic(&spec, t, a.theta, r)?),
            _ => None,
        };
        rows.push((est, asym));
    }
    let text = match a.common.format {
        Format::Csv => {
            let mut out = prov.csv_comment();
            out.push_str("m,norm,p,r,theta,method,estimate,log_estimate,stderr,n,seed,asymptotic_log,crossover\n");
            for (est, asym) in &rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    a.m,
                    norm.kind(),
                    opt(norm.p()),
                    est.r,
                    est.theta,
                    a.method.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default(),
                    est.value,
                    est.log_value,
                    est.stderr,
                    est.n_samples,
                    a.common.seed,
                    opt(*asym),
                    opt(est.splice.map(|s| s.crossover)),
                );
            }
            out
        }
        Format::Json => prov.json(Value::Array(
            rows.iter()
                .map(|(est, asym)| json!({"estimate": est, "asymptotic_log": asym}))
                .collect(),
        )),
    };
    Ok(Output { text, ok: true })
}

#[derive(Debug, Clone, Serialize)]
struct CompareRow {
    r: f64,
    mc_estimate: f64,
    mc_stderr: f64,
    asymptotic: Option<f64>,
    borell: Option<f64>,
    thm2: Option<f64>,
    ratio_mc_asym: Option<f64>,
}

fn compare_cmd(a: &CompareArgs, prov: &Provenance) -> Result<Output, CliError> {
    let spec = ProcessSpec::new(a.m)?;
    let norm = a.norm.spec()?;
    check_r(&a.r)?;
    let is = a.is.config(norm, &a.sampling)?;
    let spectrum = if norm.is_l2() {
        Some(spectrum_for(&spec, a.sampling.nodes)?)
    } else {
        None
    };
    let opts = a.sampling.options(spectrum.as_ref());
    let mean = mc_norm_mean(&spec, norm, a.n, RngStream::new(a.common.seed, STREAM_MEAN), &opts)?;
    // σ_T² and the operator norm entering the entropy bound.
    let (sigma_sq, op_norm) = match norm {
        NormSpec::Sup => (spec.max_variance(), None),
        NormSpec::Lp { p } => {
            let rule = QuadratureRule::gauss_legendre(a.sampling.nodes)?;
            let sigma_sq = match &spectrum {
                Some(s) => s.lambda1(),
                None => dual_ball_variance(&spec, p, &rule, OPERATOR_TOL)?,
            };
            (sigma_sq, Some(operator_p_norm(&spec, p, &rule, OPERATOR_TOL)?.value))
        }
    };
    let mut rows = Vec::with_capacity(a.r.len());
    for &r in &a.r {
        let est = mc_tail_with(&spec, norm, r, a.n, tail_stream(a.common.seed, r), &is, &opts)?;
        let asymptotic = sharp_tail(&spec, norm, spectrum.as_ref(), r)?;
        let borell = if r > mean.mean {
            Some(borell_bound(r, mean.mean, sigma_sq)?)
        } else {
            None
        };
        let thm2 = match (norm, op_norm) {
            (NormSpec::Lp { p }, Some(op)) => Some(thm2_bound(&spec, p, r, a.c1, a.c2, op)?),
            _ => None,
        };
        rows.push(CompareRow {
            r,
            mc_estimate: est.estimate,
            mc_stderr: est.stderr,
            asymptotic,
            borell,
            thm2,
            ratio_mc_asym: asymptotic.map(|x| est.estimate / x),
        });
    }
    let text = match a.common.format {
        Format::Csv => {
            let mut out = prov.csv_comment();
            let _ = writeln!(out, "# mean_norm={} sigma_sq={}", mean.mean, sigma_sq);
            out.push_str("r,mc_estimate,mc_stderr,asymptotic,borell,thm2,ratio_mc_asym\n");
            for row in &rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    row.r,
                    row.mc_estimate,
                    row.mc_stderr,
                    opt(row.asymptotic),
                    opt(row.borell),
                    opt(row.thm2),
                    opt(row.ratio_mc_asym)
                );
            }
            out
        }
        Format::Json => prov.json(json!({
            "mean_norm": mean,
            "sigma_sq": sigma_sq,
            "operator_norm": op_norm,
            "rows": rows,
        })),
    };
    Ok(Output { text, ok: true })
}

fn verify_cmd(a: &VerifyArgs, prov: &Provenance) -> Result<Output, CliError> {
    let ids: Vec<u8> = if a.criteria.is_empty() {
        CRITERIA.iter().map(|(id, _)| *id).collect()
    } else {
        a.criteria.clone()
    };
    let scale = match a.scale {
        ScaleArg::Small => Scale::Small,
        ScaleArg::Full => Scale::Full,
    };
    let (report, seconds) = verify(&ids, scale, a.common.seed)?;
    eprint!("{}", report.table(Some(&seconds)));
    let text = match a.common.format {
        Format::Csv => {
            let mut out = prov.csv_comment();
            out.push_str(&report.to_csv());
            out
        }
        Format::Json => prov.json(json_results(&report)),
    };
    Ok(Output {
        text,
        ok: report.passed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("ibmtail").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn config_hash_ignores_output_path() {
        let a = Provenance::new(&parse(&["tail", "--r", "2", "--out", "a.csv"]).command);
        let b = Provenance::new(&parse(&["tail", "--r", "2", "--out", "b.csv"]).command);
        let c = Provenance::new(&parse(&["tail", "--r", "3"]).command);
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_eq!(a.hash.len(), 64);
    }

    #[test]
    fn domain_errors_are_usage_errors() {
        assert_eq!(CliError::from(Error::Domain("x".into())).exit_code(), 2);
        let e = CliError::from(Error::SpectralGap {
            lambda1: 1.0,
            lambda2: 1.0,
        });
        assert_eq!(e.exit_code(), 1);
        assert!(!CliError::Usage("a\nb".into()).line().contains('\n'));
    }

    #[test]
    fn eigen_drift_needs_l2() {
        let cli = parse(&["tail", "--r", "2", "--is", "eigen"]);
        let Command::Tail(a) = &cli.command else { unreachable!() };
        let err = a.is.config(NormSpec::Sup, &a.sampling).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(a.is.config(NormSpec::l2(), &a.sampling).is_ok());
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("/tmp/x.csv")), PathBuf::from("/tmp/x.csv.manifest.json"));
    }

    #[test]
    fn kernel_csv_rows() {
        let cli = parse(&["kernel", "--m", "0", "--s", "0.2,0.5", "--t", "0.3"]);
        let Command::Kernel(a) = &cli.command else { unreachable!() };
        let out = kernel_cmd(a, &Provenance::new(&cli.command)).unwrap();
        let lines: Vec<&str> = out.text.lines().collect();
        assert!(lines[0].starts_with("# ibmtail"));
        assert_eq!(lines[1], "m,s,t,value");
        assert_eq!(lines[2], "0,0.2,0.3,0.2");
        assert_eq!(lines[3], "0,0.5,0.3,0.3");
    }
}
