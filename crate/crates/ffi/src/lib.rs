//! C ABI over the `ibmtail` library.
//!
//! Every fallible function returns an [`IbmtailStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and can be
//! copied out with [`ibmtail_last_error`]. Spectra are opaque handles created by
//! [`ibmtail_spectrum_new`] and released by [`ibmtail_spectrum_free`].
//!
//! The header `include/ibmtail.h` is generated from this file at build time.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use ibmtail::estimators::{mc_tail_with, ISConfig, McOptions, NormSpec};
use ibmtail::formulas::{asymptotic_tail_l2, asymptotic_tail_sup, reflection_tail_bm};
use ibmtail::spectrum::zolotarev_constants;
use ibmtail::{kernel_value, nystrom_spectrum, Error, NystromOptions, ProcessSpec, Spectrum};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IbmtailStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument outside the routine's domain.
    Domain = 2,
    /// Factorization, eigensolver, convergence or fit failure.
    Numeric = 3,
    Io = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IbmtailNorm {
    Sup = 0,
    Lp = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IbmtailDrift {
    None = 0,
    Endpoint = 1,
    /// Top eigenfunction; L² norm only.
    TopEigenfunction = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IbmtailTailEstimate {
    pub estimate: f64,
    /// Standard error of the estimate.
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: u64,
    pub effective_sample_size: f64,
    pub ess_warning: bool,
}

/// Covariance spectrum of X_m.
pub struct IbmtailSpectrum {
    spectrum: Spectrum,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure {
    status: IbmtailStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Domain(_) => IbmtailStatus::Domain,
            Error::Io(_) => IbmtailStatus::Io,
            _ => IbmtailStatus::Numeric,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

fn null(name: &str) -> Failure {
    Failure {
        status: IbmtailStatus::NullPointer,
        message: format!("null pointer passed as {name}"),
    }
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> IbmtailStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            IbmtailStatus::Ok
        }
        Ok(Err(fail)) => {
            set_error(fail.message);
            fail.status
        }
        Err(payload) => {
            let text = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown".into());
            set_error(format!("panic: {text}"));
            IbmtailStatus::Panic
        }
    }
}

unsafe fn write<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn handle<'a>(h: *const IbmtailSpectrum) -> Result<&'a IbmtailSpectrum, Failure> {
    h.as_ref().ok_or_else(|| null("spectrum handle"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ibmtail_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the message of the last failed call on this thread into `buf`
/// (truncated, always NUL-terminated when `len > 0`). Returns the full message
/// length in bytes, 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ibmtail_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// K_m(s,t) = Cov(X_m(s), X_m(t)).
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ibmtail_kernel(m: u32, s: f64, t: f64, out: *mut f64) -> IbmtailStatus {
    guard(|| {
        let spec = ProcessSpec::new(m as usize)?;
        write(out, kernel_value(&spec, s, t)?, "out")
    })
}

/// Sharp asymptotic of P{sup |X_m| > r}.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ibmtail_asymptotic_tail_sup(m: u32, r: f64, out: *mut f64) -> IbmtailStatus {
    guard(|| {
        let spec = ProcessSpec::new(m as usize)?;
        write(out, asymptotic_tail_sup(&spec, r)?.value, "out")
    })
}

/// Exact P{sup_{[0,1]} |W| > r} for Brownian motion.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ibmtail_reflection_tail_bm(r: f64, out: *mut f64) -> IbmtailStatus {
    guard(|| write(out, reflection_tail_bm(r)?, "out"))
}

/// Computes the Nyström spectrum of X_m on `nodes` Gauss–Legendre nodes.
/// The handle written to `out` must be released with [`ibmtail_spectrum_free`].
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ibmtail_spectrum_new(
    m: u32,
    nodes: usize,
    richardson: bool,
    out: *mut *mut IbmtailSpectrum,
) -> IbmtailStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = ProcessSpec::new(m as usize)?;
        let spectrum = nystrom_spectrum(&spec, NystromOptions { nodes, richardson })?;
        out.write(Box::into_raw(Box::new(IbmtailSpectrum { spectrum })));
        Ok(())
    })
}

/// Releases a spectrum handle; null is ignored.
///
/// # Safety
/// `h` must be null or a handle from [`ibmtail_spectrum_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ibmtail_spectrum_free(h: *mut IbmtailSpectrum) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of eigenvalues held.
///
/// # Safety
/// `h` must be a live handle; `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ibmtail_spectrum_len(h: *const IbmtailSpectrum, out: *mut usize) -> IbmtailStatus {
    guard(|| write(out, handle(h)?.spectrum.len(), "out"))
}

/// Copies up to `len` leading eigenvalues (extrapolated where available) into
/// `buf` and the count copied into `written`.
///
/// # Safety
/// `h` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ibmtail_spectrum_eigenvalues(
    h: *const IbmtailSpectrum,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> IbmtailStatus {
    guard(|| {
        let h = handle(h)?;
        if buf.is_null() && len > 0 {
            return Err(null("buf"));
        }
        let n = len.min(h.spectrum.len());
        for k in 0..n {
            buf.add(k).write(h.spectrum.eigenvalue(k));
        }
        write(written, n, "written")
    })
}

/// Constants c̄ and c(λ) of the sharp L² tail.
///
/// # Safety
/// `h` must be a live handle; the out-pointers must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ibmtail_spectrum_zolotarev(
    h: *const IbmtailSpectrum,
    c_bar: *mut f64,
    c_lambda: *mut f64,
) -> IbmtailStatus {
    guard(|| {
        let zc = zolotarev_constants(&handle(h)?.spectrum, 1e-6)?;
        write(c_bar, zc.c_bar, "c_bar")?;
        write(c_lambda, zc.c_lambda, "c_lambda")
    })
}

/// Sharp asymptotic of P{‖X_m‖_{L²} > r} from the spectrum.
///
/// # Safety
/// `h` must be a live handle; `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ibmtail_spectrum_asymptotic_tail_l2(
    h: *const IbmtailSpectrum,
    r: f64,
    out: *mut f64,
) -> IbmtailStatus {
    guard(|| {
        let h = handle(h)?;
        let zc = zolotarev_constants(&h.spectrum, 1e-6)?;
        write(out, asymptotic_tail_l2(h.spectrum.lambda1(), &zc, r)?.value, "out")
    })
}

/// Monte Carlo estimate of P{‖X_m‖ > r} with default sampling settings.
/// `p` is read only for the L^p norm; a NaN `shift` means shift = r. The
/// random stream matches `ibmtail tail` with the same seed and r.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ibmtail_mc_tail(
    m: u32,
    norm: IbmtailNorm,
    p: f64,
    r: f64,
    n: u64,
    seed: u64,
    drift: IbmtailDrift,
    shift: f64,
    out: *mut IbmtailTailEstimate,
) -> IbmtailStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = ProcessSpec::new(m as usize)?;
        let norm = match norm {
            IbmtailNorm::Sup => NormSpec::Sup,
            IbmtailNorm::Lp => NormSpec::lp(p)?,
        };
        let mut is = match drift {
            IbmtailDrift::None => ISConfig::plain(),
            IbmtailDrift::Endpoint => ISConfig::endpoint(),
            IbmtailDrift::TopEigenfunction => ISConfig::top_eigenfunction(),
        };
        if !shift.is_nan() {
            is = is.with_shift(shift);
        }
        let rng = ibmtail::cli::tail_stream(seed, r);
        let est = mc_tail_with(&spec, norm, r, n as usize, rng, &is, &McOptions::default())?;
        write(
            out,
            IbmtailTailEstimate {
                estimate: est.estimate,
                std_error: est.stderr,
                ci_low: est.ci_low,
                ci_high: est.ci_high,
                n_samples: est.n_samples as u64,
                effective_sample_size: est.effective_sample_size,
                ess_warning: est.ess_warning,
            },
            "out",
        )
    })
}
