use std::ffi::{c_char, CStr};
use std::ptr;

use ibmtail::estimators::{mc_tail_with, ISConfig, McOptions, NormSpec};
use ibmtail::ProcessSpec;
use ibmtail_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe {
        ibmtail_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ibmtail_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn kernel_and_status_codes() {
    let mut out = 0.0;
    assert_eq!(unsafe { ibmtail_kernel(1, 0.5, 1.0, &mut out) }, IbmtailStatus::Ok);
    assert!((out - 5.0 / 48.0).abs() < 1e-15);
    assert_eq!(unsafe { ibmtail_last_error(ptr::null_mut(), 0) }, 0);

    assert_eq!(unsafe { ibmtail_kernel(40, 0.5, 1.0, &mut out) }, IbmtailStatus::Domain);
    assert!(last_error().contains("exceeds"));
    assert_eq!(unsafe { ibmtail_kernel(1, 0.5, 1.0, ptr::null_mut()) }, IbmtailStatus::NullPointer);
}

#[test]
fn last_error_truncates_and_terminates() {
    let mut out = 0.0;
    unsafe { ibmtail_kernel(40, 0.5, 1.0, &mut out) };
    let mut buf = [1 as c_char; 5];
    let full = unsafe { ibmtail_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(full > 4);
    assert_eq!(buf[4], 0);
}

#[test]
fn spectrum_handle_lifecycle() {
    let mut h: *mut IbmtailSpectrum = ptr::null_mut();
    assert_eq!(unsafe { ibmtail_spectrum_new(0, 128, true, &mut h) }, IbmtailStatus::Ok);
    assert!(!h.is_null());
    let mut len = 0usize;
    assert_eq!(unsafe { ibmtail_spectrum_len(h, &mut len) }, IbmtailStatus::Ok);
    assert_eq!(len, 128);
    let mut buf = [0.0; 3];
    let mut written = 0usize;
    assert_eq!(
        unsafe { ibmtail_spectrum_eigenvalues(h, buf.as_mut_ptr(), buf.len(), &mut written) },
        IbmtailStatus::Ok
    );
    assert_eq!(written, 3);
    for (k, l) in buf.iter().enumerate() {
        let exact = 1.0 / ((k as f64 + 0.5).powi(2) * std::f64::consts::PI.powi(2));
        assert!((l - exact).abs() < 1e-6, "k = {k}: {l} vs {exact}");
    }
    let (mut c_bar, mut c_lambda) = (0.0, 0.0);
    assert_eq!(unsafe { ibmtail_spectrum_zolotarev(h, &mut c_bar, &mut c_lambda) }, IbmtailStatus::Ok);
    let expected = 4.0 * 2f64.sqrt() / std::f64::consts::PI.powi(2);
    assert!((c_lambda - expected).abs() < 1e-6);
    let mut tail = 0.0;
    assert_eq!(unsafe { ibmtail_spectrum_asymptotic_tail_l2(h, 2.0, &mut tail) }, IbmtailStatus::Ok);
    assert!(tail > 0.0 && tail < 0.01);
    unsafe { ibmtail_spectrum_free(h) };
    unsafe { ibmtail_spectrum_free(ptr::null_mut()) };
}

#[test]
fn null_handle_is_rejected() {
    let mut len = 0usize;
    assert_eq!(unsafe { ibmtail_spectrum_len(ptr::null(), &mut len) }, IbmtailStatus::NullPointer);
    assert!(last_error().contains("spectrum handle"));
}

#[test]
fn reflection_and_sup_asymptotic() {
    let (mut exact, mut asym) = (0.0, 0.0);
    assert_eq!(unsafe { ibmtail_reflection_tail_bm(3.0, &mut exact) }, IbmtailStatus::Ok);
    assert_eq!(unsafe { ibmtail_asymptotic_tail_sup(0, 3.0, &mut asym) }, IbmtailStatus::Ok);
    assert!((exact / asym - 1.0).abs() < 0.15);
    assert_eq!(unsafe { ibmtail_reflection_tail_bm(-1.0, &mut exact) }, IbmtailStatus::Domain);
}

#[test]
fn mc_tail_matches_the_library_stream() {
    let mut out = IbmtailTailEstimate::default();
    let status = unsafe { ibmtail_mc_tail(1, IbmtailNorm::Sup, 0.0, 1.0, 5000, 11, IbmtailDrift::None, f64::NAN, &mut out) };
    assert_eq!(status, IbmtailStatus::Ok);
    let spec = ProcessSpec::new(1).unwrap();
    let rng = ibmtail::cli::tail_stream(11, 1.0);
    let est = mc_tail_with(&spec, NormSpec::Sup, 1.0, 5000, rng, &ISConfig::plain(), &McOptions::default()).unwrap();
    assert_eq!(out.estimate, est.estimate);
    assert_eq!(out.std_error, est.stderr);
    assert_eq!(out.n_samples, 5000);
}

#[test]
fn mc_tail_rejects_bad_p() {
    let mut out = IbmtailTailEstimate::default();
    let status = unsafe { ibmtail_mc_tail(1, IbmtailNorm::Lp, 0.5, 1.0, 5000, 1, IbmtailDrift::None, f64::NAN, &mut out) };
    assert_eq!(status, IbmtailStatus::Domain);
}
