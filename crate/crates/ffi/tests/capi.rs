use std::ffi::{c_char, CStr};
use std::ptr;

use hffclock_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe { hff_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn white() -> *mut HffSpectrum {
    let mut s = ptr::null_mut();
    let st = unsafe { hff_spectrum_new(0.0, 2.0, 0.01, 1000.0, &mut s) };
    assert_eq!(st, HffStatus::Ok);
    s
}

#[test]
fn spectrum_round_trip() {
    let s = white();
    let mut v = 0.0;
    assert_eq!(unsafe { hff_spectrum_psd(s, 10.0, &mut v) }, HffStatus::Ok);
    assert_eq!(v, 2.0);
    assert_eq!(unsafe { hff_spectrum_point_variance(s, &mut v) }, HffStatus::Ok);
    assert!((v - 2.0 * (1000.0 - 0.01) / std::f64::consts::TAU).abs() < 1e-9 * v);
    assert_eq!(unsafe { hff_spectrum_normalize(s, 1.0, 4.0) }, HffStatus::Ok);
    unsafe { hff_spectrum_psd(s, 10.0, &mut v) };
    assert_eq!(v, 4.0);
    unsafe { hff_spectrum_free(s) };
}

#[test]
fn invalid_band_sets_error() {
    let mut s = ptr::null_mut();
    let st = unsafe { hff_spectrum_new(1.0, 1.0, 10.0, 1.0, &mut s) };
    assert_ne!(st, HffStatus::Ok);
    assert!(s.is_null());
    assert!(hff_last_error_length() > 0);
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_reported() {
    let st = unsafe { hff_spectrum_psd(ptr::null(), 1.0, ptr::null_mut()) };
    assert_eq!(st, HffStatus::NullPointer);
    assert!(last_error().contains("null"));
    unsafe { hff_spectrum_free(ptr::null_mut()) };
    unsafe { hff_schedule_free(ptr::null_mut()) };
}

#[test]
fn sigma_and_coefficients() {
    let s = white();
    let starts = [0.0, 1.0];
    let ends = [1.0, 2.0];
    let mut m = [0.0; 4];
    let mut f = [0.0; 2];
    let mut sc = 0.0;
    let st =
        unsafe { hff_build_sigma(s, starts.as_ptr(), ends.as_ptr(), 2, 2.0, m.as_mut_ptr(), f.as_mut_ptr(), &mut sc) };
    assert_eq!(st, HffStatus::Ok, "{}", last_error());
    // white noise: S0 / (2T) on the diagonal
    assert!((m[0] - 1.0).abs() < 0.01);
    assert_eq!(m[1], m[2]);
    let mut c = [0.0; 2];
    let mut ridge = -1.0;
    let st = unsafe { hff_mmse_coeffs(m.as_ptr(), f.as_ptr(), sc, 2, c.as_mut_ptr(), &mut ridge) };
    assert_eq!(st, HffStatus::Ok);
    assert_eq!(ridge, 0.0);
    let mut cov = 0.0;
    unsafe { hff_window_covariance(s, 0.0, 1.0, 0.0, 1.0, &mut cov) };
    assert!((cov - m[0]).abs() < 1e-9 * cov);
    unsafe { hff_spectrum_free(s) };
}

#[test]
fn schedule_and_expected_variance() {
    let s = white();
    let mut sch = ptr::null_mut();
    let d = [0.5];
    assert_eq!(unsafe { hff_schedule_new(10, d.as_ptr(), 1, 0.5, &mut sch) }, HffStatus::Ok);
    assert_eq!(unsafe { hff_schedule_n_windows(sch) }, 10);
    let free = HffController { kind: HffControllerKind::FreeRun, n: 0, gain: 1.0, mode: HffCoeffMode::PaperForm };
    let mut v = 0.0;
    let st = unsafe { hff_expected_sample_variance(s, sch, &free, 10, &mut v) };
    assert_eq!(st, HffStatus::Ok, "{}", last_error());
    // disjoint white-noise windows are uncorrelated, so <s^2> is the true variance
    assert!((v - 2.0).abs() < 0.02, "{v}");
    let bad = HffController { kind: HffControllerKind::HffBlock, n: 0, gain: 1.0, mode: HffCoeffMode::Mmse };
    assert_eq!(unsafe { hff_expected_sample_variance(s, sch, &bad, 10, &mut v) }, HffStatus::Config);
    unsafe { hff_schedule_free(sch) };
    unsafe { hff_spectrum_free(s) };
}

#[test]
fn bad_durations_are_config_errors() {
    let mut sch = ptr::null_mut();
    let d = [-1.0];
    assert_eq!(unsafe { hff_schedule_new(1, d.as_ptr(), 1, 0.0, &mut sch) }, HffStatus::Config);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(hff_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn cli_exit_codes() {
    let args = [c"hffclock".as_ptr(), c"simulate".as_ptr()];
    assert_eq!(unsafe { hff_cli_run(2, args.as_ptr()) }, 2);
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/hffclock.h");
    let Ok(status) =
        std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}
