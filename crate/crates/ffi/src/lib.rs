//! C ABI over `hffclock`.
//!
//! Objects are opaque handles created by `*_new` functions and released with
//! the matching `*_free`. Every fallible call returns an [`HffStatus`]; on
//! failure the message is kept per thread and can be read with
//! [`hff_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use hffclock::control::{CoeffMode, ControllerKind};
use hffclock::estimator::{accuracy_analytic, build_sigma, predictor_coeffs_mmse_ridge, CovarianceBlocks};
use hffclock::metrics::expected_sample_variance_llo;
use hffclock::ramsey::{build_schedule, CorrectionAt, CycleSchedule, MeasurementWindow};
use hffclock::spectra::{PowerSpectrum, Spur};
use hffclock::xfer::covariance_of_windows;
use hffclock::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HffStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HffControllerKind {
    FreeRun = 0,
    Feedback = 1,
    HffBlock = 2,
    HffMoving = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HffCoeffMode {
    PaperForm = 0,
    Mmse = 1,
}

/// Controller description. `n` and `mode` are ignored by free-run and feedback.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HffController {
    pub kind: HffControllerKind,
    pub n: usize,
    pub gain: f64,
    pub mode: HffCoeffMode,
}

/// Opaque power spectrum.
pub struct HffSpectrum(PowerSpectrum);

/// Opaque cycle schedule.
pub struct HffSchedule(CycleSchedule);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HffStatus {
    match e {
        Error::Config { .. } => HffStatus::Config,
        Error::Domain(_) => HffStatus::InvalidArgument,
        Error::Io(_) | Error::Json(_) => HffStatus::Io,
        _ => HffStatus::Numerical,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F>(f: F) -> HffStatus
where
    F: FnOnce() -> Result<(), HffStatus>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HffStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            HffStatus::Panic
        }
    }
}

fn check<T>(r: hffclock::Result<T>) -> Result<T, HffStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null(what: &str) -> HffStatus {
    set_error(format!("{what} is null"));
    HffStatus::NullPointer
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, HffStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, HffStatus> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], HffStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], HffStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn controller(c: &HffController) -> ControllerKind {
    let mode = match c.mode {
        HffCoeffMode::PaperForm => CoeffMode::PaperForm,
        HffCoeffMode::Mmse => CoeffMode::Mmse,
    };
    match c.kind {
        HffControllerKind::FreeRun => ControllerKind::FreeRun,
        HffControllerKind::Feedback => ControllerKind::Feedback { gain: c.gain },
        HffControllerKind::HffBlock => ControllerKind::HffBlock { n: c.n, gain: c.gain, mode },
        HffControllerKind::HffMoving => ControllerKind::HffMoving { n: c.n, gain: c.gain, mode },
    }
}

fn windows_of(starts: &[f64], ends: &[f64]) -> hffclock::Result<Vec<MeasurementWindow>> {
    starts.iter().zip(ends).map(|(&a, &b)| MeasurementWindow::new(a, b)).collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating NUL; 0 when there is none.
#[no_mangle]
pub extern "C" fn hff_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message into `buf` (always NUL-terminated when
/// `len > 0`, truncated if needed). Returns the full message length.
///
/// # Safety
/// `buf` must be valid for `len` bytes of writes, or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn hff_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let borrowed = e.borrow();
        let bytes = borrowed.as_ref().map_or(&[][..], |c| c.as_bytes());
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Power law `amplitude * (omega_low / w)^exponent` on `[omega_low, omega_cut]`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn hff_spectrum_new(
    exponent: f64,
    amplitude: f64,
    omega_low: f64,
    omega_cut: f64,
    out_spectrum: *mut *mut HffSpectrum,
) -> HffStatus {
    guard(|| {
        let slot = out(out_spectrum, "out_spectrum")?;
        let s = check(PowerSpectrum::power_law(exponent, amplitude, omega_low, omega_cut))?;
        *slot = Box::into_raw(Box::new(HffSpectrum(s)));
        Ok(())
    })
}

/// # Safety
/// `spectrum` must come from [`hff_spectrum_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hff_spectrum_free(spectrum: *mut HffSpectrum) {
    if !spectrum.is_null() {
        drop(Box::from_raw(spectrum));
    }
}

/// Rescales so that the PSD equals `target` at `omega_ref`.
///
/// # Safety
/// `spectrum` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hff_spectrum_normalize(spectrum: *mut HffSpectrum, omega_ref: f64, target: f64) -> HffStatus {
    guard(|| {
        let s = out(spectrum, "spectrum")?;
        s.0 = check(s.0.normalize_at(omega_ref, target))?;
        Ok(())
    })
}

/// # Safety
/// `spectrum` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hff_spectrum_add_spur(spectrum: *mut HffSpectrum, omega: f64, power: f64) -> HffStatus {
    guard(|| {
        let s = out(spectrum, "spectrum")?;
        let spur = check(Spur::new(omega, power))?;
        check(s.0.push_spur(spur))
    })
}

/// Adds `count` spurs from `start` in steps of `step` (rad/s) carrying
/// `fraction` of the continuum variance in total.
///
/// # Safety
/// `spectrum` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hff_spectrum_add_spur_comb(
    spectrum: *mut HffSpectrum,
    start: f64,
    step: f64,
    count: usize,
    fraction: f64,
) -> HffStatus {
    guard(|| {
        let s = out(spectrum, "spectrum")?;
        check(s.0.add_spur_comb(start, step, count, fraction))
    })
}

/// # Safety
/// `spectrum` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn hff_spectrum_psd(spectrum: *const HffSpectrum, omega: f64, out_value: *mut f64) -> HffStatus {
    guard(|| {
        let s = deref(spectrum, "spectrum")?;
        let o = out(out_value, "out_value")?;
        *o = check(s.0.psd(omega))?;
        Ok(())
    })
}

/// `<y(t)^2>`: continuum plus spur variance.
///
/// # Safety
/// `spectrum` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn hff_spectrum_point_variance(spectrum: *const HffSpectrum, out_value: *mut f64) -> HffStatus {
    guard(|| {
        let s = deref(spectrum, "spectrum")?;
        *out(out_value, "out_value")? = s.0.point_variance();
        Ok(())
    })
}

/// Schedule of `n_cycles` cycles, each with windows of the given durations
/// packed back to back and followed by `dead_time`.
///
/// # Safety
/// `durations` must point to `n_durations` readable doubles; `out_schedule`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn hff_schedule_new(
    n_cycles: usize,
    durations: *const f64,
    n_durations: usize,
    dead_time: f64,
    out_schedule: *mut *mut HffSchedule,
) -> HffStatus {
    guard(|| {
        let slot = out(out_schedule, "out_schedule")?;
        let d = input(durations, n_durations, "durations")?;
        let s = check(build_schedule(n_cycles, d, dead_time, CorrectionAt::CycleEnd))?;
        *slot = Box::into_raw(Box::new(HffSchedule(s)));
        Ok(())
    })
}

/// # Safety
/// `schedule` must come from [`hff_schedule_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hff_schedule_free(schedule: *mut HffSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Total number of windows, or 0 for a null handle.
///
/// # Safety
/// `schedule` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hff_schedule_n_windows(schedule: *const HffSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.n_windows())
}

/// `Cov(y_k, y_l)` of two window samples.
///
/// # Safety
/// `spectrum` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn hff_window_covariance(
    spectrum: *const HffSpectrum,
    start_k: f64,
    end_k: f64,
    start_l: f64,
    end_l: f64,
    out_value: *mut f64,
) -> HffStatus {
    guard(|| {
        let s = deref(spectrum, "spectrum")?;
        let o = out(out_value, "out_value")?;
        let wk = check(MeasurementWindow::new(start_k, end_k))?;
        let wl = check(MeasurementWindow::new(start_l, end_l))?;
        *o = check(covariance_of_windows(&s.0, &wk, &wl))?;
        Ok(())
    })
}

/// Covariance blocks for `n` windows predicting `y(t_c)`. `m_out` receives
/// the `n x n` matrix in row-major order, `f_out` the `n` cross terms.
///
/// # Safety
/// `starts` and `ends` must hold `n` doubles, `m_out` `n*n`, `f_out` `n`, and
/// `sigma_cc_out` one.
#[no_mangle]
pub unsafe extern "C" fn hff_build_sigma(
    spectrum: *const HffSpectrum,
    starts: *const f64,
    ends: *const f64,
    n: usize,
    t_c: f64,
    m_out: *mut f64,
    f_out: *mut f64,
    sigma_cc_out: *mut f64,
) -> HffStatus {
    guard(|| {
        let s = deref(spectrum, "spectrum")?;
        let windows = check(windows_of(input(starts, n, "starts")?, input(ends, n, "ends")?))?;
        let m = output(m_out, n * n, "m_out")?;
        let f = output(f_out, n, "f_out")?;
        let sc = out(sigma_cc_out, "sigma_cc_out")?;
        let blocks = check(build_sigma(&s.0, &windows, t_c))?;
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = blocks.m[(i, j)];
            }
            f[i] = blocks.f[i];
        }
        *sc = blocks.sigma_cc;
        Ok(())
    })
}

unsafe fn blocks_from(m: *const f64, f: *const f64, sigma_cc: f64, n: usize) -> Result<CovarianceBlocks, HffStatus> {
    let m = input(m, n * n, "m")?;
    let f = input(f, n, "f")?;
    check(CovarianceBlocks::new(
        hffclock::nalgebra::DMatrix::from_row_slice(n, n, m),
        hffclock::nalgebra::DVector::from_column_slice(f),
        sigma_cc,
    ))
}

/// Closed-form correction accuracy for row-major blocks.
///
/// # Safety
/// `m` must hold `n*n` doubles, `f` `n`, and `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hff_accuracy_analytic(
    m: *const f64,
    f: *const f64,
    sigma_cc: f64,
    n: usize,
    gain: f64,
    out_value: *mut f64,
) -> HffStatus {
    guard(|| {
        let o = out(out_value, "out_value")?;
        let blocks = blocks_from(m, f, sigma_cc, n)?;
        *o = check(accuracy_analytic(&blocks, gain))?;
        Ok(())
    })
}

/// `M^-1 F` into `coeffs_out` (ridge-regularized when ill-conditioned;
/// `ridge_out`, if non-null, receives the ridge or 0).
///
/// # Safety
/// `m` must hold `n*n` doubles, `f` and `coeffs_out` `n`; `ridge_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn hff_mmse_coeffs(
    m: *const f64,
    f: *const f64,
    sigma_cc: f64,
    n: usize,
    coeffs_out: *mut f64,
    ridge_out: *mut f64,
) -> HffStatus {
    guard(|| {
        let c = output(coeffs_out, n, "coeffs_out")?;
        let blocks = blocks_from(m, f, sigma_cc, n)?;
        let sol = check(predictor_coeffs_mmse_ridge(&blocks))?;
        c.copy_from_slice(&sol.coeffs);
        if let Some(r) = ridge_out.as_mut() {
            *r = sol.ridge.unwrap_or(0.0);
        }
        Ok(())
    })
}

/// Exact expected sample variance of the first `n_samples` locked samples.
///
/// # Safety
/// Handles must be live, `controller` readable and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn hff_expected_sample_variance(
    spectrum: *const HffSpectrum,
    schedule: *const HffSchedule,
    controller_spec: *const HffController,
    n_samples: usize,
    out_value: *mut f64,
) -> HffStatus {
    guard(|| {
        let s = deref(spectrum, "spectrum")?;
        let sch = deref(schedule, "schedule")?;
        let c = controller(deref(controller_spec, "controller")?);
        let o = out(out_value, "out_value")?;
        check(c.validate())?;
        *o = check(expected_sample_variance_llo(&s.0, &sch.0, c, n_samples))?;
        Ok(())
    })
}

/// Runs the command-line front end with `argc` arguments (the first being
/// the program name) and returns its exit code.
///
/// # Safety
/// `argv` must hold `argc` valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hff_cli_run(argc: c_int, argv: *const *const c_char) -> c_int {
    if argc < 0 || (argc > 0 && argv.is_null()) {
        set_error("argv is null".into());
        return hffclock::cli::exit::CONFIG;
    }
    let args: Vec<String> = (0..argc as usize)
        .map(|i| {
            let p = *argv.add(i);
            if p.is_null() {
                String::new()
            } else {
                CStr::from_ptr(p).to_string_lossy().into_owned()
            }
        })
        .collect();
    match catch_unwind(|| hffclock::cli::run(args)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic".into());
            hffclock::cli::exit::RUNTIME
        }
    }
}
