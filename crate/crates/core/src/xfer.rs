//! Transfer functions of Ramsey samples and the overlap integral with a spectrum.
//!
//! Every second moment in the crate reduces to
//! `(1/2pi) * integral S(w) G(w) dw + sum_spurs P G(w_s)` for a suitable
//! kernel `G`. For two flat-top windows (or points, which are windows of zero
//! width) the pair kernel factors as
//! `sinc(w T_k / 2) sinc(w T_l / 2) cos(w (m_l - m_k))`, `m` being midpoints.
//! This is algebraically identical to the four-cosine form but keeps full
//! precision as `w -> 0`.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::ramsey::MeasurementWindow;
use crate::spectra::{sinc, PowerSpectrum};

/// `(sin(w T/2) / (w T/2))^2`.
pub fn single_tf(omega: f64, ramsey: f64) -> f64 {
    let s = sinc(0.5 * omega * ramsey);
    s * s
}

/// Pair covariance transfer function of two flat-top windows.
pub fn pair_tf(omega: f64, wk: &MeasurementWindow, wl: &MeasurementWindow) -> f64 {
    let level = wk.sensitivity.level() * wl.sensitivity.level();
    level
        * sinc(0.5 * omega * wk.duration())
        * sinc(0.5 * omega * wl.duration())
        * (omega * (wl.midpoint() - wk.midpoint())).cos()
}

/// The pair transfer function written literally as four cosines over
/// `w^2 T_k T_l`. Below `w t_max < 1e-4` a Taylor series replaces the
/// cancelling difference.
pub fn pair_tf_four_cosine(omega: f64, wk: &MeasurementWindow, wl: &MeasurementWindow) -> f64 {
    let (tk, tl) = (wk.duration(), wl.duration());
    let args = [
        (wl.t_start - wk.t_start, 1.0),
        (wl.t_end - wk.t_end, 1.0),
        (wl.t_end - wk.t_start, -1.0),
        (wl.t_start - wk.t_end, -1.0),
    ];
    let t_max = args.iter().map(|a| a.0.abs()).fold(0.0, f64::max);
    let level = wk.sensitivity.level() * wl.sensitivity.level();
    if omega * t_max < 1e-4 {
        // cos x = 1 - x^2/2 + x^4/24 - x^6/720; the constant terms cancel.
        let moment = |p: i32| args.iter().map(|&(t, s)| s * t.powi(p)).sum::<f64>();
        let w2 = omega * omega;
        let numer = -moment(2) / 2.0 + w2 * moment(4) / 24.0 - w2 * w2 * moment(6) / 720.0;
        return level * numer / (tk * tl);
    }
    let numer: f64 = args.iter().map(|&(t, s)| s * (omega * t).cos()).sum();
    level * numer / (omega * omega * tk * tl)
}

/// Kernel between a window and an ideal zero-duration sample at `t_c`.
pub fn point_pair_tf(omega: f64, wk: &MeasurementWindow, t_c: f64) -> f64 {
    wk.sensitivity.level() * sinc(0.5 * omega * wk.duration()) * (omega * (t_c - wk.midpoint())).cos()
}

/// `2 sin^4(w T/2) / (w T/2)^2`.
pub fn allan_tf(omega: f64, ramsey: f64) -> f64 {
    let x = 0.5 * omega * ramsey;
    let s = x.sin();
    if x.abs() < 1e-4 {
        // 2 sin^4 x / x^2 ~ 2 x^2 (1 - x^2/3)
        return 2.0 * x * x * (1.0 - x * x / 3.0);
    }
    2.0 * s * s * s * s / (x * x)
}

/// A flat-top observation of y: a window average when `duration > 0`, a point
/// value when `duration == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub center: f64,
    pub duration: f64,
    pub level: f64,
}

impl Probe {
    pub fn point(t: f64) -> Self {
        Probe { center: t, duration: 0.0, level: 1.0 }
    }

    pub fn window(w: &MeasurementWindow) -> Self {
        Probe { center: w.midpoint(), duration: w.duration(), level: w.sensitivity.level() }
    }

    /// Unit-level kernel shared by any two probes.
    #[inline]
    fn kernel(omega: f64, ta: f64, tb: f64, lag: f64) -> f64 {
        sinc(0.5 * omega * ta) * sinc(0.5 * omega * tb) * (omega * lag).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TransferFunction {
    SingleSinc2(MeasurementWindow),
    Pair(MeasurementWindow, MeasurementWindow),
    PointPair(MeasurementWindow, f64),
    /// Two point samples separated by `lag`; identically 1 at zero lag.
    PointPoint {
        lag: f64,
    },
    Allan {
        ramsey: f64,
    },
    /// Generic pair of probes.
    Probes(Probe, Probe),
}

impl TransferFunction {
    pub fn eval(&self, omega: f64) -> f64 {
        match self {
            TransferFunction::SingleSinc2(w) => w.sensitivity.level().powi(2) * single_tf(omega, w.duration()),
            TransferFunction::Pair(a, b) => pair_tf(omega, a, b),
            TransferFunction::PointPair(w, t_c) => point_pair_tf(omega, w, *t_c),
            TransferFunction::PointPoint { lag } => (omega * lag).cos(),
            TransferFunction::Allan { ramsey } => allan_tf(omega, *ramsey),
            TransferFunction::Probes(a, b) => {
                a.level * b.level * Probe::kernel(omega, a.duration, b.duration, b.center - a.center)
            }
        }
    }

    /// Largest time argument of the kernel; sets the oscillation scale in w.
    pub fn time_scale(&self) -> f64 {
        match self {
            TransferFunction::SingleSinc2(w) => w.duration(),
            TransferFunction::Pair(a, b) => (b.midpoint() - a.midpoint()).abs() + 0.5 * (a.duration() + b.duration()),
            TransferFunction::PointPair(w, t_c) => (t_c - w.t_start).abs().max((t_c - w.t_end).abs()),
            TransferFunction::PointPoint { lag } => lag.abs(),
            TransferFunction::Allan { ramsey } => 2.0 * ramsey,
            TransferFunction::Probes(a, b) => (b.center - a.center).abs() + 0.5 * (a.duration + b.duration),
        }
    }

    /// Constant `K` with `|G(w)| <= K / w^2`, when the kernel decays that fast.
    fn decay_constant(&self) -> Option<f64> {
        match self {
            TransferFunction::SingleSinc2(w) => Some(4.0 / w.duration().powi(2)),
            TransferFunction::Pair(a, b) => Some(4.0 / (a.duration() * b.duration())),
            TransferFunction::Allan { ramsey } => Some(8.0 / ramsey.powi(2)),
            TransferFunction::Probes(a, b) if a.duration > 0.0 && b.duration > 0.0 => {
                Some(4.0 * a.level * b.level / (a.duration * b.duration))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    /// Target for the summed panel error, relative to `integral |S G|`.
    pub rel_tol: f64,
    /// Log-spaced breakpoints per decade of the band.
    pub panels_per_decade: usize,
    pub max_panels: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions { rel_tol: 1e-6, panels_per_decade: 24, max_panels: 20_000_000 }
    }
}

/// Result of an overlap integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapValue {
    pub value: f64,
    pub continuum: f64,
    pub spurs: f64,
    /// Estimated absolute quadrature error.
    pub error_bound: f64,
    /// Achieved error relative to `integral |S G|` (0 when the integrand vanishes).
    pub relative_error: f64,
    /// Bound on what the band-limited spectrum omits above `omega_cut` if the
    /// power law were continued, for kernels decaying like `w^-2`.
    pub truncation_bound: Option<f64>,
}

/// Panel breakpoints: log spacing across the band merged with a uniform
/// partition of width at most `pi / t_max`, half a period of the fastest
/// oscillation of the kernel.
fn breakpoints(spectrum: &PowerSpectrum, t_max: f64, opts: &QuadratureOptions) -> Result<Vec<f64>> {
    let (lo, hi) = (spectrum.omega_low(), spectrum.omega_cut());
    let decades = (hi / lo).log10();
    let n_log = ((decades * opts.panels_per_decade as f64).ceil() as usize).max(1);
    let mut log_pts: Vec<f64> = (0..=n_log).map(|i| lo * (hi / lo).powf(i as f64 / n_log as f64)).collect();
    *log_pts.last_mut().unwrap() = hi;
    if t_max <= 0.0 {
        return Ok(log_pts);
    }
    let width = PI / t_max;
    let n_uniform = ((hi - lo) / width).ceil();
    if n_uniform > opts.max_panels as f64 {
        return Err(Error::config(
            "quadrature",
            format!("kernel time scale {t_max} needs {n_uniform:e} panels, above the limit {}", opts.max_panels),
        ));
    }
    let n_uniform = n_uniform as usize;
    let mut merged = Vec::with_capacity(n_uniform + log_pts.len() + 1);
    let (mut i, mut j) = (0usize, 0usize);
    let uniform = |j: usize| if j >= n_uniform { hi } else { lo + width * j as f64 };
    while i < log_pts.len() || j <= n_uniform {
        let next = match (i < log_pts.len(), j <= n_uniform) {
            (true, true) => {
                let (a, b) = (log_pts[i], uniform(j));
                if a <= b {
                    i += 1;
                    a
                } else {
                    j += 1;
                    b
                }
            }
            (true, false) => {
                i += 1;
                log_pts[i - 1]
            }
            _ => {
                j += 1;
                uniform(j - 1)
            }
        };
        if merged.last().is_none_or(|&last: &f64| next > last * (1.0 + 1e-13)) {
            merged.push(next);
        }
    }
    *merged.last_mut().unwrap() = hi;
    Ok(merged)
}

/// `(1/2pi) * integral S(w) G(w) dw + sum_spurs P_s G(w_s)` with default options.
pub fn overlap_integral(spectrum: &PowerSpectrum, tf: &TransferFunction) -> Result<OverlapValue> {
    overlap_integral_with(spectrum, tf, &QuadratureOptions::default())
}

pub fn overlap_integral_with(
    spectrum: &PowerSpectrum,
    tf: &TransferFunction,
    opts: &QuadratureOptions,
) -> Result<OverlapValue> {
    let spurs: f64 = spectrum.spurs().iter().map(|s| s.power * tf.eval(s.omega)).sum();
    let (continuum, error_bound, relative_error) = if spectrum.amplitude() > 0.0 {
        let breaks = breakpoints(spectrum, tf.time_scale(), opts)?;
        let r = quad::integrate(|w| spectrum.density(w) * tf.eval(w), &breaks, opts.rel_tol, opts.max_panels);
        if !r.converged {
            return Err(Error::Quadrature {
                estimate: r.value / TAU,
                error_bound: r.error / TAU,
                target: r.target / TAU,
            });
        }
        let rel = if r.abs_value > 0.0 { r.error / r.abs_value } else { 0.0 };
        (r.value / TAU, r.error / TAU, rel)
    } else {
        (0.0, 0.0, 0.0)
    };
    let truncation_bound = tf.decay_constant().map(|k| {
        // continue S as S(w_c) (w_c / w)^alpha <= S(w_c) beyond the cutoff
        let s_c = spectrum.density(spectrum.omega_cut());
        s_c * k / (TAU * spectrum.omega_cut())
    });
    Ok(OverlapValue { value: continuum + spurs, continuum, spurs, error_bound, relative_error, truncation_bound })
}

/// `Cov(y_k, y_l)` of two window samples.
pub fn covariance_of_windows(spectrum: &PowerSpectrum, wk: &MeasurementWindow, wl: &MeasurementWindow) -> Result<f64> {
    Ok(overlap_integral(spectrum, &TransferFunction::Pair(*wk, *wl))?.value)
}

/// Memoizing evaluator of probe covariances for one spectrum.
///
/// Covariances depend only on the two durations and the midpoint separation,
/// so geometries that repeat across a schedule are integrated once.
#[derive(Debug, Clone)]
pub struct CovarianceEngine {
    spectrum: PowerSpectrum,
    opts: QuadratureOptions,
    quantum: f64,
    cache: HashMap<(i64, i64, i64), f64>,
}

type GeometryKey = (i64, i64, i64);

impl CovarianceEngine {
    pub fn new(spectrum: &PowerSpectrum) -> Self {
        Self::with_options(spectrum, QuadratureOptions::default())
    }

    pub fn with_options(spectrum: &PowerSpectrum, opts: QuadratureOptions) -> Self {
        CovarianceEngine {
            spectrum: spectrum.clone(),
            opts,
            // phase error of at most 1e-10 rad at the cutoff
            quantum: 1e-10 / spectrum.omega_cut(),
            cache: HashMap::new(),
        }
    }

    pub fn spectrum(&self) -> &PowerSpectrum {
        &self.spectrum
    }

    fn key(&self, a: &Probe, b: &Probe) -> GeometryKey {
        let q = |x: f64| (x / self.quantum).round() as i64;
        let (ta, tb) = (q(a.duration), q(b.duration));
        (ta.min(tb), ta.max(tb), q((b.center - a.center).abs()))
    }

    fn integrate_key(&self, key: GeometryKey) -> Result<f64> {
        let probe =
            |d: i64, c: i64| Probe { center: c as f64 * self.quantum, duration: d as f64 * self.quantum, level: 1.0 };
        let tf = TransferFunction::Probes(probe(key.0, 0), probe(key.1, key.2));
        Ok(overlap_integral_with(&self.spectrum, &tf, &self.opts)?.value)
    }

    pub fn covariance(&mut self, a: &Probe, b: &Probe) -> Result<f64> {
        let key = self.key(a, b);
        let unit = match self.cache.get(&key) {
            Some(&v) => v,
            None => {
                let v = self.integrate_key(key)?;
                self.cache.insert(key, v);
                v
            }
        };
        Ok(a.level * b.level * unit)
    }

    /// Dense covariance matrix of `probes`, filling unseen geometries in parallel.
    pub fn matrix(&mut self, probes: &[Probe]) -> Result<DMatrix<f64>> {
        let n = probes.len();
        let mut missing: Vec<GeometryKey> = Vec::new();
        for i in 0..n {
            for j in i..n {
                let key = self.key(&probes[i], &probes[j]);
                if !self.cache.contains_key(&key) {
                    missing.push(key);
                }
            }
        }
        missing.sort_unstable();
        missing.dedup();
        let values: Vec<Result<f64>> = missing.par_iter().map(|&k| self.integrate_key(k)).collect();
        for (k, v) in missing.into_iter().zip(values) {
            self.cache.insert(k, v?);
        }
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = probes[i].level * probes[j].level * self.cache[&self.key(&probes[i], &probes[j])];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    pub fn cached_geometries(&self) -> usize {
        self.cache.len()
    }
}
