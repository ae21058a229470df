//! Ramsey measurement windows, sensitivity functions and cycle schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::NoiseRealization;

/// Shape of the sensitivity function `g(t)` over a window.
///
/// Only flat-top windows are modeled; `Flat` scales the ideal rectangle by a
/// constant level in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensitivityKind {
    #[default]
    Rectangular,
    Flat {
        level: f64,
    },
}

impl SensitivityKind {
    /// Constant value of `g` inside the window.
    pub fn level(&self) -> f64 {
        match *self {
            SensitivityKind::Rectangular => 1.0,
            SensitivityKind::Flat { level } => level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementWindow {
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default)]
    pub sensitivity: SensitivityKind,
}

impl MeasurementWindow {
    pub fn new(t_start: f64, t_end: f64) -> Result<Self> {
        Self::with_sensitivity(t_start, t_end, SensitivityKind::Rectangular)
    }

    pub fn with_sensitivity(t_start: f64, t_end: f64, sensitivity: SensitivityKind) -> Result<Self> {
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::domain(format!("window must have t_end > t_start, got [{t_start}, {t_end}]")));
        }
        let level = sensitivity.level();
        if !(level > 0.0 && level <= 1.0) {
            return Err(Error::domain(format!("sensitivity level must lie in (0, 1], got {level}")));
        }
        Ok(MeasurementWindow { t_start, t_end, sensitivity })
    }

    /// Ramsey duration `T_R`.
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_start + self.t_end)
    }

    pub fn shifted(&self, dt: f64) -> Self {
        MeasurementWindow { t_start: self.t_start + dt, t_end: self.t_end + dt, sensitivity: self.sensitivity }
    }

    pub fn mean_sensitivity(&self) -> f64 {
        mean_sensitivity(self)
    }
}

/// Average of `g` over the window, `g_bar = (1/T_R) * integral of g`.
pub fn mean_sensitivity(window: &MeasurementWindow) -> f64 {
    window.sensitivity.level()
}

/// Integrated sample `(1/T_R) * integral of y(t) g(t - t_s) dt`, in closed form.
pub fn sample_window(realization: &NoiseRealization, window: &MeasurementWindow) -> Result<f64> {
    if window.t_start < 0.0 || window.t_end > realization.duration() {
        return Err(Error::domain(format!(
            "window [{}, {}] outside realization [0, {}]",
            window.t_start,
            window.t_end,
            realization.duration()
        )));
    }
    Ok(window.sensitivity.level() * realization.average(window.midpoint(), window.duration()))
}

/// When corrections are applied within a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionAt {
    /// At the end of the dead time.
    #[default]
    CycleEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub windows: Vec<MeasurementWindow>,
    pub correction_time: f64,
}

impl Cycle {
    pub fn start(&self) -> f64 {
        self.windows[0].t_start
    }
}

/// Time-ordered measurement and correction plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSchedule {
    cycles: Vec<Cycle>,
}

impl CycleSchedule {
    /// Validates ordering: windows disjoint and ordered, each correction after
    /// its cycle's last window, cycles non-overlapping.
    pub fn new(cycles: Vec<Cycle>) -> Result<Self> {
        if cycles.is_empty() {
            return Err(Error::config("n_cycles", "schedule needs at least one cycle"));
        }
        let mut cursor = f64::NEG_INFINITY;
        for (k, cycle) in cycles.iter().enumerate() {
            if cycle.windows.is_empty() {
                return Err(Error::config("ramsey_durations", format!("cycle {k} has no windows")));
            }
            for w in &cycle.windows {
                if w.t_start < cursor {
                    return Err(Error::domain(format!("window in cycle {k} overlaps its predecessor")));
                }
                cursor = w.t_end;
            }
            if cycle.correction_time < cursor {
                return Err(Error::domain(format!(
                    "correction of cycle {k} at {} precedes its last window end {cursor}",
                    cycle.correction_time
                )));
            }
            cursor = cycle.correction_time;
        }
        Ok(CycleSchedule { cycles })
    }

    /// Uniform schedule of `n_cycles` cycles, each with one window of `ramsey` s
    /// followed by `dead_time` s.
    pub fn uniform(n_cycles: usize, ramsey: f64, dead_time: f64) -> Result<Self> {
        build_schedule(n_cycles, &[ramsey], dead_time, CorrectionAt::CycleEnd)
    }

    /// Uniform schedule parameterized by cycle time and duty factor `d = T_R / T_c`.
    pub fn from_duty_factor(n_cycles: usize, cycle_time: f64, duty_factor: f64) -> Result<Self> {
        if !(duty_factor > 0.0 && duty_factor <= 1.0) {
            return Err(Error::config("duty_factor", format!("must lie in (0, 1], got {duty_factor}")));
        }
        if !(cycle_time > 0.0) {
            return Err(Error::config("cycle_time", format!("must be positive, got {cycle_time}")));
        }
        let ramsey = duty_factor * cycle_time;
        Self::uniform(n_cycles, ramsey, (cycle_time - ramsey).max(0.0))
    }

    pub fn cycles(&self) -> &[Cycle] {
        &self.cycles
    }

    pub fn n_cycles(&self) -> usize {
        self.cycles.len()
    }

    /// All windows in time order.
    pub fn windows(&self) -> impl Iterator<Item = &MeasurementWindow> {
        self.cycles.iter().flat_map(|c| c.windows.iter())
    }

    pub fn n_windows(&self) -> usize {
        self.cycles.iter().map(|c| c.windows.len()).sum()
    }

    pub fn correction_times(&self) -> Vec<f64> {
        self.cycles.iter().map(|c| c.correction_time).collect()
    }

    /// Time of the last correction (or window end), i.e. the span the schedule needs.
    pub fn end_time(&self) -> f64 {
        self.cycles.last().map(|c| c.correction_time).unwrap_or(0.0)
    }

    /// Windows per cycle when every cycle has the same count.
    pub fn windows_per_cycle(&self) -> Option<usize> {
        let n = self.cycles[0].windows.len();
        self.cycles.iter().all(|c| c.windows.len() == n).then_some(n)
    }

    /// `T_R / T_c` of the first cycle.
    pub fn duty_factor(&self) -> f64 {
        let first = &self.cycles[0];
        let ramsey: f64 = first.windows.iter().map(MeasurementWindow::duration).sum();
        ramsey / (first.correction_time - first.start())
    }

    /// Truncates to the first `n_cycles` cycles.
    pub fn truncated(&self, n_cycles: usize) -> Result<Self> {
        CycleSchedule::new(self.cycles.iter().take(n_cycles).cloned().collect())
    }
}

/// Packs windows of the given durations back to back in each cycle, appends
/// the dead time, and places the correction at the cycle end.
pub fn build_schedule(
    n_cycles: usize,
    ramsey_durations: &[f64],
    dead_time: f64,
    correction_at: CorrectionAt,
) -> Result<CycleSchedule> {
    if n_cycles == 0 {
        return Err(Error::config("n_cycles", "must be at least 1"));
    }
    if ramsey_durations.is_empty() {
        return Err(Error::config("ramsey_durations", "need at least one duration"));
    }
    if let Some(bad) = ramsey_durations.iter().find(|&&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::config("ramsey_durations", format!("durations must be positive, got {bad}")));
    }
    if !(dead_time >= 0.0 && dead_time.is_finite()) {
        return Err(Error::config("dead_time", format!("must be non-negative, got {dead_time}")));
    }
    let CorrectionAt::CycleEnd = correction_at;
    let mut t = 0.0;
    let mut cycles = Vec::with_capacity(n_cycles);
    for _ in 0..n_cycles {
        let mut windows = Vec::with_capacity(ramsey_durations.len());
        for &d in ramsey_durations {
            windows.push(MeasurementWindow::new(t, t + d)?);
            t += d;
        }
        t += dead_time;
        cycles.push(Cycle { windows, correction_time: t });
    }
    CycleSchedule::new(cycles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::Component;
    use std::f64::consts::PI;

    fn cosine(omega: f64, amplitude: f64) -> NoiseRealization {
        NoiseRealization::from_components(vec![Component { omega, amplitude, phase: 0.0 }], 100.0).unwrap()
    }

    #[test]
    fn constant_signal_averages_to_itself() {
        let r = NoiseRealization::zero(10.0).unwrap().with_offset(2.5e-3);
        let w = MeasurementWindow::new(1.0, 3.5).unwrap();
        assert_eq!(sample_window(&r, &w).unwrap(), 2.5e-3);
    }

    #[test]
    fn full_period_averages_to_zero() {
        let t_r = 1.7;
        let r = cosine(2.0 * PI / t_r, 1.0);
        let w = MeasurementWindow::new(0.0, t_r).unwrap();
        assert!(sample_window(&r, &w).unwrap().abs() < 1e-15);
    }

    #[test]
    fn quarter_period_average_is_two_over_pi() {
        // (1/T) int_0^T cos(w t) dt = sin(wT)/(wT)
        let t = 0.8;
        let w = MeasurementWindow::new(0.0, t).unwrap();
        let r = cosine(0.5 * PI / t, 1.0);
        assert!((sample_window(&r, &w).unwrap() - 2.0 / PI).abs() < 1e-14);
        let r = cosine(PI / t, 1.0);
        assert!(sample_window(&r, &w).unwrap().abs() < 1e-15);
    }

    #[test]
    fn window_outside_realization_rejected() {
        let r = NoiseRealization::zero(5.0).unwrap();
        assert!(sample_window(&r, &MeasurementWindow::new(4.0, 6.0).unwrap()).is_err());
    }

    #[test]
    fn sampling_is_linear_in_the_realization() {
        let a = cosine(1.3, 0.7);
        let b = cosine(4.1, -1.9).with_offset(0.2);
        let w = MeasurementWindow::new(2.0, 2.9).unwrap();
        let mix = a.superpose(2.0, &b, -0.5);
        let lhs = sample_window(&mix, &w).unwrap();
        let rhs = 2.0 * sample_window(&a, &w).unwrap() - 0.5 * sample_window(&b, &w).unwrap();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn sensitivity_levels() {
        let w = MeasurementWindow::new(0.0, 3.0).unwrap();
        let v = MeasurementWindow::new(5.0, 5.1).unwrap();
        assert_eq!(mean_sensitivity(&w), 1.0);
        assert_eq!(mean_sensitivity(&v), 1.0);
        let half = MeasurementWindow::with_sensitivity(0.0, 1.0, SensitivityKind::Flat { level: 0.5 }).unwrap();
        assert_eq!(half.mean_sensitivity(), 0.5);
        assert!(MeasurementWindow::with_sensitivity(0.0, 1.0, SensitivityKind::Flat { level: 1.5 }).is_err());
        assert!(MeasurementWindow::new(1.0, 1.0).is_err());
    }

    #[test]
    fn single_cycle_half_duty() {
        let s = build_schedule(1, &[1.0], 1.0, CorrectionAt::CycleEnd).unwrap();
        assert_eq!(s.cycles()[0].windows[0], MeasurementWindow::new(0.0, 1.0).unwrap());
        assert_eq!(s.cycles()[0].correction_time, 2.0);
        assert_eq!(s.duty_factor(), 0.5);
    }

    #[test]
    fn no_dead_time_corrects_at_window_end() {
        let s = CycleSchedule::uniform(3, 2.0, 0.0).unwrap();
        for c in s.cycles() {
            assert_eq!(c.correction_time, c.windows[0].t_end);
        }
        assert_eq!(s.duty_factor(), 1.0);
    }

    #[test]
    fn long_then_short_packing() {
        let s = build_schedule(2, &[0.8, 0.2], 1.0, CorrectionAt::CycleEnd).unwrap();
        let c = &s.cycles()[0];
        assert_eq!((c.windows[0].t_start, c.windows[0].t_end), (0.0, 0.8));
        assert_eq!((c.windows[1].t_start, c.windows[1].t_end), (0.8, 1.0));
        assert_eq!(c.correction_time, 2.0);
        assert_eq!(s.cycles()[1].windows[0].t_start, 2.0);
        assert_eq!(s.windows_per_cycle(), Some(2));
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(build_schedule(0, &[1.0], 0.0, CorrectionAt::CycleEnd).is_err());
        assert!(build_schedule(1, &[-1.0], 0.0, CorrectionAt::CycleEnd).is_err());
        assert!(build_schedule(1, &[1.0], -0.5, CorrectionAt::CycleEnd).is_err());
        let err = CycleSchedule::from_duty_factor(5, 1.0, 1.2).unwrap_err();
        assert!(err.to_string().contains("duty_factor"));
    }

    #[test]
    fn duty_factor_schedule() {
        let s = CycleSchedule::from_duty_factor(4, 2.0, 0.25).unwrap();
        assert!((s.duty_factor() - 0.25).abs() < 1e-15);
        assert_eq!(s.end_time(), 8.0);
        let times = s.correction_times();
        assert!(times.windows(2).all(|p| p[1] > p[0]));
    }
}
