//! Covariance blocks, hybrid-feedforward predictors and exact propagation of
//! covariances through a linear correction history.
//!
//! Every locked-oscillator sample and correction is a linear combination of
//! raw (free-running) probes: window averages of the LO and its value at the
//! correction instants. [`unroll_functionals`] builds those combinations cycle
//! by cycle, and [`ScheduleCovariance`] evaluates their covariances from the
//! pairwise probe covariances of [`crate::xfer`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ramsey::{CycleSchedule, MeasurementWindow};
use crate::spectra::PowerSpectrum;
use crate::xfer::{CovarianceEngine, Probe};

/// Ridge strength relative to `mean(diag(M))` for near-singular solves.
pub const RIDGE_LAMBDA: f64 = 1e-9;
/// Condition number above which the plain solve is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Block form of the `(n+1) x (n+1)` covariance of `n` samples and the value
/// at the prediction point.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBlocks {
    /// Measurement-measurement covariances.
    pub m: DMatrix<f64>,
    /// Measurement-prediction point covariances.
    pub f: DVector<f64>,
    /// Variance at the prediction point.
    pub sigma_cc: f64,
}

impl CovarianceBlocks {
    pub fn new(m: DMatrix<f64>, f: DVector<f64>, sigma_cc: f64) -> Result<Self> {
        let n = f.len();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::domain(format!("M is {}x{} but F has length {n}", m.nrows(), m.ncols())));
        }
        let scale = m.diagonal().iter().fold(sigma_cc.abs(), |a, &b| a.max(b.abs()));
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::domain("M must be symmetric"));
                }
            }
        }
        Ok(CovarianceBlocks { m, f, sigma_cc })
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// All blocks divided by `sigma_cc` (unit point variance).
    pub fn normalized(&self) -> Result<Self> {
        if !(self.sigma_cc > 0.0) {
            return Err(Error::DegenerateSpectrum);
        }
        Ok(CovarianceBlocks { m: &self.m / self.sigma_cc, f: &self.f / self.sigma_cc, sigma_cc: 1.0 })
    }

    /// The assembled `[M F; F^T sigma_cc]`.
    pub fn full(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut s = DMatrix::zeros(n + 1, n + 1);
        s.view_mut((0, 0), (n, n)).copy_from(&self.m);
        for i in 0..n {
            s[(i, n)] = self.f[i];
            s[(n, i)] = self.f[i];
        }
        s[(n, n)] = self.sigma_cc;
        s
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.full()).eigenvalues.min()
    }

    /// True when the full matrix is positive semidefinite up to `1e-9 * trace`.
    pub fn is_psd(&self) -> bool {
        let full = self.full();
        self.min_eigenvalue() >= -1e-9 * full.trace().abs()
    }

    /// `max |eig| / min |eig|` of `M`.
    pub fn condition_number(&self) -> f64 {
        condition_number(&self.m)
    }
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Assembles `M`, `F` and the point variance for `windows` predicting `y(t_c)`.
pub fn build_sigma(spectrum: &PowerSpectrum, windows: &[MeasurementWindow], t_c: f64) -> Result<CovarianceBlocks> {
    let mut engine = CovarianceEngine::new(spectrum);
    build_sigma_with(&mut engine, windows, t_c)
}

pub fn build_sigma_with(
    engine: &mut CovarianceEngine,
    windows: &[MeasurementWindow],
    t_c: f64,
) -> Result<CovarianceBlocks> {
    if windows.is_empty() {
        return Err(Error::domain("need at least one window"));
    }
    if windows.windows(2).any(|p| p[1].t_start < p[0].t_end) {
        return Err(Error::domain("windows must be disjoint and time-ordered"));
    }
    let last = windows.last().unwrap();
    if t_c < last.t_end {
        return Err(Error::domain(format!("prediction time {t_c} precedes last window end {}", last.t_end)));
    }
    let mut probes: Vec<Probe> = windows.iter().map(Probe::window).collect();
    probes.push(Probe::point(t_c));
    let full = engine.matrix(&probes)?;
    let n = windows.len();
    CovarianceBlocks::new(
        full.view((0, 0), (n, n)).into_owned(),
        full.view((0, n), (n, 1)).column(0).into_owned(),
        full[(n, n)],
    )
}

fn normalized_quadratic(blocks: &CovarianceBlocks) -> Result<(CovarianceBlocks, f64)> {
    let nb = blocks.normalized()?;
    if nb.f.iter().all(|&x| x == 0.0) {
        return Err(Error::NoCorrelation);
    }
    let q = nb.f.dot(&(&nb.m * &nb.f));
    if !(q > 0.0) {
        return Err(Error::domain(format!(
            "F^T M F = {q:e} is not positive; covariance blocks are not positive definite"
        )));
    }
    Ok((nb, q))
}

/// Coefficients `c = w F / sqrt(F^T M F) * (1/2pi) integral S`, evaluated on
/// blocks normalized to unit point variance, where the integral term becomes
/// `point_variance / sigma_cc`.
pub fn predictor_coeffs_paper(blocks: &CovarianceBlocks, gain: f64, spectrum: &PowerSpectrum) -> Result<DVector<f64>> {
    let (nb, q) = normalized_quadratic(blocks)?;
    let integral = spectrum.point_variance() / blocks.sigma_cc;
    Ok(&nb.f * (gain * integral / q.sqrt()))
}

/// The same form with the integral term taken as the blocks' own point
/// variance, i.e. `c = w F_n / sqrt(F_n^T M_n F_n)`. Used when the target is a
/// locked-oscillator value whose variance is not the spectrum's.
pub fn paper_coeffs_normalized(blocks: &CovarianceBlocks, gain: f64) -> Result<DVector<f64>> {
    let (nb, q) = normalized_quadratic(blocks)?;
    Ok(&nb.f * (gain / q.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmseSolution {
    pub coeffs: Vec<f64>,
    pub condition_number: f64,
    /// Absolute ridge added to the diagonal of normalized `M`, if any.
    pub ridge: Option<f64>,
    /// Residual mean-square error `sigma_cc - F^T c`.
    pub mse: f64,
}

fn solve_normalized(nb: &CovarianceBlocks, ridge: f64) -> Option<DVector<f64>> {
    let mut m = nb.m.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += ridge;
    }
    match m.clone().cholesky() {
        Some(ch) => Some(ch.solve(&nb.f)),
        None => m.lu().solve(&nb.f),
    }
}

/// Linear MMSE predictor `c = M^-1 F`. Refuses condition numbers above
/// [`MAX_CONDITION`], returning the ridge-regularized coefficients inside the error.
pub fn predictor_coeffs_mmse(blocks: &CovarianceBlocks) -> Result<MmseSolution> {
    let sol = predictor_coeffs_mmse_ridge(blocks)?;
    if let Some(ridge) = sol.ridge {
        return Err(Error::Singular { condition: sol.condition_number, fallback: sol.coeffs, ridge });
    }
    Ok(sol)
}

/// `M^-1 F`, adding `RIDGE_LAMBDA * mean(diag(M))` to the diagonal when `M` is
/// ill-conditioned. The solve is done on normalized blocks; coefficients are
/// scale-free so they apply to raw samples unchanged.
pub fn predictor_coeffs_mmse_ridge(blocks: &CovarianceBlocks) -> Result<MmseSolution> {
    let nb = blocks.normalized()?;
    let condition = condition_number(&nb.m);
    let ridge = if condition > MAX_CONDITION || !condition.is_finite() {
        Some(RIDGE_LAMBDA * nb.m.diagonal().mean())
    } else {
        None
    };
    let c = solve_normalized(&nb, ridge.unwrap_or(0.0))
        .ok_or_else(|| Error::domain("measurement covariance could not be factorized"))?;
    let mse = blocks.sigma_cc * (1.0 - nb.f.dot(&c));
    Ok(MmseSolution { coeffs: c.iter().copied().collect(), condition_number: condition, ridge, mse })
}

/// Correction accuracy `(1 + w^2 - w |F|^2 / sqrt(F^T M F))^-1` on normalized blocks.
pub fn accuracy_analytic(blocks: &CovarianceBlocks, gain: f64) -> Result<f64> {
    if gain == 0.0 {
        return Ok(1.0);
    }
    let nb = blocks.normalized()?;
    let q = nb.f.dot(&(&nb.m * &nb.f));
    if !(q > 0.0) {
        return Err(Error::domain(format!("F^T M F = {q:e} must be positive")));
    }
    Ok(1.0 / (1.0 + gain * gain - gain * nb.f.norm_squared() / q.sqrt()))
}

/// `<y(t_c)^2> / <(y(t_c) - c . y_bar)^2>` for arbitrary coefficients.
pub fn accuracy_of_coeffs(blocks: &CovarianceBlocks, coeffs: &[f64]) -> f64 {
    let c = DVector::from_column_slice(coeffs);
    let residual = blocks.sigma_cc - 2.0 * c.dot(&blocks.f) + c.dot(&(&blocks.m * &c));
    blocks.sigma_cc / residual
}

/// `sqrt(F^T M F) < |F|^2 / w`, evaluated on normalized blocks. False for `w <= 0`.
pub fn correlation_condition(blocks: &CovarianceBlocks, gain: f64) -> bool {
    if !(gain > 0.0) {
        return false;
    }
    let Ok(nb) = blocks.normalized() else {
        return false;
    };
    let q = nb.f.dot(&(&nb.m * &nb.f)).max(0.0);
    q.sqrt() < nb.f.norm_squared() / gain
}

/// A raw observation of the free-running LO referenced by a functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProbeId {
    /// Window average, by global window index in schedule order.
    Window(usize),
    /// Point value at the correction instant of the given cycle.
    Point(usize),
}

/// `sum_i alpha_i * raw_i` over raw LO probes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearFunctional {
    pub terms: Vec<(ProbeId, f64)>,
}

impl LinearFunctional {
    pub fn single(id: ProbeId) -> Self {
        LinearFunctional { terms: vec![(id, 1.0)] }
    }

    pub fn coefficient(&self, id: ProbeId) -> f64 {
        self.terms.iter().filter(|t| t.0 == id).map(|t| t.1).sum()
    }

    pub fn scaled(&self, k: f64) -> Self {
        LinearFunctional { terms: self.terms.iter().map(|&(id, a)| (id, a * k)).collect() }
    }

    /// `self + k * other`, merged by probe.
    pub fn plus(&self, other: &Self, k: f64) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|&(id, a)| (id, a * k)));
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(ProbeId, f64)> = Vec::with_capacity(terms.len());
        for (id, a) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == id => last.1 += a,
                _ => merged.push((id, a)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        LinearFunctional { terms: merged }
    }

    fn from_dense(dense: &[f64], n_windows: usize) -> Self {
        LinearFunctional {
            terms: dense
                .iter()
                .enumerate()
                .filter(|(_, &a)| a != 0.0)
                .map(|(i, &a)| {
                    let id = if i < n_windows { ProbeId::Window(i) } else { ProbeId::Point(i - n_windows) };
                    (id, a)
                })
                .collect(),
        }
    }

    pub(crate) fn to_dense(&self, n_windows: usize, n_points: usize) -> Vec<f64> {
        let mut d = vec![0.0; n_windows + n_points];
        for &(id, a) in &self.terms {
            let i = match id {
                ProbeId::Window(i) => i,
                ProbeId::Point(k) => n_windows + k,
            };
            d[i] += a;
        }
        d
    }
}

/// One cycle's correction `C = -sum_i coeffs_i * y_llo[inputs_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRule {
    /// Global window indices of the locked samples used.
    pub inputs: Vec<usize>,
    pub coeffs: Vec<f64>,
    /// Set while a moving-average predictor has fewer than `n` samples.
    pub warm_up: bool,
}

impl CorrectionRule {
    pub fn none() -> Self {
        CorrectionRule { inputs: Vec::new(), coeffs: Vec::new(), warm_up: false }
    }
}

/// Every locked quantity of a schedule as a functional of raw probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unrolled {
    /// Locked sample of every window, schedule order.
    pub samples: Vec<LinearFunctional>,
    /// Correction of every cycle.
    pub corrections: Vec<LinearFunctional>,
    /// Locked offset at each correction instant, before and after the correction.
    pub offsets_before: Vec<LinearFunctional>,
    pub offsets_after: Vec<LinearFunctional>,
}

/// Dense incremental unroller. Probe index layout: windows first, then points.
#[derive(Debug, Clone)]
pub(crate) struct Unroller<'a> {
    schedule: &'a CycleSchedule,
    windows: Vec<MeasurementWindow>,
    n_windows: usize,
    n_points: usize,
    running: Vec<f64>,
    pub(crate) samples: Vec<Vec<f64>>,
    pub(crate) corrections: Vec<Vec<f64>>,
    pub(crate) before: Vec<Vec<f64>>,
    pub(crate) after: Vec<Vec<f64>>,
    cycle: usize,
}

impl<'a> Unroller<'a> {
    pub(crate) fn new(schedule: &'a CycleSchedule) -> Self {
        let windows: Vec<MeasurementWindow> = schedule.windows().copied().collect();
        let n_windows = windows.len();
        let n_points = schedule.n_cycles();
        Unroller {
            schedule,
            windows,
            n_windows,
            n_points,
            running: vec![0.0; n_windows + n_points],
            samples: Vec::with_capacity(n_windows),
            corrections: Vec::with_capacity(n_points),
            before: Vec::with_capacity(n_points),
            after: Vec::with_capacity(n_points),
            cycle: 0,
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.n_windows + self.n_points
    }

    /// Adds the current cycle's locked samples; returns the target functional
    /// `y_llo(t_c^-)` of the cycle.
    pub(crate) fn open_cycle(&mut self) -> Vec<f64> {
        let k = self.cycle;
        let count = self.schedule.cycles()[k].windows.len();
        for _ in 0..count {
            let idx = self.samples.len();
            let level = self.windows[idx].sensitivity.level();
            let mut v: Vec<f64> = self.running.iter().map(|&s| level * s).collect();
            v[idx] += 1.0;
            self.samples.push(v);
        }
        let mut target = self.running.clone();
        target[self.n_windows + k] += 1.0;
        target
    }

    pub(crate) fn close_cycle(&mut self, rule: &CorrectionRule, target: Vec<f64>) {
        let mut c = vec![0.0; self.dim()];
        for (&i, &a) in rule.inputs.iter().zip(&rule.coeffs) {
            for (cj, sj) in c.iter_mut().zip(&self.samples[i]) {
                *cj -= a * sj;
            }
        }
        for (r, cj) in self.running.iter_mut().zip(&c) {
            *r += cj;
        }
        let after: Vec<f64> = target.iter().zip(&c).map(|(t, cj)| t + cj).collect();
        self.before.push(target);
        self.after.push(after);
        self.corrections.push(c);
        self.cycle += 1;
    }

    pub(crate) fn finish(self) -> Unrolled {
        let nw = self.n_windows;
        let conv = |v: &Vec<Vec<f64>>| v.iter().map(|d| LinearFunctional::from_dense(d, nw)).collect();
        Unrolled {
            samples: conv(&self.samples),
            corrections: conv(&self.corrections),
            offsets_before: conv(&self.before),
            offsets_after: conv(&self.after),
        }
    }
}

/// Expresses every locked sample, correction and correction-time offset as a
/// linear combination of raw LO probes, given one [`CorrectionRule`] per cycle.
pub fn unroll_functionals(schedule: &CycleSchedule, rules: &[CorrectionRule]) -> Result<Unrolled> {
    if rules.len() != schedule.n_cycles() {
        return Err(Error::config(
            "controller",
            format!("{} correction rules for {} cycles", rules.len(), schedule.n_cycles()),
        ));
    }
    let mut u = Unroller::new(schedule);
    let mut seen = 0;
    for (k, rule) in rules.iter().enumerate() {
        seen += schedule.cycles()[k].windows.len();
        if rule.inputs.len() != rule.coeffs.len() || rule.inputs.iter().any(|&i| i >= seen) {
            return Err(Error::config("controller", format!("cycle {k} references a future or unknown window")));
        }
        let target = u.open_cycle();
        u.close_cycle(rule, target);
    }
    Ok(u.finish())
}

/// Pairwise covariance of all raw probes of a schedule: windows, then the
/// LO value at every correction instant.
#[derive(Debug, Clone)]
pub struct ScheduleCovariance {
    n_windows: usize,
    n_points: usize,
    matrix: DMatrix<f64>,
}

impl ScheduleCovariance {
    pub fn new(engine: &mut CovarianceEngine, schedule: &CycleSchedule) -> Result<Self> {
        let mut probes: Vec<Probe> = schedule.windows().map(Probe::window).collect();
        let n_windows = probes.len();
        probes.extend(schedule.cycles().iter().map(|c| Probe::point(c.correction_time)));
        let matrix = engine.matrix(&probes)?;
        Ok(ScheduleCovariance { n_windows, n_points: schedule.n_cycles(), matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub(crate) fn apply(&self, dense: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(dense);
        (&self.matrix * v).iter().copied().collect()
    }

    pub(crate) fn dense_cov(&self, a: &[f64], b: &[f64]) -> f64 {
        let sb = self.apply(b);
        a.iter().zip(&sb).map(|(x, y)| x * y).sum()
    }

    pub fn covariance(&self, fa: &LinearFunctional, fb: &LinearFunctional) -> f64 {
        let a = fa.to_dense(self.n_windows, self.n_points);
        let b = fb.to_dense(self.n_windows, self.n_points);
        self.dense_cov(&a, &b)
    }

    /// Term-by-term double sum `sum_i sum_j a_i b_j Cov(raw_i, raw_j)`.
    pub fn covariance_bilinear(&self, fa: &LinearFunctional, fb: &LinearFunctional) -> f64 {
        let idx = |id: ProbeId| match id {
            ProbeId::Window(i) => i,
            ProbeId::Point(k) => self.n_windows + k,
        };
        let mut acc = 0.0;
        for &(ia, a) in &fa.terms {
            for &(ib, b) in &fb.terms {
                acc += a * b * self.matrix[(idx(ia), idx(ib))];
            }
        }
        acc
    }
}

/// Covariance of two functionals over the probes of `schedule`.
pub fn llo_covariance(
    spectrum: &PowerSpectrum,
    schedule: &CycleSchedule,
    fa: &LinearFunctional,
    fb: &LinearFunctional,
) -> Result<f64> {
    let mut engine = CovarianceEngine::new(spectrum);
    let cov = ScheduleCovariance::new(&mut engine, schedule)?;
    Ok(cov.covariance_bilinear(fa, fb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::Spur;

    fn blocks(m: &[f64], f: &[f64], s: f64) -> CovarianceBlocks {
        let n = f.len();
        CovarianceBlocks::new(DMatrix::from_row_slice(n, n, m), DVector::from_column_slice(f), s).unwrap()
    }

    #[test]
    fn paper_form_perfect_correlation_unit_gain() {
        let b = blocks(&[1.0], &[1.0], 1.0);
        let s = PowerSpectrum::white(1.0, 0.1, 0.1 + std::f64::consts::TAU).unwrap();
        let c = predictor_coeffs_paper(&b, 1.0, &s).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12, "{c}");
        let z = predictor_coeffs_paper(&b, 0.0, &s).unwrap();
        assert_eq!(z[0], 0.0);
        let b2 = blocks(&[0.8, 0.3, 0.3, 0.9], &[0.5, 0.7], 1.3);
        let c1 = predictor_coeffs_paper(&b2, 1.0, &s).unwrap();
        let c2 = predictor_coeffs_paper(&b2, 2.0, &s).unwrap();
        assert!((&c2 - &c1 * 2.0).norm() < 1e-14);
    }

    #[test]
    fn paper_form_errors() {
        let s = PowerSpectrum::white(1.0, 0.1, 10.0).unwrap();
        assert!(matches!(predictor_coeffs_paper(&blocks(&[1.0], &[0.0], 1.0), 1.0, &s), Err(Error::NoCorrelation)));
    }

    #[test]
    fn mmse_cases() {
        let b = blocks(&[1.0, 0.0, 0.0, 1.0], &[0.3, -0.2], 1.0);
        let sol = predictor_coeffs_mmse(&b).unwrap();
        assert!((sol.coeffs[0] - 0.3).abs() < 1e-14 && (sol.coeffs[1] + 0.2).abs() < 1e-14);
        let b1 = blocks(&[2.0], &[0.5], 3.0);
        let sol = predictor_coeffs_mmse(&b1).unwrap();
        assert!((sol.coeffs[0] - 0.25).abs() < 1e-14);
        assert!(sol.mse >= 0.0 && sol.mse <= 3.0);
    }

    #[test]
    fn mmse_flags_singular_matrix() {
        let b = blocks(&[1.0, 1.0, 1.0, 1.0], &[0.9, 0.9], 1.0);
        match predictor_coeffs_mmse(&b) {
            Err(Error::Singular { fallback, ridge, .. }) => {
                assert!(ridge > 0.0);
                assert!((fallback[0] + fallback[1] - 0.9).abs() < 1e-6);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
        assert!(predictor_coeffs_mmse_ridge(&b).unwrap().ridge.is_some());
    }

    #[test]
    fn accuracy_limits() {
        let b = blocks(&[1.0], &[1.0], 1.0);
        assert_eq!(accuracy_analytic(&b, 0.0).unwrap(), 1.0);
        assert!((accuracy_analytic(&b, 1.0).unwrap() - 1.0).abs() < 1e-15);
        // vanishing F: 1 / (1 + w^2)
        let tiny = blocks(&[1.0], &[1e-9], 1.0);
        assert!((accuracy_analytic(&tiny, 1.0).unwrap() - 0.5).abs() < 1e-8);
        // the residual form diverges for perfect unit-gain cancellation
        assert!(accuracy_of_coeffs(&b, &[1.0]).is_infinite());
    }

    #[test]
    fn correlation_condition_arithmetic() {
        assert!(!correlation_condition(&blocks(&[1.0], &[0.0], 1.0), 1.0));
        assert!(!correlation_condition(&blocks(&[1.0], &[0.9], 1.0), 1.0));
        assert!(correlation_condition(&blocks(&[1.0], &[0.9], 1.0), 0.5));
    }

    #[test]
    fn rank_two_for_single_spur() {
        let s = PowerSpectrum::spurs_only(0.1, 10.0, vec![Spur::new(2.0, 0.4).unwrap()]).unwrap();
        let w = [MeasurementWindow::new(0.0, 0.5).unwrap(), MeasurementWindow::new(0.7, 1.5).unwrap()];
        let b = build_sigma(&s, &w, 2.0).unwrap();
        let full = b.full();
        let eig = SymmetricEigen::new(full.clone()).eigenvalues;
        let mut sorted: Vec<f64> = eig.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        // cos and sin quadratures of one line span two dimensions
        assert!(sorted[0].abs() < 1e-12 * full.trace());
        assert!(sorted[1] > 1e-6 * full.trace());
        assert!(b.is_psd());
    }

    #[test]
    fn diagonal_matches_single_window_variance() {
        let s = PowerSpectrum::power_law(1.0, 1.0, 0.0628, 100.0).unwrap();
        let w = [MeasurementWindow::new(0.0, 0.5).unwrap(), MeasurementWindow::new(0.5, 1.5).unwrap()];
        let b = build_sigma(&s, &w, 2.0).unwrap();
        for (i, wi) in w.iter().enumerate() {
            let v = crate::xfer::overlap_integral(&s, &crate::xfer::TransferFunction::SingleSinc2(*wi)).unwrap().value;
            assert!((b.m[(i, i)] - v).abs() <= 1e-10 * v);
        }
    }

    #[test]
    fn feedback_unroll_is_first_difference() {
        let schedule = CycleSchedule::uniform(4, 1.0, 0.5).unwrap();
        let rules: Vec<CorrectionRule> =
            (0..4).map(|k| CorrectionRule { inputs: vec![k], coeffs: vec![1.0], warm_up: false }).collect();
        let u = unroll_functionals(&schedule, &rules).unwrap();
        for k in 1..4 {
            let s = &u.samples[k];
            assert_eq!(s.coefficient(ProbeId::Window(k)), 1.0);
            assert_eq!(s.coefficient(ProbeId::Window(k - 1)), -1.0);
            assert_eq!(s.terms.len(), 2);
        }
    }

    #[test]
    fn free_run_unroll_is_identity() {
        let schedule = CycleSchedule::uniform(3, 1.0, 0.0).unwrap();
        let u = unroll_functionals(&schedule, &vec![CorrectionRule::none(); 3]).unwrap();
        for (k, s) in u.samples.iter().enumerate() {
            assert_eq!(*s, LinearFunctional::single(ProbeId::Window(k)));
        }
        assert!(u.corrections.iter().all(|c| c.terms.is_empty()));
    }

    #[test]
    fn one_step_hybrid_unroll() {
        let schedule = CycleSchedule::uniform(2, 1.0, 1.0).unwrap();
        let c1 = 0.7;
        let rules = vec![CorrectionRule { inputs: vec![0], coeffs: vec![c1], warm_up: false }, CorrectionRule::none()];
        let u = unroll_functionals(&schedule, &rules).unwrap();
        assert_eq!(u.corrections[0].coefficient(ProbeId::Window(0)), -c1);
        assert_eq!(u.samples[1].coefficient(ProbeId::Window(1)), 1.0);
        assert_eq!(u.samples[1].coefficient(ProbeId::Window(0)), -c1);
    }

    #[test]
    fn future_inputs_rejected() {
        let schedule = CycleSchedule::uniform(2, 1.0, 0.0).unwrap();
        let rules = vec![CorrectionRule { inputs: vec![1], coeffs: vec![1.0], warm_up: false }, CorrectionRule::none()];
        assert!(unroll_functionals(&schedule, &rules).is_err());
    }

    #[test]
    fn functional_plus_merges() {
        let a = LinearFunctional::single(ProbeId::Window(0));
        let b = LinearFunctional::single(ProbeId::Window(0)).plus(&LinearFunctional::single(ProbeId::Point(1)), 2.0);
        let c = a.plus(&b, -1.0);
        assert_eq!(c.terms, vec![(ProbeId::Point(1), -2.0)]);
    }
}
