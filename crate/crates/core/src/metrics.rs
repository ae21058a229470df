//! Stability statistics: sample and Allan variance of sample sequences, their
//! exact ensemble expectations for locked oscillators, and Monte Carlo
//! ensembles with per-N curves.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ratio_of_means, AccuracyEstimate, ControllerKind, Ensemble, LoopPlan, RawObservations};
use crate::error::{Error, Result};
use crate::estimator::{LinearFunctional, ScheduleCovariance};
use crate::ramsey::CycleSchedule;
use crate::spectra::PowerSpectrum;
use crate::xfer::{overlap_integral, CovarianceEngine, TransferFunction};

/// Ensemble mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStat {
    pub mean: f64,
    pub std_error: f64,
    pub n_realizations: usize,
}

impl EnsembleStat {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::domain(format!("ensemble statistics need at least 2 values, got {n}")));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(EnsembleStat { mean, std_error: (var / n as f64).sqrt(), n_realizations: n })
    }
}

/// `(1/(N-1)) sum (y_k - mean)^2`.
pub fn sample_variance(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::domain(format!("sample variance needs N >= 2, got {n}")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    Ok(samples.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64)
}

/// Half the mean squared difference of consecutive samples.
pub fn allan_variance_td(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::domain(format!("Allan variance needs N >= 2, got {n}")));
    }
    let sum: f64 = samples.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum();
    Ok(0.5 * sum / (n - 1) as f64)
}

/// Sample variance of every prefix: entry `i` is for the first `i + 2` samples.
pub fn sample_variance_prefixes(samples: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len().saturating_sub(1));
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &y) in samples.iter().enumerate() {
        let n = (i + 1) as f64;
        let delta = y - mean;
        mean += delta / n;
        m2 += delta * (y - mean);
        if i >= 1 {
            out.push(m2 / (n - 1.0));
        }
    }
    out
}

/// Allan variance of every prefix: entry `i` is for the first `i + 2` samples.
pub fn allan_variance_prefixes(samples: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    samples
        .windows(2)
        .enumerate()
        .map(|(i, p)| {
            acc += (p[1] - p[0]).powi(2);
            0.5 * acc / (i + 1) as f64
        })
        .collect()
}

/// Allan variance from the spectrum: overlap integral with the Allan kernel.
pub fn allan_variance_fd(spectrum: &PowerSpectrum, ramsey: f64) -> Result<f64> {
    if !(ramsey > 0.0) {
        return Err(Error::domain(format!("Ramsey time must be positive, got {ramsey}")));
    }
    Ok(overlap_integral(spectrum, &TransferFunction::Allan { ramsey })?.value)
}

/// Exact second moments of a plan's locked quantities.
#[derive(Debug, Clone)]
pub struct LockedMoments {
    cov: ScheduleCovariance,
    plan: LoopPlan,
}

impl LockedMoments {
    pub fn new(spectrum: &PowerSpectrum, schedule: &CycleSchedule, controller: ControllerKind) -> Result<Self> {
        let mut engine = CovarianceEngine::new(spectrum);
        let cov = ScheduleCovariance::new(&mut engine, schedule)?;
        let plan = LoopPlan::with_covariance(&cov, schedule, controller)?;
        Ok(LockedMoments { cov, plan })
    }

    pub fn from_parts(cov: ScheduleCovariance, plan: LoopPlan) -> Self {
        LockedMoments { cov, plan }
    }

    pub fn plan(&self) -> &LoopPlan {
        &self.plan
    }

    pub fn covariance(&self, a: &LinearFunctional, b: &LinearFunctional) -> f64 {
        self.cov.covariance(a, b)
    }

    /// Covariance matrix of `n` locked samples starting at sample `skip`.
    pub fn sample_covariance(&self, skip: usize, n: usize) -> Result<DMatrix<f64>> {
        let samples = &self.plan.unrolled().samples;
        if skip + n > samples.len() {
            return Err(Error::domain(format!(
                "schedule has {} samples, asked for {n} after skipping {skip}",
                samples.len()
            )));
        }
        let dense: Vec<Vec<f64>> = samples[skip..skip + n].iter().map(|f| self.dense(f)).collect();
        let applied: Vec<Vec<f64>> = dense.iter().map(|d| self.cov.apply(d)).collect();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = dense[i].iter().zip(&applied[j]).map(|(a, b)| a * b).sum();
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        Ok(c)
    }

    fn dense(&self, f: &LinearFunctional) -> Vec<f64> {
        let schedule = self.plan.schedule();
        f.to_dense(schedule.n_windows(), schedule.n_cycles())
    }

    /// `Var(y_llo_k)` of locked sample `k`.
    pub fn true_variance(&self, k: usize) -> f64 {
        let f = &self.plan.unrolled().samples[k];
        self.cov.covariance(f, f)
    }

    /// `<s^2_N>` of the samples following the first `skip`, for every `N`
    /// from 2 to `n_max`.
    pub fn sample_variance_curve(&self, skip: usize, n_max: usize) -> Result<Vec<f64>> {
        let c = self.sample_covariance(skip, n_max)?;
        // E s^2_N = (tr C_N - 1^T C_N 1 / N) / (N - 1), accumulated over prefixes.
        let mut out = Vec::with_capacity(n_max.saturating_sub(1));
        let (mut trace, mut total) = (0.0, 0.0);
        for n in 0..n_max {
            trace += c[(n, n)];
            let row: f64 = (0..n).map(|j| c[(n, j)]).sum();
            total += c[(n, n)] + 2.0 * row;
            if n >= 1 {
                let nn = (n + 1) as f64;
                out.push((trace - total / nn) / (nn - 1.0));
            }
        }
        Ok(out)
    }

    /// `<sigma^2_A>` over `N` locked samples after the first `skip`, for every
    /// `N` from 2 to `n_max`.
    pub fn allan_variance_curve(&self, skip: usize, n_max: usize) -> Result<Vec<f64>> {
        let c = self.sample_covariance(skip, n_max)?;
        let mut acc = 0.0;
        Ok((1..n_max)
            .map(|k| {
                acc += c[(k, k)] + c[(k - 1, k - 1)] - 2.0 * c[(k, k - 1)];
                0.5 * acc / k as f64
            })
            .collect())
    }

    /// `(1/2) Var(y_llo_{k+1} - y_llo_k)`, one Allan term.
    pub fn allan_term(&self, k: usize) -> f64 {
        let s = &self.plan.unrolled().samples;
        let d = s[k + 1].plus(&s[k], -1.0);
        0.5 * self.cov.covariance(&d, &d)
    }
}

/// Exact `<s^2_N>` of the first `N` locked samples.
pub fn expected_sample_variance_llo(
    spectrum: &PowerSpectrum,
    schedule: &CycleSchedule,
    controller: ControllerKind,
    n: usize,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("sample variance needs N >= 2, got {n}")));
    }
    let moments = LockedMoments::new(spectrum, schedule, controller)?;
    Ok(*moments.sample_variance_curve(0, n)?.last().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    SampleVariance,
    AllanVariance,
}

impl MetricKind {
    fn prefixes(&self, samples: &[f64]) -> Vec<f64> {
        match self {
            MetricKind::SampleVariance => sample_variance_prefixes(samples),
            MetricKind::AllanVariance => allan_variance_prefixes(samples),
        }
    }
}

/// Per-controller metric curves over a common ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurves {
    pub kind: MetricKind,
    /// Sample counts `N` of the curve points.
    pub n_values: Vec<usize>,
    pub labels: Vec<String>,
    /// `values[c][r][i]`: controller `c`, realization `r`, point `i`.
    values: Vec<Vec<Vec<f64>>>,
}

impl MetricCurves {
    pub fn n_realizations(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Per-realization metric values of controller `c` at curve point `i`.
    pub fn column(&self, c: usize, i: usize) -> Vec<f64> {
        self.values[c].iter().map(|r| r[i]).collect()
    }

    pub fn stat(&self, c: usize, i: usize) -> Result<EnsembleStat> {
        EnsembleStat::from_values(&self.column(c, i))
    }

    pub fn curve(&self, c: usize) -> Result<Vec<EnsembleStat>> {
        (0..self.n_values.len()).map(|i| self.stat(c, i)).collect()
    }

    /// `<metric_a> / <metric_b>` at point `i` over the shared realizations.
    pub fn ratio(&self, a: usize, b: usize, i: usize) -> Result<AccuracyEstimate> {
        ratio_of_means(&self.column(a, i), &self.column(b, i))
    }

    /// CSV with columns `N`, then `mean` and `std_error` per controller.
    pub fn write_csv<W: Write>(&self, mut out: W, precision: usize) -> Result<()> {
        let mut header = vec!["N".to_string()];
        for l in &self.labels {
            header.push(format!("{l}_mean"));
            header.push(format!("{l}_std_error"));
        }
        writeln!(out, "{}", header.join(","))?;
        let curves: Vec<Vec<EnsembleStat>> = (0..self.labels.len()).map(|c| self.curve(c)).collect::<Result<_>>()?;
        for (i, n) in self.n_values.iter().enumerate() {
            let mut row = vec![n.to_string()];
            for curve in &curves {
                row.push(format!("{:.p$e}", curve[i].mean, p = precision));
                row.push(format!("{:.p$e}", curve[i].std_error, p = precision));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs every plan over the same realizations and evaluates `kind` on the
/// locked samples for each `N` in `n_values` (prefix evaluation).
pub fn ensemble_curves(
    ensemble: &Ensemble,
    plans: &[LoopPlan],
    kind: MetricKind,
    n_values: &[usize],
) -> Result<MetricCurves> {
    if ensemble.size < 2 {
        return Err(Error::config("ensemble.size", format!("must be at least 2, got {}", ensemble.size)));
    }
    let Some(first) = plans.first() else {
        return Err(Error::config("controllers", "need at least one controller"));
    };
    let schedule = first.schedule();
    if plans.iter().any(|p| p.schedule() != schedule) {
        return Err(Error::domain("all plans must share one schedule"));
    }
    let total = schedule.n_windows();
    if n_values.is_empty() || n_values.iter().any(|&n| n < 2 || n > total) {
        return Err(Error::config("metric.n_values", format!("every N must lie in [2, {total}] for this schedule")));
    }
    let duration = schedule.end_time();
    let per_realization: Vec<Vec<Vec<f64>>> = (0..ensemble.size)
        .into_par_iter()
        .map(|r| -> Result<Vec<Vec<f64>>> {
            let obs = RawObservations::observe(&ensemble.realization(r, duration)?, schedule)?;
            plans
                .iter()
                .map(|plan| {
                    let prefixes = kind.prefixes(&plan.run(&obs)?.llo_samples());
                    Ok(n_values.iter().map(|&n| prefixes[n - 2]).collect())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut values = vec![Vec::with_capacity(ensemble.size); plans.len()];
    for per in per_realization {
        for (slot, v) in values.iter_mut().zip(per) {
            slot.push(v);
        }
    }
    Ok(MetricCurves {
        kind,
        n_values: n_values.to_vec(),
        labels: plans.iter().map(|p| p.controller().label()).collect(),
        values,
    })
}

/// Mean and standard error of `kind` over `N` locked samples, with an
/// optional full per-N curve.
pub fn ensemble_metric(
    spectrum: &PowerSpectrum,
    schedule: &CycleSchedule,
    controller: ControllerKind,
    kind: MetricKind,
    ensemble_size: usize,
    seed: u64,
) -> Result<(EnsembleStat, Vec<EnsembleStat>)> {
    let plan = LoopPlan::new(spectrum, schedule, controller)?;
    let n_values: Vec<usize> = (2..=schedule.n_windows()).collect();
    let curves = ensemble_curves(&Ensemble::new(spectrum, ensemble_size, seed), &[plan], kind, &n_values)?;
    let curve = curves.curve(0)?;
    Ok((*curve.last().unwrap(), curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::Spur;
    use crate::xfer::allan_tf;

    #[test]
    fn sample_variance_examples() {
        assert_eq!(sample_variance(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(sample_variance(&[4.0; 5]).unwrap(), 0.0);
        assert_eq!(sample_variance(&[0.0, 2.0]).unwrap(), 2.0);
        assert!(sample_variance(&[1.0]).is_err());
    }

    #[test]
    fn allan_variance_examples() {
        assert_eq!(allan_variance_td(&[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(allan_variance_td(&[3.0; 4]).unwrap(), 0.0);
        assert_eq!(allan_variance_td(&[0.0, 2.0]).unwrap(), 2.0);
        assert!(allan_variance_td(&[]).is_err());
    }

    #[test]
    fn prefixes_match_direct_evaluation() {
        let y = [0.3, -1.2, 2.5, 0.7, 0.1, -0.4];
        let sv = sample_variance_prefixes(&y);
        let av = allan_variance_prefixes(&y);
        for n in 2..=y.len() {
            assert!((sv[n - 2] - sample_variance(&y[..n]).unwrap()).abs() < 1e-14);
            assert!((av[n - 2] - allan_variance_td(&y[..n]).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn allan_fd_of_single_spur_is_point_mass() {
        let s = PowerSpectrum::spurs_only(0.01, 100.0, vec![Spur::new(3.0, 0.2).unwrap()]).unwrap();
        let v = allan_variance_fd(&s, 0.7).unwrap();
        assert!((v - 0.2 * allan_tf(3.0, 0.7)).abs() < 1e-14);
    }

    #[test]
    fn free_run_two_sample_expectation() {
        let s = PowerSpectrum::power_law(1.0, 1.0, 0.0628, 62.8).unwrap();
        let schedule = CycleSchedule::uniform(2, 0.6, 0.4).unwrap();
        let w: Vec<_> = schedule.windows().copied().collect();
        let v = expected_sample_variance_llo(&s, &schedule, ControllerKind::FreeRun, 2).unwrap();
        let c = |a, b| crate::xfer::covariance_of_windows(&s, a, b).unwrap();
        let oracle = 0.5 * (c(&w[0], &w[0]) + c(&w[1], &w[1]) - 2.0 * c(&w[0], &w[1]));
        assert!((v - oracle).abs() < 1e-10 * oracle);
    }

    #[test]
    fn ensemble_stat_of_two_values() {
        let s = EnsembleStat::from_values(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std_error, 1.0);
    }
}
