//! Nelder-Mead minimization, Ramsey-duration optimization and parameter sweeps.

use serde::{Deserialize, Serialize};

use crate::control::{
    accuracy_from_observations, ratio_of_means, AccuracyEstimate, CoeffMode, ControllerKind, Ensemble, LoopPlan,
};
use crate::error::{Error, Result};
use crate::estimator::{accuracy_analytic, accuracy_of_coeffs, build_sigma_with, ScheduleCovariance};
use crate::metrics::{ensemble_curves, EnsembleStat, LockedMoments, MetricKind};
use crate::ramsey::{build_schedule, CorrectionAt, CycleSchedule};
use crate::spectra::{PowerSpectrum, SynthesisGrid};
use crate::xfer::CovarianceEngine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    pub max_iters: usize,
    /// Stop when the simplex fits in a box of this half-width.
    pub x_tolerance: f64,
    /// Stop when the objective spread across vertices falls below this.
    pub f_tolerance: f64,
    /// Initial edge per dimension; empty means 5% of `|x0_i|` (or 2.5e-4 at zero).
    #[serde(default)]
    pub initial_step: Vec<f64>,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { max_iters: 2000, x_tolerance: 1e-8, f_tolerance: 1e-12, initial_step: Vec::new() }
    }
}

impl SimplexOptions {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("simplex.max_iters", "must be at least 1"));
        }
        if !(self.x_tolerance > 0.0) {
            return Err(Error::config("simplex.x_tolerance", "must be positive"));
        }
        if !(self.f_tolerance > 0.0) {
            return Err(Error::config("simplex.f_tolerance", "must be positive"));
        }
        if !self.initial_step.is_empty() && self.initial_step.len() != dim {
            return Err(Error::config(
                "simplex.initial_step",
                format!("has {} entries for a {dim}-dimensional problem", self.initial_step.len()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexResult {
    pub argmin: Vec<f64>,
    pub min_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// False when `max_iters` was reached before either tolerance.
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` from `x0`. Trial points with a non-finite objective are
/// rejected; a non-finite value at a simplex vertex is an error.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> Result<SimplexResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    if d == 0 {
        return Err(Error::domain("cannot optimize over zero dimensions"));
    }
    opts.validate(d)?;
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        f(x)
    };
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut x = x0.to_vec();
        let step = match opts.initial_step.get(i) {
            Some(&s) => s,
            None if x0[i] != 0.0 => 0.05 * x0[i],
            None => 2.5e-4,
        };
        x[i] += step;
        simplex.push(x);
    }
    let mut values = Vec::with_capacity(d + 1);
    for (vertex, x) in simplex.iter().enumerate() {
        let v = eval(x);
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective { vertex, point: x.clone() });
        }
        values.push(v);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        // stable sort keeps the older vertex first on ties
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let diameter = simplex[1..]
            .iter()
            .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if diameter < opts.x_tolerance || values[d] - values[0] < opts.f_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|x| x[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[d]).map(|(c, w)| c + t * (c - w)).collect() };
        let finite_or_inf = |v: f64| if v.is_finite() { v } else { f64::INFINITY };
        let xr = along(REFLECT);
        let fr = finite_or_inf(eval(&xr));
        if fr < values[0] {
            let xe = along(REFLECT * EXPAND);
            let fe = finite_or_inf(eval(&xe));
            if fe < fr {
                simplex[d] = xe;
                values[d] = fe;
            } else {
                simplex[d] = xr;
                values[d] = fr;
            }
            continue;
        }
        if fr < values[d - 1] {
            simplex[d] = xr;
            values[d] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < values[d] {
            let xc = along(REFLECT * CONTRACT);
            let fc = finite_or_inf(eval(&xc));
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(-CONTRACT);
            let fc = finite_or_inf(eval(&xc));
            let ok = fc < values[d];
            (xc, fc, ok)
        };
        if accept {
            simplex[d] = xc;
            values[d] = fc;
            continue;
        }
        for i in 1..=d {
            let shrunk: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + SHRINK * (x - b)).collect();
            let v = eval(&shrunk);
            if !v.is_finite() {
                return Err(Error::NonFiniteObjective { vertex: i, point: shrunk });
            }
            simplex[i] = shrunk;
            values[i] = v;
        }
    }
    let best = (0..=d).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Ok(SimplexResult { argmin: simplex[best].clone(), min_value: values[best], iterations, evaluations, converged })
}

/// How accuracy is evaluated inside the duration optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AccuracyEstimator {
    /// Ensemble ratio of squared offsets with common random numbers.
    MonteCarlo {
        ensemble_size: usize,
        seed: u64,
        #[serde(default)]
        grid: SynthesisGrid,
    },
    /// Exact `sigma / (sigma - 2 c.F + c^T M c)` for the controller's coefficients.
    Exact,
    /// The closed-form `(1 + w^2 - w |F|^2 / sqrt(F^T M F))^-1`.
    Formula,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationObjective {
    /// Maximize first-correction accuracy of an `n`-window block predictor.
    Accuracy {
        estimator: AccuracyEstimator,
        #[serde(default)]
        mode: CoeffMode,
        #[serde(default = "unit_gain")]
        gain: f64,
    },
    /// Minimize the exact expected sample variance of `n_samples` locked
    /// samples, with the duration pattern repeated every cycle.
    ExpectedSampleVariance {
        n_samples: usize,
        #[serde(default)]
        mode: CoeffMode,
        #[serde(default = "unit_gain")]
        gain: f64,
    },
}

fn unit_gain() -> f64 {
    1.0
}

/// Timing constraints for the `n` windows preceding a correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationProblem {
    pub n: usize,
    /// Shortest allowed window, also the feedback baseline window.
    pub t_min: f64,
    pub dead_time: f64,
    /// Fixed sum of the durations, if any.
    #[serde(default)]
    pub total_budget: Option<f64>,
}

impl DurationProblem {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("optimize.n", "must be at least 1"));
        }
        if !(self.t_min > 0.0 && self.t_min.is_finite()) {
            return Err(Error::config("optimize.t_min", "must be positive"));
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return Err(Error::config("optimize.dead_time", "must be non-negative"));
        }
        if let Some(b) = self.total_budget {
            if !(b > self.n as f64 * self.t_min) {
                return Err(Error::config(
                    "optimize.total_budget",
                    format!("must exceed n * t_min = {}", self.n as f64 * self.t_min),
                ));
            }
        }
        Ok(())
    }

    /// Durations for unconstrained parameters `theta`.
    ///
    /// Free budget: `T_i = t_min + exp(theta_i)`. Fixed budget: the excess
    /// over `n t_min` is split by a softmax of `theta`.
    pub fn durations(&self, theta: &[f64]) -> Vec<f64> {
        match self.total_budget {
            None => theta.iter().map(|t| self.t_min + t.exp()).collect(),
            Some(b) => {
                let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
                let sum: f64 = w.iter().sum();
                let excess = b - self.n as f64 * self.t_min;
                w.iter().map(|x| self.t_min + excess * x / sum).collect()
            }
        }
    }

    /// Equal-duration starting point and baseline: every window `t_min`, or an
    /// equal split of the budget.
    pub fn equal_durations(&self) -> Vec<f64> {
        match self.total_budget {
            None => vec![self.t_min; self.n],
            Some(b) => vec![b / self.n as f64; self.n],
        }
    }

    pub fn schedule(&self, durations: &[f64], n_cycles: usize) -> Result<CycleSchedule> {
        build_schedule(n_cycles, durations, self.dead_time, CorrectionAt::CycleEnd)
    }
}

/// Objective value with its Monte Carlo standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationResult {
    pub durations: Vec<f64>,
    /// First duration over last duration.
    pub ratio: f64,
    pub objective: ObjectiveValue,
    /// Objective at [`DurationProblem::equal_durations`].
    pub equal_baseline: ObjectiveValue,
    /// Feedback with a single `t_min` window and the same dead time (accuracy only).
    pub feedback_baseline: Option<ObjectiveValue>,
    /// The objective barely changes over the explored durations.
    pub flat_landscape: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub warning: Option<String>,
}

/// Candidate excess durations over `t_min`, in units of `t_min`, for the
/// starting-point scan.
const START_EXCESS: [f64; 7] = [1.0 / 64.0, 1.0 / 16.0, 0.25, 1.0, 4.0, 16.0, 64.0];

/// Default initial simplex edge in log-duration.
const START_STEP: f64 = 0.5;

/// Relative spread of explored objective values below which a landscape is flat.
pub const FLAT_TOLERANCE: f64 = 1e-3;

struct Evaluator<'a> {
    spectrum: &'a PowerSpectrum,
    problem: DurationProblem,
    objective: DurationObjective,
}

impl Evaluator<'_> {
    /// Value to maximize (accuracy) or minimize (sample variance).
    fn evaluate(&self, durations: &[f64]) -> Result<ObjectiveValue> {
        match self.objective {
            DurationObjective::Accuracy { estimator, mode, gain } => {
                let controller = ControllerKind::HffBlock { n: self.problem.n, gain, mode };
                let schedule = self.problem.schedule(durations, 1)?;
                accuracy_value(self.spectrum, &schedule, controller, estimator)
            }
            DurationObjective::ExpectedSampleVariance { n_samples, mode, gain } => {
                let n_cycles = n_samples.div_ceil(self.problem.n);
                let schedule = self.problem.schedule(durations, n_cycles)?;
                let controller = ControllerKind::HffBlock { n: self.problem.n, gain, mode };
                let moments = LockedMoments::new(self.spectrum, &schedule, controller)?;
                Ok(ObjectiveValue {
                    value: *moments.sample_variance_curve(0, n_samples)?.last().unwrap(),
                    std_error: 0.0,
                })
            }
        }
    }

    fn sign(&self) -> f64 {
        match self.objective {
            DurationObjective::Accuracy { .. } => -1.0,
            DurationObjective::ExpectedSampleVariance { .. } => 1.0,
        }
    }
}

/// First-correction accuracy of `controller` on `schedule`.
pub fn accuracy_value(
    spectrum: &PowerSpectrum,
    schedule: &CycleSchedule,
    controller: ControllerKind,
    estimator: AccuracyEstimator,
) -> Result<ObjectiveValue> {
    let first = schedule.truncated(1)?;
    match estimator {
        AccuracyEstimator::MonteCarlo { ensemble_size, seed, grid } => {
            let ensemble = Ensemble::new(spectrum, ensemble_size, seed).with_grid(grid);
            let plan = LoopPlan::new(spectrum, &first, controller)?;
            let a = accuracy_from_observations(&plan, &ensemble.observe(&first)?)?;
            Ok(ObjectiveValue { value: a.value, std_error: a.std_error })
        }
        AccuracyEstimator::Exact | AccuracyEstimator::Formula => {
            let mut engine = CovarianceEngine::new(spectrum);
            let windows = first.cycles()[0].windows.clone();
            let blocks = build_sigma_with(&mut engine, &windows, first.cycles()[0].correction_time)?;
            let value = if let (AccuracyEstimator::Formula, Some(gain)) = (estimator, controller_gain(controller)) {
                accuracy_analytic(&blocks, gain)?
            } else {
                let plan = LoopPlan::new(spectrum, &first, controller)?;
                let rule = &plan.rules()[0];
                let mut coeffs = vec![0.0; windows.len()];
                for (&i, &c) in rule.inputs.iter().zip(&rule.coeffs) {
                    coeffs[i] = c;
                }
                accuracy_of_coeffs(&blocks, &coeffs)
            };
            Ok(ObjectiveValue { value, std_error: 0.0 })
        }
    }
}

fn controller_gain(c: ControllerKind) -> Option<f64> {
    match c {
        ControllerKind::FreeRun => None,
        ControllerKind::Feedback { gain }
        | ControllerKind::HffBlock { gain, .. }
        | ControllerKind::HffMoving { gain, .. } => Some(gain),
    }
}

/// Optimizes the durations of the `n` windows preceding a correction.
///
/// Without a budget, a coarse scan over long/short patterns picks the
/// starting point; the simplex then refines it in log-duration. Monte Carlo
/// accuracy is refined from the optimum of the exact accuracy, and the flat
/// landscape flag is judged on the scan.
pub fn optimize_ramsey_durations(
    spectrum: &PowerSpectrum,
    problem: DurationProblem,
    objective: DurationObjective,
    opts: &SimplexOptions,
) -> Result<DurationResult> {
    problem.validate()?;
    let ev = Evaluator { spectrum, problem, objective };
    // Monte Carlo objectives are noisy and costly: the basin is located on
    // the exact accuracy, then refined on the ensemble.
    let exact = match objective {
        DurationObjective::Accuracy { estimator: AccuracyEstimator::MonteCarlo { .. }, mode, gain } => {
            Some(Evaluator {
                spectrum,
                problem,
                objective: DurationObjective::Accuracy { estimator: AccuracyEstimator::Exact, mode, gain },
            })
        }
        _ => None,
    };
    let coarse = exact.as_ref().unwrap_or(&ev);
    let sign = ev.sign();
    let equal = problem.equal_durations();
    let equal_baseline = ev.evaluate(&equal)?;
    let mut warning = None;
    let mut landscape: Vec<ObjectiveValue> = vec![coarse.evaluate(&equal)?];
    let mut theta = match problem.total_budget {
        None => {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for &first in &START_EXCESS {
                for &rest in &START_EXCESS {
                    let theta: Vec<f64> =
                        (0..problem.n).map(|i| (problem.t_min * if i == 0 { first } else { rest }).ln()).collect();
                    let v = coarse.evaluate(&problem.durations(&theta))?;
                    landscape.push(v);
                    if best.as_ref().is_none_or(|(b, _)| sign * v.value < *b) {
                        best = Some((sign * v.value, theta));
                    }
                    if problem.n == 1 {
                        break;
                    }
                }
            }
            best.unwrap().1
        }
        Some(_) => vec![0.0; problem.n],
    };
    let mut opts = opts.clone();
    if opts.initial_step.is_empty() {
        opts.initial_step = vec![START_STEP; problem.n];
    }
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut stages = vec![coarse];
    if exact.is_some() {
        stages.push(&ev);
    }
    let n_stages = stages.len();
    for (stage, evaluator) in stages.into_iter().enumerate() {
        if stage > 0 {
            opts.initial_step.iter_mut().for_each(|s| *s *= 0.5);
        }
        let mut first_error: Option<Error> = None;
        let mut seen = Vec::new();
        let result = nelder_mead(
            |t| match evaluator.evaluate(&problem.durations(t)) {
                Ok(v) => {
                    seen.push(v);
                    sign * v.value
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                    f64::NAN
                }
            },
            &theta,
            &opts,
        );
        let r = match result {
            Ok(r) => r,
            Err(e) => return Err(first_error.unwrap_or(e)),
        };
        if stage == 0 && problem.total_budget.is_some() {
            landscape.extend(seen);
        }
        if !r.converged && stage + 1 == n_stages {
            warning = Some(format!("simplex stopped after {} iterations without converging", r.iterations));
        }
        iterations += r.iterations;
        evaluations += r.evaluations;
        theta = r.argmin;
    }
    let mut best_durations = problem.durations(&theta);
    let mut best = ev.evaluate(&best_durations)?;
    if sign * equal_baseline.value < sign * best.value {
        warning.get_or_insert_with(|| "optimizer did not improve on equal durations; reporting the baseline".into());
        best = equal_baseline;
        best_durations = equal.clone();
    }
    let (lo, hi) =
        landscape.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.value), b.max(v.value)));
    let noise = landscape.iter().map(|v| v.std_error).fold(0.0f64, f64::max);
    let flat_landscape = hi - lo <= (FLAT_TOLERANCE * best.value.abs()).max(2.0 * noise);
    let feedback_baseline = match objective {
        DurationObjective::Accuracy { estimator, gain, .. } => {
            let schedule = problem.schedule(&[problem.t_min], 1)?;
            Some(accuracy_value(spectrum, &schedule, ControllerKind::Feedback { gain }, estimator)?)
        }
        DurationObjective::ExpectedSampleVariance { .. } => None,
    };
    Ok(DurationResult {
        ratio: best_durations[0] / best_durations[best_durations.len() - 1],
        durations: best_durations,
        objective: best,
        equal_baseline,
        feedback_baseline,
        flat_landscape,
        iterations,
        evaluations,
        warning,
    })
}

/// The swept parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    /// `d = T_R / T_c` with fixed `T_c`; metric is `<s^2_N>` with `N = n_cycles`.
    DutyFactor(Vec<f64>),
    /// Ratio of the first to the last window of an `n`-window cycle whose
    /// last window is `t_min`; metric is first-correction accuracy.
    RamseyRatio(Vec<f64>),
    /// Number of samples `N` for `<s^2_N>` on one schedule.
    MeasurementNumber(Vec<usize>),
}

impl SweepAxis {
    pub const NAMES: [&'static str; 3] = ["duty_factor", "ramsey_ratio", "measurement_number"];

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::DutyFactor(_) => Self::NAMES[0],
            SweepAxis::RamseyRatio(_) => Self::NAMES[1],
            SweepAxis::MeasurementNumber(_) => Self::NAMES[2],
        }
    }

    pub fn from_name(name: &str, values: &[f64]) -> Result<Self> {
        match name {
            "duty_factor" => Ok(SweepAxis::DutyFactor(values.to_vec())),
            "ramsey_ratio" => Ok(SweepAxis::RamseyRatio(values.to_vec())),
            "measurement_number" => {
                let ns = values
                    .iter()
                    .map(|&v| {
                        if v >= 2.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(Error::config(
                                "sweep.values",
                                format!("measurement numbers must be integers >= 2, got {v}"),
                            ))
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(SweepAxis::MeasurementNumber(ns))
            }
            other => Err(Error::config(
                "sweep.axis",
                format!("unknown axis '{other}'; valid axes: {}", Self::NAMES.join(", ")),
            )),
        }
    }

    fn validate(&self) -> Result<()> {
        let empty = match self {
            SweepAxis::DutyFactor(v) | SweepAxis::RamseyRatio(v) => v.is_empty(),
            SweepAxis::MeasurementNumber(v) => v.is_empty(),
        };
        if empty {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        match self {
            SweepAxis::DutyFactor(v) => {
                if let Some(d) = v.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
                    return Err(Error::config("duty_factor", format!("must lie in (0, 1], got {d}")));
                }
            }
            SweepAxis::RamseyRatio(v) => {
                if let Some(r) = v.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
                    return Err(Error::config("sweep.values", format!("Ramsey ratios must be positive, got {r}")));
                }
            }
            SweepAxis::MeasurementNumber(v) => {
                if v.iter().any(|&n| n < 2) {
                    return Err(Error::config("sweep.values", "measurement numbers must be at least 2"));
                }
            }
        }
        Ok(())
    }
}

/// Fixed timing of the swept schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFamily {
    pub cycle_time: f64,
    /// Duty factor for axes other than `duty_factor`.
    pub duty_factor: f64,
    /// Cycles per schedule; also `N` of the duty-factor sweep.
    pub n_cycles: usize,
    /// Last (shortest) window of the Ramsey-ratio sweep.
    pub t_min: f64,
    /// Dead time of the Ramsey-ratio sweep.
    pub dead_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub value: f64,
    pub std_error: f64,
}

impl From<AccuracyEstimate> for Normalized {
    fn from(a: AccuracyEstimate) -> Self {
        Normalized { value: a.value, std_error: a.std_error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub controller: String,
    pub stat: EnsembleStat,
    pub vs_free_run: Option<Normalized>,
    pub vs_feedback: Option<Normalized>,
    /// Ramsey-ratio sweep only: value over the controller's own ratio-1 value.
    pub vs_ratio_one: Option<Normalized>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: String,
    pub metric: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, axis_value: f64, controller: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.axis_value == axis_value && r.controller == controller)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W, precision: usize) -> Result<()> {
        writeln!(
            out,
            "{},controller,mean,std_error,n_realizations,vs_free_run,vs_free_run_se,vs_feedback,vs_feedback_se,vs_ratio_one,vs_ratio_one_se",
            self.axis
        )?;
        let p = precision;
        let opt = |n: &Option<Normalized>| match n {
            Some(n) => format!("{:.p$e},{:.p$e}", n.value, n.std_error),
            None => ",".to_string(),
        };
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.p$e},{:.p$e},{},{},{},{}",
                r.axis_value,
                r.controller,
                r.stat.mean,
                r.stat.std_error,
                r.stat.n_realizations,
                opt(&r.vs_free_run),
                opt(&r.vs_feedback),
                opt(&r.vs_ratio_one)
            )?;
        }
        Ok(())
    }
}

fn stat_of(a: &AccuracyEstimate) -> EnsembleStat {
    EnsembleStat { mean: a.value, std_error: a.std_error, n_realizations: a.n_realizations }
}

/// Ratio of two independent estimates with first-order error propagation.
fn quotient(a: &AccuracyEstimate, b: &AccuracyEstimate) -> Normalized {
    let value = a.value / b.value;
    let rel = ((a.std_error / a.value).powi(2) + (b.std_error / b.value).powi(2)).sqrt();
    Normalized { value, std_error: value.abs() * rel }
}

/// Evaluates every controller at every axis value on a shared ensemble.
///
/// All controllers and axis points use the same realizations (common random
/// numbers). Normalized columns are paired ratios of ensemble means; free-run
/// and feedback references are always evaluated, whether or not they are
/// listed, so results do not depend on the controller list or its order.
pub fn sweep(
    spectrum: &PowerSpectrum,
    family: &ScheduleFamily,
    controllers: &[ControllerKind],
    axis: &SweepAxis,
    ensemble: &Ensemble,
) -> Result<SweepTable> {
    axis.validate()?;
    if controllers.is_empty() {
        return Err(Error::config("controllers", "need at least one controller"));
    }
    let free = ControllerKind::FreeRun;
    let feedback = ControllerKind::Feedback { gain: 1.0 };
    let mut all: Vec<ControllerKind> = vec![free, feedback];
    for c in controllers {
        if !all.contains(c) {
            all.push(*c);
        }
    }
    let mut rows = Vec::new();
    match axis {
        SweepAxis::DutyFactor(values) => {
            for &d in values {
                let schedule = CycleSchedule::from_duty_factor(family.n_cycles, family.cycle_time, d)?;
                let plans = plans_for(spectrum, &schedule, &all)?;
                let curves = ensemble_curves(ensemble, &plans, MetricKind::SampleVariance, &[family.n_cycles])?;
                push_metric_rows(&mut rows, d, controllers, &all, &curves, 0)?;
            }
            Ok(SweepTable { axis: axis.name().into(), metric: format!("sample_variance_n{}", family.n_cycles), rows })
        }
        SweepAxis::MeasurementNumber(ns) => {
            let n_max = *ns.iter().max().unwrap();
            let schedule = CycleSchedule::from_duty_factor(n_max, family.cycle_time, family.duty_factor)?;
            let plans = plans_for(spectrum, &schedule, &all)?;
            let curves = ensemble_curves(ensemble, &plans, MetricKind::SampleVariance, ns)?;
            for (i, &n) in ns.iter().enumerate() {
                push_metric_rows(&mut rows, n as f64, controllers, &all, &curves, i)?;
            }
            Ok(SweepTable { axis: axis.name().into(), metric: "sample_variance".into(), rows })
        }
        SweepAxis::RamseyRatio(ratios) => {
            // Feedback reference: one t_min window.
            let fb_schedule = build_schedule(1, &[family.t_min], family.dead_time, CorrectionAt::CycleEnd)?;
            let fb_plan = LoopPlan::without_covariance(&fb_schedule, feedback)?;
            let fb_acc = accuracy_from_observations(&fb_plan, &ensemble.observe(&fb_schedule)?)?;
            let mut at_one: Vec<Option<AccuracyEstimate>> = vec![None; controllers.len()];
            let mut sorted: Vec<f64> = ratios.clone();
            if !sorted.contains(&1.0) {
                sorted.insert(0, 1.0);
            }
            let mut computed: Vec<(f64, Vec<AccuracyEstimate>)> = Vec::new();
            for &r in &sorted {
                let mut accs = Vec::with_capacity(controllers.len());
                for c in controllers {
                    let n = window_count(c);
                    let acc = if n == 1 {
                        let plan = LoopPlan::new(spectrum, &fb_schedule, *c)?;
                        if matches!(c, ControllerKind::FreeRun) {
                            ratio_of_means(&[1.0, 1.0], &[1.0, 1.0])?
                        } else {
                            accuracy_from_observations(&plan, &ensemble.observe(&fb_schedule)?)?
                        }
                    } else {
                        let mut durations = vec![r * family.t_min; n - 1];
                        durations.push(family.t_min);
                        let schedule = build_schedule(1, &durations, family.dead_time, CorrectionAt::CycleEnd)?;
                        let plan = LoopPlan::new(spectrum, &schedule, *c)?;
                        accuracy_from_observations(&plan, &ensemble.observe(&schedule)?)?
                    };
                    accs.push(acc);
                }
                if r == 1.0 {
                    for (slot, a) in at_one.iter_mut().zip(&accs) {
                        *slot = Some(*a);
                    }
                }
                computed.push((r, accs));
            }
            for (r, accs) in computed {
                if !ratios.contains(&r) {
                    continue;
                }
                for ((c, a), one) in controllers.iter().zip(&accs).zip(&at_one) {
                    let one = one.as_ref().unwrap();
                    rows.push(SweepRow {
                        axis_value: r,
                        controller: c.label(),
                        stat: stat_of(a),
                        vs_free_run: Some(Normalized { value: a.value, std_error: a.std_error }),
                        vs_feedback: Some(if *c == feedback {
                            Normalized { value: 1.0, std_error: 0.0 }
                        } else {
                            quotient(a, &fb_acc)
                        }),
                        vs_ratio_one: Some(if r == 1.0 || window_count(c) == 1 {
                            Normalized { value: 1.0, std_error: 0.0 }
                        } else {
                            quotient(a, one)
                        }),
                    });
                }
            }
            Ok(SweepTable { axis: axis.name().into(), metric: "accuracy".into(), rows })
        }
    }
}

/// Windows a controller reads per correction in the Ramsey-ratio sweep.
fn window_count(c: &ControllerKind) -> usize {
    match c {
        ControllerKind::HffBlock { n, .. } | ControllerKind::HffMoving { n, .. } => *n,
        _ => 1,
    }
}

fn plans_for(
    spectrum: &PowerSpectrum,
    schedule: &CycleSchedule,
    controllers: &[ControllerKind],
) -> Result<Vec<LoopPlan>> {
    let needs_cov =
        controllers.iter().any(|c| matches!(c, ControllerKind::HffBlock { .. } | ControllerKind::HffMoving { .. }));
    let cov = if needs_cov {
        let mut engine = CovarianceEngine::new(spectrum);
        Some(ScheduleCovariance::new(&mut engine, schedule)?)
    } else {
        None
    };
    controllers
        .iter()
        .map(|c| match &cov {
            Some(cov) => LoopPlan::with_covariance(cov, schedule, *c),
            None => LoopPlan::without_covariance(schedule, *c),
        })
        .collect()
}

fn push_metric_rows(
    rows: &mut Vec<SweepRow>,
    axis_value: f64,
    requested: &[ControllerKind],
    all: &[ControllerKind],
    curves: &crate::metrics::MetricCurves,
    point: usize,
) -> Result<()> {
    for c in requested {
        let idx = all.iter().position(|x| x == c).unwrap();
        rows.push(SweepRow {
            axis_value,
            controller: c.label(),
            stat: curves.stat(idx, point)?,
            vs_free_run: Some(curves.ratio(idx, 0, point)?.into()),
            vs_feedback: Some(curves.ratio(idx, 1, point)?.into()),
            vs_ratio_one: None,
        });
    }
    Ok(())
}
