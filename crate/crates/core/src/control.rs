//! Controllers and the measurement-correction loop.
//!
//! Corrections are ideal frequency steps applied at each cycle's correction
//! instant, so the locked trajectory is `y_llo(t) = y_lo(t) + sum of the
//! corrections applied before t`. Every controller here is linear in the
//! measured samples, and its coefficients depend only on the spectrum and the
//! schedule. A [`LoopPlan`] therefore fixes the coefficients once; running a
//! realization through it is a cheap sequential pass.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    paper_coeffs_normalized, predictor_coeffs_mmse_ridge, CorrectionRule, CovarianceBlocks, ScheduleCovariance,
    Unrolled, Unroller,
};
use crate::ramsey::CycleSchedule;
use crate::spectra::{synthesize, NoiseRealization, PowerSpectrum, SynthesisGrid};
use crate::xfer::CovarianceEngine;

/// How hybrid-feedforward coefficients are computed from covariance blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffMode {
    /// `w F / sqrt(F^T M F)` on blocks normalized to unit point variance.
    #[default]
    PaperForm,
    /// `w M^-1 F`, ridge-regularized when ill-conditioned.
    Mmse,
}

fn default_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerKind {
    FreeRun,
    /// `C_k = -(w / g_bar) * y_llo` of the cycle's last window.
    Feedback {
        #[serde(default = "default_gain")]
        gain: f64,
    },
    /// Predictor over the `n` windows of each cycle.
    HffBlock {
        n: usize,
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default)]
        mode: CoeffMode,
    },
    /// Predictor over the latest `n` windows, recomputed every cycle.
    HffMoving {
        n: usize,
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default)]
        mode: CoeffMode,
    },
}

impl ControllerKind {
    /// Short stable name used in output tables.
    pub fn label(&self) -> String {
        let mode = |m: &CoeffMode| match m {
            CoeffMode::PaperForm => "paper",
            CoeffMode::Mmse => "mmse",
        };
        match self {
            ControllerKind::FreeRun => "free_run".into(),
            ControllerKind::Feedback { .. } => "feedback".into(),
            ControllerKind::HffBlock { n, mode: m, .. } => format!("hff_block_n{n}_{}", mode(m)),
            ControllerKind::HffMoving { n, mode: m, .. } => format!("hff_moving_n{n}_{}", mode(m)),
        }
    }

    fn needs_covariance(&self) -> bool {
        matches!(self, ControllerKind::HffBlock { .. } | ControllerKind::HffMoving { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ControllerKind::FreeRun => Ok(()),
            ControllerKind::Feedback { gain } => check_gain(gain),
            ControllerKind::HffBlock { n, gain, .. } | ControllerKind::HffMoving { n, gain, .. } => {
                if n == 0 {
                    return Err(Error::config("controller.n", "must be at least 1"));
                }
                check_gain(gain)
            }
        }
    }
}

fn check_gain(gain: f64) -> Result<()> {
    if gain.is_finite() {
        Ok(())
    } else {
        Err(Error::config("controller.gain", format!("must be finite, got {gain}")))
    }
}

/// Per-cycle correction rules for one controller on one schedule, plus every
/// locked quantity unrolled into raw-probe functionals.
#[derive(Debug, Clone)]
pub struct LoopPlan {
    schedule: CycleSchedule,
    controller: ControllerKind,
    rules: Vec<CorrectionRule>,
    ridges: Vec<Option<f64>>,
    unrolled: Unrolled,
}

impl LoopPlan {
    pub fn new(spectrum: &PowerSpectrum, schedule: &CycleSchedule, controller: ControllerKind) -> Result<Self> {
        if controller.needs_covariance() {
            let mut engine = CovarianceEngine::new(spectrum);
            let cov = ScheduleCovariance::new(&mut engine, schedule)?;
            Self::build(Some(&cov), schedule, controller)
        } else {
            Self::build(None, schedule, controller)
        }
    }

    /// Plan using a precomputed probe covariance of `schedule`.
    pub fn with_covariance(
        cov: &ScheduleCovariance,
        schedule: &CycleSchedule,
        controller: ControllerKind,
    ) -> Result<Self> {
        Self::build(Some(cov), schedule, controller)
    }

    /// Plan for controllers that need no covariance (free run, feedback).
    pub fn without_covariance(schedule: &CycleSchedule, controller: ControllerKind) -> Result<Self> {
        if controller.needs_covariance() {
            return Err(Error::config("controller", "hybrid feedforward needs a spectrum"));
        }
        Self::build(None, schedule, controller)
    }

    fn build(cov: Option<&ScheduleCovariance>, schedule: &CycleSchedule, controller: ControllerKind) -> Result<Self> {
        controller.validate()?;
        let windows: Vec<_> = schedule.windows().copied().collect();
        match controller {
            ControllerKind::HffBlock { n, .. } => {
                if schedule.cycles().iter().any(|c| c.windows.len() != n) {
                    return Err(Error::config(
                        "controller.n",
                        format!("block predictor with n = {n} needs exactly {n} windows in every cycle"),
                    ));
                }
            }
            ControllerKind::HffMoving { n, .. } if n > windows.len() => {
                return Err(Error::config(
                    "controller.n",
                    format!("moving predictor with n = {n} exceeds the {} windows of the schedule", windows.len()),
                ));
            }
            _ => {}
        }
        let mut unroller = Unroller::new(schedule);
        let mut rules = Vec::with_capacity(schedule.n_cycles());
        let mut ridges = Vec::with_capacity(schedule.n_cycles());
        let mut seen = 0usize;
        for cycle in schedule.cycles() {
            let first = seen;
            seen += cycle.windows.len();
            let target = unroller.open_cycle();
            let (rule, ridge) = match controller {
                ControllerKind::FreeRun => (CorrectionRule::none(), None),
                ControllerKind::Feedback { gain } => {
                    let last = seen - 1;
                    let rule = CorrectionRule {
                        inputs: vec![last],
                        coeffs: vec![gain / windows[last].sensitivity.level()],
                        warm_up: false,
                    };
                    (rule, None)
                }
                ControllerKind::HffBlock { gain, mode, .. } => {
                    let inputs: Vec<usize> = (first..seen).collect();
                    predictor_rule(cov, &unroller, &target, inputs, gain, mode, false)?
                }
                ControllerKind::HffMoving { n, gain, mode } => {
                    let start = seen.saturating_sub(n);
                    let inputs: Vec<usize> = (start..seen).collect();
                    let warm_up = inputs.len() < n;
                    predictor_rule(cov, &unroller, &target, inputs, gain, mode, warm_up)?
                }
            };
            unroller.close_cycle(&rule, target);
            rules.push(rule);
            ridges.push(ridge);
        }
        Ok(LoopPlan { schedule: schedule.clone(), controller, rules, ridges, unrolled: unroller.finish() })
    }

    pub fn schedule(&self) -> &CycleSchedule {
        &self.schedule
    }

    pub fn controller(&self) -> ControllerKind {
        self.controller
    }

    pub fn rules(&self) -> &[CorrectionRule] {
        &self.rules
    }

    /// Ridge applied to each cycle's solve, if any.
    pub fn ridges(&self) -> &[Option<f64>] {
        &self.ridges
    }

    pub fn unrolled(&self) -> &Unrolled {
        &self.unrolled
    }

    /// Runs the loop over precomputed raw observations.
    pub fn run(&self, obs: &RawObservations) -> Result<LoopTrace> {
        let n_windows = self.schedule.n_windows();
        if obs.windows.len() != n_windows || obs.points.len() != self.schedule.n_cycles() {
            return Err(Error::domain("observations do not match the schedule"));
        }
        let mut running = 0.0;
        let mut llo_all = Vec::with_capacity(n_windows);
        let mut records = Vec::with_capacity(self.schedule.n_cycles());
        let mut idx = 0;
        for (k, (cycle, rule)) in self.schedule.cycles().iter().zip(&self.rules).enumerate() {
            let mut raw = Vec::with_capacity(cycle.windows.len());
            let mut llo = Vec::with_capacity(cycle.windows.len());
            for w in &cycle.windows {
                let r = obs.windows[idx];
                let l = r + w.sensitivity.level() * running;
                raw.push(r);
                llo.push(l);
                llo_all.push(l);
                idx += 1;
            }
            let before = obs.points[k] + running;
            let correction = -rule.inputs.iter().zip(&rule.coeffs).map(|(&i, &c)| c * llo_all[i]).sum::<f64>();
            running += correction;
            records.push(CycleRecord {
                cycle: k,
                t_c: cycle.correction_time,
                raw,
                llo,
                correction,
                offset_lo: obs.points[k],
                offset_before: before,
                offset_after: obs.points[k] + running,
                warm_up: rule.warm_up,
            });
        }
        Ok(LoopTrace { records })
    }
}

fn predictor_rule(
    cov: Option<&ScheduleCovariance>,
    unroller: &Unroller,
    target: &[f64],
    inputs: Vec<usize>,
    gain: f64,
    mode: CoeffMode,
    warm_up: bool,
) -> Result<(CorrectionRule, Option<f64>)> {
    let cov = cov.ok_or_else(|| Error::config("controller", "hybrid feedforward needs a spectrum"))?;
    let blocks = locked_blocks(cov, unroller, target, &inputs)?;
    let (coeffs, ridge) = match mode {
        CoeffMode::PaperForm => (paper_coeffs_normalized(&blocks, gain)?.iter().copied().collect(), None),
        CoeffMode::Mmse => {
            let sol = predictor_coeffs_mmse_ridge(&blocks)?;
            (sol.coeffs.iter().map(|c| gain * c).collect(), sol.ridge)
        }
    };
    Ok((CorrectionRule { inputs, coeffs, warm_up }, ridge))
}

/// Covariance blocks of the locked samples `inputs` and the locked offset
/// just before the correction, given the corrections applied so far.
fn locked_blocks(
    cov: &ScheduleCovariance,
    unroller: &Unroller,
    target: &[f64],
    inputs: &[usize],
) -> Result<CovarianceBlocks> {
    let n = inputs.len();
    let applied: Vec<Vec<f64>> = inputs.iter().map(|&i| cov.apply(&unroller.samples[i])).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = unroller.samples[inputs[i]].iter().zip(&applied[j]).map(|(a, b)| a * b).sum();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let f = DVector::from_iterator(n, applied.iter().map(|a| a.iter().zip(target).map(|(x, y)| x * y).sum()));
    let sigma = cov.dense_cov(target, target);
    CovarianceBlocks::new(m, f, sigma)
}

/// Raw (unlocked) LO observations needed by a schedule: every window sample
/// and the LO value at every correction instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawObservations {
    pub windows: Vec<f64>,
    pub points: Vec<f64>,
}

impl RawObservations {
    pub fn observe(realization: &NoiseRealization, schedule: &CycleSchedule) -> Result<Self> {
        let end = schedule.end_time();
        let start = schedule.cycles()[0].start();
        if start < 0.0 || end > realization.duration() * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "schedule spans [{start}, {end}] but the realization covers [0, {}]",
                realization.duration()
            )));
        }
        let windows: Vec<_> = schedule.windows().copied().collect();
        let mut probes: Vec<(f64, f64)> = windows.iter().map(|w| (w.midpoint(), w.duration())).collect();
        probes.extend(schedule.cycles().iter().map(|c| (c.correction_time, 0.0)));
        let values = realization.averages(&probes);
        let nw = windows.len();
        Ok(RawObservations {
            windows: values[..nw].iter().zip(&windows).map(|(v, w)| v * w.sensitivity.level()).collect(),
            points: values[nw..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Correction instant.
    pub t_c: f64,
    /// Unlocked window samples of the cycle.
    pub raw: Vec<f64>,
    /// Locked window samples of the cycle.
    pub llo: Vec<f64>,
    pub correction: f64,
    /// `y_lo(t_c)`.
    pub offset_lo: f64,
    /// `y_llo(t_c)` just before and just after the correction.
    pub offset_before: f64,
    pub offset_after: f64,
    pub warm_up: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopTrace {
    pub records: Vec<CycleRecord>,
}

impl LoopTrace {
    /// Locked samples of every window in time order.
    pub fn llo_samples(&self) -> Vec<f64> {
        self.records.iter().flat_map(|r| r.llo.iter().copied()).collect()
    }

    pub fn raw_samples(&self) -> Vec<f64> {
        self.records.iter().flat_map(|r| r.raw.iter().copied()).collect()
    }

    pub fn corrections(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.correction).collect()
    }

    /// One row per window: cycle, window, t_c, raw, llo, correction, offsets.
    pub fn write_csv<W: Write>(&self, mut out: W, precision: usize) -> Result<()> {
        writeln!(out, "cycle,window,t_c,raw,llo,correction,offset_lo,offset_before,offset_after,warm_up")?;
        let p = precision;
        for r in &self.records {
            for (j, (raw, llo)) in r.raw.iter().zip(&r.llo).enumerate() {
                writeln!(
                    out,
                    "{},{},{:.p$e},{:.p$e},{:.p$e},{:.p$e},{:.p$e},{:.p$e},{:.p$e},{}",
                    r.cycle,
                    j,
                    r.t_c,
                    raw,
                    llo,
                    r.correction,
                    r.offset_lo,
                    r.offset_before,
                    r.offset_after,
                    u8::from(r.warm_up)
                )?;
            }
        }
        Ok(())
    }
}

/// Runs one realization through `plan`.
pub fn run_loop(realization: &NoiseRealization, plan: &LoopPlan) -> Result<LoopTrace> {
    plan.run(&RawObservations::observe(realization, plan.schedule())?)
}

/// A reproducible ensemble of realizations of one spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub spectrum: PowerSpectrum,
    pub grid: SynthesisGrid,
    pub size: usize,
    pub seed: u64,
}

impl Ensemble {
    pub fn new(spectrum: &PowerSpectrum, size: usize, seed: u64) -> Self {
        Ensemble { spectrum: spectrum.clone(), grid: SynthesisGrid::default(), size, seed }
    }

    pub fn with_grid(mut self, grid: SynthesisGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn realization(&self, index: usize, duration: f64) -> Result<NoiseRealization> {
        synthesize(&self.spectrum, duration, &self.grid, self.seed, index as u64)
    }

    /// Raw observations of every realization on `schedule`, in index order.
    /// Realizations are generated in parallel and never stored.
    pub fn observe(&self, schedule: &CycleSchedule) -> Result<Vec<RawObservations>> {
        let duration = schedule.end_time();
        (0..self.size)
            .into_par_iter()
            .map(|i| RawObservations::observe(&self.realization(i, duration)?, schedule))
            .collect()
    }
}

/// Ratio-of-means estimate with a jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEstimate {
    pub value: f64,
    pub std_error: f64,
    /// `<y_lo(t_c)^2>` and `<y_llo(t_c)^2>` after the correction.
    pub lo_mean_square: f64,
    pub llo_mean_square: f64,
    pub n_realizations: usize,
}

/// `sum(num) / sum(den)` with leave-one-out jackknife error.
pub fn ratio_of_means(num: &[f64], den: &[f64]) -> Result<AccuracyEstimate> {
    let n = num.len();
    if n < 2 || den.len() != n {
        return Err(Error::domain("ratio estimate needs at least two paired values"));
    }
    let sn: f64 = num.iter().sum();
    let sd: f64 = den.iter().sum();
    if sd == 0.0 {
        if sn == 0.0 {
            return Err(Error::domain("both unlocked and locked offsets vanish; the noise is identically zero"));
        }
        return Err(Error::DivergentAccuracy);
    }
    let value = sn / sd;
    let loo: Vec<f64> = num.iter().zip(den).map(|(a, b)| (sn - a) / (sd - b)).collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = loo.iter().map(|x| (x - mean).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    Ok(AccuracyEstimate {
        value,
        std_error: var.sqrt(),
        lo_mean_square: sn / n as f64,
        llo_mean_square: sd / n as f64,
        n_realizations: n,
    })
}

/// Index of the first correction at which `controller` reads its full set of
/// windows. Zero except for moving predictors whose `n` spans several cycles.
pub fn accuracy_cycle(schedule: &CycleSchedule, controller: ControllerKind) -> Result<usize> {
    let need = match controller {
        ControllerKind::HffMoving { n, .. } => n,
        _ => return Ok(0),
    };
    let mut seen = 0;
    for (k, cycle) in schedule.cycles().iter().enumerate() {
        seen += cycle.windows.len();
        if seen >= need {
            return Ok(k);
        }
    }
    Err(Error::config(
        "controller.n",
        format!("moving predictor with n = {need} exceeds the {seen} windows of the schedule"),
    ))
}

/// First-correction accuracy of `plan` over pre-observed realizations.
pub fn accuracy_from_observations(plan: &LoopPlan, observations: &[RawObservations]) -> Result<AccuracyEstimate> {
    accuracy_from_observations_at(plan, observations, 0)
}

/// Accuracy of the correction in `cycle`. At the first cycle the numerator
/// is `y_lo(t_c)^2`; later it is the locked offset just before the
/// correction, which coincides with it when no correction has been applied.
pub fn accuracy_from_observations_at(
    plan: &LoopPlan,
    observations: &[RawObservations],
    cycle: usize,
) -> Result<AccuracyEstimate> {
    let mut num = Vec::with_capacity(observations.len());
    let mut den = Vec::with_capacity(observations.len());
    for obs in observations {
        let run = plan.run(obs)?;
        let rec = run
            .records
            .get(cycle)
            .ok_or_else(|| Error::config("schedule.n_cycles", format!("no correction in cycle {cycle}")))?;
        let before = if cycle == 0 { rec.offset_lo } else { rec.offset_before };
        num.push(before * before);
        den.push(rec.offset_after * rec.offset_after);
    }
    ratio_of_means(&num, &den)
}

/// Monte Carlo accuracy `<y_lo(t_c)^2> / <y_llo(t_c)^2>` at the first
/// correction instant of `schedule` where the controller is fully fed.
pub fn accuracy_mc(
    spectrum: &PowerSpectrum,
    schedule: &CycleSchedule,
    controller: ControllerKind,
    ensemble_size: usize,
    seed: u64,
) -> Result<AccuracyEstimate> {
    accuracy_mc_with(&Ensemble::new(spectrum, ensemble_size, seed), schedule, controller)
}

pub fn accuracy_mc_with(
    ensemble: &Ensemble,
    schedule: &CycleSchedule,
    controller: ControllerKind,
) -> Result<AccuracyEstimate> {
    if ensemble.size < 100 {
        return Err(Error::config(
            "ensemble.size",
            format!("accuracy needs at least 100 realizations, got {}", ensemble.size),
        ));
    }
    let k = accuracy_cycle(schedule, controller)?;
    let head = schedule.truncated(k + 1)?;
    let plan = LoopPlan::new(&ensemble.spectrum, &head, controller)?;
    let obs = ensemble.observe(&head)?;
    accuracy_from_observations_at(&plan, &obs, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{build_sigma, ProbeId};
    use crate::ramsey::{build_schedule, CorrectionAt};
    use crate::spectra::Component;

    fn flicker() -> PowerSpectrum {
        PowerSpectrum::power_law(1.0, 1.0, 0.0628, 62.8).unwrap()
    }

    #[test]
    fn free_run_trace_is_lo_trace() {
        let s = flicker();
        let schedule = CycleSchedule::uniform(10, 0.5, 0.5).unwrap();
        let r = synthesize(&s, schedule.end_time(), &SynthesisGrid::default(), 1, 0).unwrap();
        let plan = LoopPlan::new(&s, &schedule, ControllerKind::FreeRun).unwrap();
        let t = run_loop(&r, &plan).unwrap();
        assert_eq!(t.llo_samples(), t.raw_samples());
        assert!(t.corrections().iter().all(|&c| c == 0.0));
        for rec in &t.records {
            assert_eq!(rec.offset_before, rec.offset_lo);
        }
    }

    #[test]
    fn static_offset_is_removed_by_one_feedback_correction() {
        let schedule = CycleSchedule::uniform(5, 1.0, 0.3).unwrap();
        let r = NoiseRealization::zero(schedule.end_time()).unwrap().with_offset(2.5e-3);
        let plan = LoopPlan::without_covariance(&schedule, ControllerKind::Feedback { gain: 1.0 }).unwrap();
        let t = run_loop(&r, &plan).unwrap();
        assert_eq!(t.records[0].llo, vec![2.5e-3]);
        assert_eq!(t.records[0].offset_after, 0.0);
        for rec in &t.records[1..] {
            assert_eq!(rec.llo, vec![0.0]);
            assert_eq!(rec.correction, 0.0);
        }
    }

    #[test]
    fn feedback_without_dead_time_is_first_difference() {
        let s = flicker();
        let schedule = CycleSchedule::uniform(100, 1.0, 0.0).unwrap();
        let r = synthesize(&s, schedule.end_time(), &SynthesisGrid::default(), 3, 7).unwrap();
        let plan = LoopPlan::without_covariance(&schedule, ControllerKind::Feedback { gain: 1.0 }).unwrap();
        let t = run_loop(&r, &plan).unwrap();
        let (lo, llo) = (t.raw_samples(), t.llo_samples());
        for k in 1..lo.len() {
            assert!((llo[k] - (lo[k] - lo[k - 1])).abs() < 1e-12);
        }
    }

    #[test]
    fn locked_offset_is_lo_plus_running_corrections() {
        let s = flicker();
        let schedule = CycleSchedule::uniform(20, 0.4, 0.6).unwrap();
        let r = synthesize(&s, schedule.end_time(), &SynthesisGrid::default(), 9, 2).unwrap();
        let plan =
            LoopPlan::new(&s, &schedule, ControllerKind::HffMoving { n: 3, gain: 1.0, mode: CoeffMode::Mmse }).unwrap();
        let t = run_loop(&r, &plan).unwrap();
        let mut running = 0.0;
        for rec in &t.records {
            assert!((rec.offset_before - (r.value_at(rec.t_c) + running)).abs() < 1e-12);
            running += rec.correction;
            assert!((rec.offset_after - (r.value_at(rec.t_c) + running)).abs() < 1e-12);
        }
        assert!(t.records[0].warm_up && t.records[1].warm_up && !t.records[2].warm_up);
    }

    #[test]
    fn trace_is_linear_in_the_realization() {
        let s = flicker();
        let schedule = CycleSchedule::uniform(8, 0.5, 0.5).unwrap();
        let grid = SynthesisGrid::with_points(200);
        let a = synthesize(&s, schedule.end_time(), &grid, 1, 0).unwrap();
        let b = synthesize(&s, schedule.end_time(), &grid, 1, 1).unwrap();
        let ab = a.superpose(2.0, &b, -0.5);
        let plan =
            LoopPlan::new(&s, &schedule, ControllerKind::HffMoving { n: 2, gain: 1.0, mode: CoeffMode::PaperForm })
                .unwrap();
        let (ta, tb, tab) = (run_loop(&a, &plan).unwrap(), run_loop(&b, &plan).unwrap(), run_loop(&ab, &plan).unwrap());
        for ((x, y), z) in ta.llo_samples().iter().zip(tb.llo_samples()).zip(tab.llo_samples()) {
            assert!((2.0 * x - 0.5 * y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_matches_unrolled_functionals() {
        let s = flicker();
        let schedule = CycleSchedule::uniform(6, 0.5, 0.5).unwrap();
        let r = synthesize(&s, schedule.end_time(), &SynthesisGrid::with_points(300), 4, 0).unwrap();
        let plan =
            LoopPlan::new(&s, &schedule, ControllerKind::HffMoving { n: 2, gain: 0.8, mode: CoeffMode::Mmse }).unwrap();
        let obs = RawObservations::observe(&r, &schedule).unwrap();
        let t = plan.run(&obs).unwrap();
        let eval = |f: &crate::estimator::LinearFunctional| -> f64 {
            f.terms
                .iter()
                .map(|&(id, a)| match id {
                    ProbeId::Window(i) => a * obs.windows[i],
                    ProbeId::Point(k) => a * obs.points[k],
                })
                .sum()
        };
        for (f, v) in plan.unrolled().samples.iter().zip(t.llo_samples()) {
            assert!((eval(f) - v).abs() < 1e-12);
        }
        for (f, rec) in plan.unrolled().offsets_after.iter().zip(&t.records) {
            assert!((eval(f) - rec.offset_after).abs() < 1e-12);
        }
    }

    #[test]
    fn mmse_block_of_one_is_feedback_with_effective_gain() {
        let s = flicker();
        let schedule = CycleSchedule::uniform(1, 0.5, 0.5).unwrap();
        let plan =
            LoopPlan::new(&s, &schedule, ControllerKind::HffBlock { n: 1, gain: 1.0, mode: CoeffMode::Mmse }).unwrap();
        let w = schedule.cycles()[0].windows[0];
        let b = build_sigma(&s, &[w], 1.0).unwrap();
        let c = plan.rules()[0].coeffs[0];
        assert!((c - b.f[0] / b.m[(0, 0)]).abs() < 1e-9 * c.abs());
    }

    #[test]
    fn block_size_must_match_windows_per_cycle() {
        let s = flicker();
        let schedule = CycleSchedule::uniform(3, 0.5, 0.5).unwrap();
        let err = LoopPlan::new(&s, &schedule, ControllerKind::HffBlock { n: 2, gain: 1.0, mode: CoeffMode::Mmse })
            .unwrap_err();
        assert!(err.is_config());
        let two = build_schedule(3, &[0.3, 0.2], 0.5, CorrectionAt::CycleEnd).unwrap();
        let plan =
            LoopPlan::new(&s, &two, ControllerKind::HffBlock { n: 2, gain: 1.0, mode: CoeffMode::Mmse }).unwrap();
        assert_eq!(plan.rules()[1].inputs, vec![2, 3]);
    }

    #[test]
    fn free_run_accuracy_is_one() {
        let s = flicker();
        let schedule = CycleSchedule::uniform(1, 0.5, 0.5).unwrap();
        let a = accuracy_mc(&s, &schedule, ControllerKind::FreeRun, 100, 1).unwrap();
        assert_eq!(a.value, 1.0);
        assert_eq!(a.std_error, 0.0);
    }

    #[test]
    fn static_offset_accuracy_diverges() {
        let schedule = CycleSchedule::uniform(1, 1.0, 0.5).unwrap();
        let plan = LoopPlan::without_covariance(&schedule, ControllerKind::Feedback { gain: 1.0 }).unwrap();
        let r = NoiseRealization::from_components(
            vec![Component { omega: 0.0, amplitude: 1e-3, phase: 0.0 }],
            schedule.end_time(),
        )
        .unwrap();
        let obs = vec![RawObservations::observe(&r, &schedule).unwrap(); 3];
        assert!(matches!(accuracy_from_observations(&plan, &obs), Err(Error::DivergentAccuracy)));
        let zero = NoiseRealization::zero(schedule.end_time()).unwrap();
        let obs = vec![RawObservations::observe(&zero, &schedule).unwrap(); 3];
        assert!(matches!(accuracy_from_observations(&plan, &obs), Err(Error::Domain(_))));
    }

    #[test]
    fn jackknife_of_constant_ratio_is_zero() {
        let e = ratio_of_means(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.value, 2.0);
        assert!(e.std_error < 1e-15);
    }

    #[test]
    fn trace_csv_has_one_row_per_window() {
        let schedule = CycleSchedule::uniform(3, 1.0, 0.0).unwrap();
        let r = NoiseRealization::zero(3.0).unwrap().with_offset(1.0);
        let plan = LoopPlan::without_covariance(&schedule, ControllerKind::Feedback { gain: 1.0 }).unwrap();
        let mut buf = Vec::new();
        run_loop(&r, &plan).unwrap().write_csv(&mut buf, 6).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("0,0,1.000000e0,1.000000e0,1.000000e0,-1.000000e0"));
    }

    #[test]
    fn controller_round_trips_through_toml() {
        let c = ControllerKind::HffMoving { n: 2, gain: 1.0, mode: CoeffMode::Mmse };
        #[derive(Serialize, Deserialize)]
        struct Wrap {
            c: ControllerKind,
        }
        let text = toml::to_string(&Wrap { c }).unwrap();
        assert_eq!(toml::from_str::<Wrap>(&text).unwrap().c, c);
        let parsed: Wrap = toml::from_str("[c]\nkind = \"feedback\"\n").unwrap();
        assert_eq!(parsed.c, ControllerKind::Feedback { gain: 1.0 });
    }
}
