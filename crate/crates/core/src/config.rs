//! TOML run configuration shared by every CLI subcommand.

use std::f64::consts::TAU;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::control::{CoeffMode, ControllerKind, Ensemble};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::optimize::{
    AccuracyEstimator, DurationObjective, DurationProblem, ScheduleFamily, SimplexOptions, SweepAxis,
};
use crate::ramsey::{build_schedule, CorrectionAt, CycleSchedule, MeasurementWindow};
use crate::spectra::{default_omega_low, PowerSpectrum, Spur, SynthesisGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spectrum: SpectrumConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub controllers: Vec<ControllerKind>,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub covariance: Option<CovarianceConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub optimize: Option<OptimizeConfig>,
}

/// Frequencies are angular (rad/s) under `omega_*` keys and ordinary (Hz)
/// under `*_hz` keys; each pair is mutually exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub exponent: f64,
    /// PSD at `omega_low`; ignored when `normalize` is present.
    pub amplitude: Option<f64>,
    pub normalize: Option<NormalizeConfig>,
    pub omega_low: Option<f64>,
    pub low_hz: Option<f64>,
    pub omega_cut: Option<f64>,
    pub cut_hz: Option<f64>,
    #[serde(default)]
    pub spurs: Vec<SpurConfig>,
    pub spur_comb: Option<SpurCombConfig>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_true")]
    pub jitter: bool,
    pub grid_split_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizeConfig {
    /// Defaults to the low cutoff.
    pub omega_ref: Option<f64>,
    pub ref_hz: Option<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpurConfig {
    pub omega: Option<f64>,
    pub hz: Option<f64>,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpurCombConfig {
    pub start_hz: f64,
    pub step_hz: f64,
    pub count: usize,
    /// Total spur power as a fraction of the in-band continuum variance.
    #[serde(default = "default_spur_fraction")]
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Durations {
    One(f64),
    Many(Vec<f64>),
}

impl Durations {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Durations::One(t) => vec![*t],
            Durations::Many(v) => v.clone(),
        }
    }
}

/// Either `ramsey` + `dead_time`, or `duty_factor` with `ramsey` or `cycle_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub n_cycles: usize,
    /// Window durations of one cycle.
    pub ramsey: Option<Durations>,
    pub dead_time: Option<f64>,
    pub duty_factor: Option<f64>,
    pub cycle_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub size: usize,
    /// Master seed. Mandatory; there is no time-based seeding.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Significant digits after the point in CSV scientific notation.
    #[serde(default = "default_precision")]
    pub precision: usize,
    /// Number of per-realization traces written by `simulate`.
    #[serde(default)]
    pub traces: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out_dir(), formats: default_formats(), precision: default_precision(), traces: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_metric")]
    pub kind: MetricKind,
    /// Sample counts to report; empty means every `N` from 2 to the number of cycles.
    #[serde(default)]
    pub n_values: Vec<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { kind: default_metric(), n_values: Vec::new() }
    }
}

/// Windows and prediction time for the `covariance` and `accuracy` commands.
/// Defaults to the first cycle of the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceConfig {
    pub windows: Option<Vec<[f64; 2]>>,
    pub t_c: Option<f64>,
    #[serde(default = "default_gain")]
    pub gain: f64,
    /// Number of frequencies in the `pair_tf` table.
    #[serde(default = "default_tf_points")]
    pub tf_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: String,
    pub values: Vec<f64>,
    /// Shortest window of the Ramsey-ratio axis.
    pub t_min: Option<f64>,
    /// Dead time of the Ramsey-ratio axis.
    pub dead_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Accuracy,
    ExpectedSampleVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    MonteCarlo,
    Exact,
    Formula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    pub t_min: f64,
    pub dead_time: f64,
    pub total_budget: Option<f64>,
    #[serde(default = "default_objective")]
    pub objective: ObjectiveName,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorName,
    #[serde(default)]
    pub mode: CoeffMode,
    #[serde(default = "default_gain")]
    pub gain: f64,
    /// `N` of the sample-variance objective.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub simplex: SimplexOptions,
}

fn default_grid_points() -> usize {
    SynthesisGrid::default().points
}
fn default_true() -> bool {
    true
}
fn default_spur_fraction() -> f64 {
    0.1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}
fn default_precision() -> usize {
    10
}
fn default_metric() -> MetricKind {
    MetricKind::SampleVariance
}
fn default_gain() -> f64 {
    1.0
}
fn default_tf_points() -> usize {
    200
}
fn default_n() -> usize {
    2
}
fn default_objective() -> ObjectiveName {
    ObjectiveName::Accuracy
}
fn default_estimator() -> EstimatorName {
    EstimatorName::MonteCarlo
}
fn default_n_samples() -> usize {
    20
}

/// Picks one of an angular / ordinary frequency pair.
fn angular(field: &str, omega: Option<f64>, hz: Option<f64>, hz_field: &str) -> Result<Option<f64>> {
    match (omega, hz) {
        (Some(_), Some(_)) => Err(Error::config(field, format!("give either {field} or {hz_field}, not both"))),
        (Some(w), None) => Ok(Some(w)),
        (None, Some(f)) => Ok(Some(TAU * f)),
        (None, None) => Ok(None),
    }
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

/// Maps library errors raised while building from config onto config errors.
fn as_config(field: &str, e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::config(field, m),
        Error::Config { field: inner, message } => Error::config(format!("{field}.{inner}"), message),
        other => other,
    }
}

impl ScheduleConfig {
    /// Window durations and dead time of one cycle.
    pub fn cycle(&self) -> Result<(Vec<f64>, f64)> {
        let ramsey = self.ramsey.as_ref().map(Durations::to_vec);
        if let Some(r) = &ramsey {
            if r.is_empty() {
                return Err(Error::config("schedule.ramsey", "need at least one duration"));
            }
            for &t in r {
                positive("schedule.ramsey", t)?;
            }
        }
        match (self.duty_factor, self.dead_time) {
            (Some(_), Some(_)) => {
                Err(Error::config("schedule.duty_factor", "duty_factor and dead_time are mutually exclusive"))
            }
            (Some(d), None) => {
                if !(d > 0.0 && d <= 1.0) {
                    return Err(Error::config("schedule.duty_factor", format!("must lie in (0, 1], got {d}")));
                }
                match (ramsey, self.cycle_time) {
                    (Some(r), None) => {
                        let total: f64 = r.iter().sum();
                        Ok((r, total * (1.0 / d - 1.0)))
                    }
                    (None, Some(tc)) => {
                        positive("schedule.cycle_time", tc)?;
                        Ok((vec![d * tc], (1.0 - d) * tc))
                    }
                    (Some(_), Some(_)) => Err(Error::config(
                        "schedule.cycle_time",
                        "with duty_factor give either ramsey or cycle_time, not both",
                    )),
                    (None, None) => Err(Error::config("schedule.cycle_time", "duty_factor needs ramsey or cycle_time")),
                }
            }
            (None, dead) => {
                let r = ramsey.ok_or_else(|| Error::config("schedule.ramsey", "missing"))?;
                let dead = dead.ok_or_else(|| Error::config("schedule.dead_time", "missing (or give duty_factor)"))?;
                if !(dead >= 0.0 && dead.is_finite()) {
                    return Err(Error::config("schedule.dead_time", format!("must be non-negative, got {dead}")));
                }
                if let Some(tc) = self.cycle_time {
                    let implied = r.iter().sum::<f64>() + dead;
                    if (tc - implied).abs() > 1e-12 * implied {
                        return Err(Error::config(
                            "schedule.cycle_time",
                            format!("{tc} disagrees with ramsey + dead_time = {implied}"),
                        ));
                    }
                }
                Ok((r, dead))
            }
        }
    }

    pub fn cycle_time(&self) -> Result<f64> {
        let (r, dead) = self.cycle()?;
        Ok(r.iter().sum::<f64>() + dead)
    }

    pub fn build(&self) -> Result<CycleSchedule> {
        if self.n_cycles == 0 {
            return Err(Error::config("schedule.n_cycles", "must be at least 1"));
        }
        let (r, dead) = self.cycle()?;
        build_schedule(self.n_cycles, &r, dead, CorrectionAt::CycleEnd).map_err(|e| as_config("schedule", e))
    }
}

impl SpectrumConfig {
    /// Builds the spectrum. `cycle_time` sets the default low cutoff.
    pub fn build(&self, cycle_time: f64) -> Result<PowerSpectrum> {
        let omega_low = angular("spectrum.omega_low", self.omega_low, self.low_hz, "low_hz")?
            .unwrap_or_else(|| default_omega_low(cycle_time));
        positive("spectrum.omega_low", omega_low)?;
        let omega_cut = angular("spectrum.omega_cut", self.omega_cut, self.cut_hz, "cut_hz")?
            .ok_or_else(|| Error::config("spectrum.omega_cut", "missing (give omega_cut or cut_hz)"))?;
        if !(omega_cut > omega_low && omega_cut.is_finite()) {
            return Err(Error::config(
                "spectrum.omega_cut",
                format!("must exceed omega_low = {omega_low}, got {omega_cut}"),
            ));
        }
        if !self.exponent.is_finite() {
            return Err(Error::config("spectrum.exponent", "must be finite"));
        }
        let amplitude = match (&self.normalize, self.amplitude) {
            (Some(_), Some(_)) => {
                return Err(Error::config("spectrum.amplitude", "give either amplitude or normalize, not both"))
            }
            (None, None) => return Err(Error::config("spectrum.amplitude", "missing (or give normalize)")),
            (None, Some(a)) => {
                if !(a >= 0.0 && a.is_finite()) {
                    return Err(Error::config("spectrum.amplitude", format!("must be non-negative, got {a}")));
                }
                a
            }
            (Some(_), None) => 1.0,
        };
        let mut spectrum = PowerSpectrum::power_law(self.exponent, amplitude, omega_low, omega_cut)
            .map_err(|e| as_config("spectrum", e))?;
        if let Some(n) = &self.normalize {
            let omega_ref =
                angular("spectrum.normalize.omega_ref", n.omega_ref, n.ref_hz, "ref_hz")?.unwrap_or(omega_low);
            spectrum = spectrum.normalize_at(omega_ref, n.target).map_err(|e| as_config("spectrum.normalize", e))?;
        }
        if let Some(c) = &self.spur_comb {
            if c.count == 0 {
                return Err(Error::config("spectrum.spur_comb.count", "must be at least 1"));
            }
            spectrum
                .add_spur_comb(TAU * c.start_hz, TAU * c.step_hz, c.count, c.fraction)
                .map_err(|e| as_config("spectrum.spur_comb", e))?;
        }
        for (i, s) in self.spurs.iter().enumerate() {
            let field = format!("spectrum.spurs[{i}]");
            let omega =
                angular(&field, s.omega, s.hz, "hz")?.ok_or_else(|| Error::config(&field, "missing omega or hz"))?;
            let spur = Spur::new(omega, s.power).map_err(|e| as_config(&field, e))?;
            spectrum.push_spur(spur).map_err(|e| as_config(&field, e))?;
        }
        Ok(spectrum)
    }

    pub fn grid(&self) -> Result<SynthesisGrid> {
        if self.grid_points < 2 {
            return Err(Error::config("spectrum.grid_points", format!("must be at least 2, got {}", self.grid_points)));
        }
        let mut grid = SynthesisGrid::with_points(self.grid_points);
        grid.jitter = self.jitter;
        if let Some(f) = self.grid_split_hz {
            grid = grid.with_split(TAU * positive("spectrum.grid_split_hz", f)?);
        }
        Ok(grid)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let field =
                e.span().map(|s| format!("config (bytes {}..{})", s.start, s.end)).unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks every section that later commands depend on.
    pub fn validate(&self) -> Result<()> {
        let cycle_time = self.schedule.cycle_time()?;
        self.schedule.build()?;
        self.spectrum.build(cycle_time)?;
        self.spectrum.grid()?;
        for (i, c) in self.controllers.iter().enumerate() {
            c.validate().map_err(|e| as_config(&format!("controllers[{i}]"), e))?;
        }
        if self.ensemble.size == 0 {
            return Err(Error::config("ensemble.size", "must be at least 1"));
        }
        if self.output.formats.is_empty() {
            return Err(Error::config("output.formats", "need at least one format"));
        }
        if self.output.precision > 17 {
            return Err(Error::config("output.precision", "at most 17 digits"));
        }
        if self.metrics.n_values.iter().any(|&n| n < 2) {
            return Err(Error::config("metrics.n_values", "every N must be at least 2"));
        }
        if let Some(s) = &self.sweep {
            self.sweep_axis_of(s)?;
        }
        if let Some(o) = &self.optimize {
            self.duration_problem_of(o)?;
            o.simplex.validate(o.n)?;
        }
        Ok(())
    }

    pub fn cycle_time(&self) -> Result<f64> {
        self.schedule.cycle_time()
    }

    pub fn spectrum(&self) -> Result<PowerSpectrum> {
        self.spectrum.build(self.cycle_time()?)
    }

    pub fn schedule(&self) -> Result<CycleSchedule> {
        self.schedule.build()
    }

    pub fn ensemble(&self) -> Result<Ensemble> {
        Ok(Ensemble::new(&self.spectrum()?, self.ensemble.size, self.ensemble.seed).with_grid(self.spectrum.grid()?))
    }

    /// Controllers, defaulting to free-running plus feedback.
    pub fn controllers(&self) -> Vec<ControllerKind> {
        if self.controllers.is_empty() {
            vec![ControllerKind::FreeRun, ControllerKind::Feedback { gain: 1.0 }]
        } else {
            self.controllers.clone()
        }
    }

    /// Requested sample counts, clipped to what the schedule provides.
    pub fn n_values(&self) -> Result<Vec<usize>> {
        let n_cycles = self.schedule.n_cycles;
        if n_cycles < 2 {
            return Err(Error::config("schedule.n_cycles", "metric curves need at least 2 cycles"));
        }
        if self.metrics.n_values.is_empty() {
            return Ok((2..=n_cycles).collect());
        }
        if let Some(&n) = self.metrics.n_values.iter().find(|&&n| n > n_cycles) {
            return Err(Error::config("metrics.n_values", format!("N = {n} exceeds schedule.n_cycles = {n_cycles}")));
        }
        Ok(self.metrics.n_values.clone())
    }

    /// Windows and prediction time for `covariance` / `accuracy`.
    pub fn prediction_problem(&self) -> Result<(Vec<MeasurementWindow>, f64, f64)> {
        let schedule = self.schedule()?;
        let first = &schedule.cycles()[0];
        let section = self.covariance.clone();
        let gain = section.as_ref().map(|c| c.gain).unwrap_or(1.0);
        let windows = match section.as_ref().and_then(|c| c.windows.clone()) {
            Some(ws) => {
                if ws.is_empty() {
                    return Err(Error::config("covariance.windows", "need at least one window"));
                }
                ws.iter()
                    .map(|[a, b]| MeasurementWindow::new(*a, *b).map_err(|e| as_config("covariance.windows", e)))
                    .collect::<Result<Vec<_>>>()?
            }
            None => first.windows.clone(),
        };
        let t_c = section.as_ref().and_then(|c| c.t_c).unwrap_or(first.correction_time);
        if !t_c.is_finite() {
            return Err(Error::config("covariance.t_c", "must be finite"));
        }
        Ok((windows, t_c, gain))
    }

    fn sweep_axis_of(&self, s: &SweepConfig) -> Result<SweepAxis> {
        let axis = SweepAxis::from_name(&s.axis, &s.values)?;
        if s.values.is_empty() {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        if let SweepAxis::DutyFactor(v) = &axis {
            if let Some(d) = v.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
                return Err(Error::config("sweep.values", format!("duty_factor must lie in (0, 1], got {d}")));
            }
        }
        Ok(axis)
    }

    pub fn sweep_axis(&self) -> Result<SweepAxis> {
        let s = self.sweep.as_ref().ok_or_else(|| Error::config("sweep", "section missing"))?;
        self.sweep_axis_of(s)
    }

    pub fn schedule_family(&self) -> Result<ScheduleFamily> {
        let (r, dead) = self.schedule.cycle()?;
        let cycle_time = r.iter().sum::<f64>() + dead;
        let s = self.sweep.as_ref();
        let t_min = s.and_then(|s| s.t_min).unwrap_or_else(|| r.iter().copied().fold(f64::INFINITY, f64::min));
        positive("sweep.t_min", t_min)?;
        let dead_time = s.and_then(|s| s.dead_time).unwrap_or(dead);
        if !(dead_time >= 0.0 && dead_time.is_finite()) {
            return Err(Error::config("sweep.dead_time", "must be non-negative"));
        }
        Ok(ScheduleFamily {
            cycle_time,
            duty_factor: r.iter().sum::<f64>() / cycle_time,
            n_cycles: self.schedule.n_cycles,
            t_min,
            dead_time,
        })
    }

    fn duration_problem_of(&self, o: &OptimizeConfig) -> Result<DurationProblem> {
        if o.n == 0 {
            return Err(Error::config("optimize.n", "must be at least 1"));
        }
        positive("optimize.t_min", o.t_min)?;
        if !(o.dead_time >= 0.0 && o.dead_time.is_finite()) {
            return Err(Error::config("optimize.dead_time", "must be non-negative"));
        }
        if let Some(b) = o.total_budget {
            if !(b > o.n as f64 * o.t_min) {
                return Err(Error::config("optimize.total_budget", "must exceed n * t_min"));
            }
        }
        if o.objective == ObjectiveName::ExpectedSampleVariance && o.n_samples < 2 {
            return Err(Error::config("optimize.n_samples", "must be at least 2"));
        }
        Ok(DurationProblem { n: o.n, t_min: o.t_min, dead_time: o.dead_time, total_budget: o.total_budget })
    }

    pub fn duration_problem(&self) -> Result<(DurationProblem, DurationObjective, SimplexOptions)> {
        let o = self.optimize.as_ref().ok_or_else(|| Error::config("optimize", "section missing"))?;
        let problem = self.duration_problem_of(o)?;
        let objective = match o.objective {
            ObjectiveName::Accuracy => DurationObjective::Accuracy {
                estimator: match o.estimator {
                    EstimatorName::MonteCarlo => AccuracyEstimator::MonteCarlo {
                        ensemble_size: self.ensemble.size,
                        seed: self.ensemble.seed,
                        grid: self.spectrum.grid()?,
                    },
                    EstimatorName::Exact => AccuracyEstimator::Exact,
                    EstimatorName::Formula => AccuracyEstimator::Formula,
                },
                mode: o.mode,
                gain: o.gain,
            },
            ObjectiveName::ExpectedSampleVariance => {
                DurationObjective::ExpectedSampleVariance { n_samples: o.n_samples, mode: o.mode, gain: o.gain }
            }
        };
        Ok((problem, objective, o.simplex.clone()))
    }
}
