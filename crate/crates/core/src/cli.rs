//! Command-line front end. Every command reads one TOML run configuration and
//! writes plot-ready tables plus a `manifest.json` into the output directory.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Format, ObjectiveName, RunConfig};
use crate::control::{accuracy_cycle, accuracy_from_observations_at, ControllerKind, LoopPlan};
use crate::error::{Error, Result};
use crate::estimator::{
    accuracy_analytic, accuracy_of_coeffs, build_sigma_with, correlation_condition, paper_coeffs_normalized,
    predictor_coeffs_mmse_ridge, CovarianceBlocks, ScheduleCovariance,
};
use crate::metrics::ensemble_curves;
use crate::optimize::{optimize_ramsey_durations, sweep, SweepAxis};
use crate::xfer::{pair_tf, point_pair_tf, CovarianceEngine};

pub const ENV_PREFIX: &str = "HFFCLOCK_";

#[derive(Debug, Parser)]
#[command(
    name = "hffclock",
    version,
    about = "Locked local oscillator simulations: feedback versus hybrid feedforward"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "HFFCLOCK_CONFIG")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `ensemble.seed`.
    #[arg(long, global = true, env = "HFFCLOCK_SEED")]
    pub seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, env = "HFFCLOCK_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for ensemble evaluation (default: available parallelism).
    #[arg(long, global = true, env = "HFFCLOCK_WORKERS")]
    pub workers: Option<usize>,
    /// Output format; overrides `output.formats`.
    #[arg(long, global = true, value_enum, env = "HFFCLOCK_FORMAT")]
    pub format: Option<FormatArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Locked-sample metric curves per controller, plus optional traces.
    Simulate,
    /// Covariance blocks, predictor coefficients and transfer-function tables.
    Covariance,
    /// Analytic and Monte Carlo correction accuracy.
    Accuracy,
    /// Metric table over one swept parameter.
    Sweep {
        /// Axis name; overrides `sweep.axis`.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated axis values; overrides `sweep.values`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
    },
    /// Optimize the Ramsey durations preceding a correction.
    Optimize,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Covariance => "covariance",
            Command::Accuracy => "accuracy",
            Command::Sweep { .. } => "sweep",
            Command::Optimize => "optimize",
        }
    }
}

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const CONFIG: i32 = 2;
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => exit::SUCCESS,
                _ => exit::CONFIG,
            };
        }
    };
    match execute(&cli) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            exit::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                exit::CONFIG
            } else {
                exit::RUNTIME
            }
        }
    }
}

/// Runs the parsed command; returns the manifest path.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let path = cli.config.as_ref().ok_or_else(|| Error::config("--config", "a run configuration is required"))?;
    let mut config = RunConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        config.ensemble.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(f) = cli.format {
        config.output.formats = vec![match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }];
    }
    if let Command::Sweep { axis, values } = &cli.command {
        if axis.is_some() || values.is_some() {
            let section = config.sweep.get_or_insert_with(|| crate::config::SweepConfig {
                axis: String::new(),
                values: Vec::new(),
                t_min: None,
                dead_time: None,
            });
            if let Some(a) = axis {
                section.axis = a.clone();
            }
            if let Some(v) = values {
                section.values = v.clone();
            }
        }
        config.validate()?;
    }
    let workers = match cli.workers {
        Some(0) => return Err(Error::config("--workers", "must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let mut out = Output::new(&config, cli.command.name())?;
        match &cli.command {
            Command::Simulate => cmd_simulate(&config, &mut out)?,
            Command::Covariance => cmd_covariance(&config, &mut out)?,
            Command::Accuracy => cmd_accuracy(&config, &mut out)?,
            Command::Sweep { .. } => cmd_sweep(&config, &mut out)?,
            Command::Optimize => cmd_optimize(&config, &mut out)?,
        }
        out.finish()
    })
}

/// Collects output files and writes the manifest that every file refers to.
struct Output {
    dir: PathBuf,
    command: &'static str,
    config_hash: String,
    seed: u64,
    ensemble_size: usize,
    precision: usize,
    formats: Vec<Format>,
    files: Vec<(String, String)>,
}

const MANIFEST: &str = "manifest.json";

impl Output {
    fn new(config: &RunConfig, command: &'static str) -> Result<Self> {
        // The output location is not part of the experiment.
        let mut hashed = config.clone();
        hashed.output.dir = PathBuf::new();
        let canonical = serde_json::to_vec(&hashed)?;
        let config_hash = hex(&Sha256::digest(&canonical));
        std::fs::create_dir_all(&config.output.dir)?;
        Ok(Output {
            dir: config.output.dir.clone(),
            command,
            config_hash,
            seed: config.ensemble.seed,
            ensemble_size: config.ensemble.size,
            precision: config.output.precision,
            formats: config.output.formats.clone(),
            files: Vec::new(),
        })
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.push((name.to_string(), hex(&Sha256::digest(bytes))));
        Ok(())
    }

    /// CSV with a leading comment line pointing at the manifest.
    fn csv<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>, usize) -> Result<()>,
    {
        let mut buf = Vec::new();
        writeln!(buf, "# manifest={MANIFEST} config_sha256={}", self.config_hash)?;
        body(&mut buf, self.precision)?;
        self.write(name, &buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<()> {
        let doc = json!({
            "manifest": MANIFEST,
            "config_sha256": self.config_hash,
            "data": data,
        });
        let mut buf = serde_json::to_vec_pretty(&doc)?;
        buf.push(b'\n');
        self.write(name, &buf)
    }

    fn finish(self) -> Result<PathBuf> {
        let outputs: Vec<Value> = self.files.iter().map(|(f, h)| json!({ "file": f, "sha256": h })).collect();
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_sha256": self.config_hash,
            "seed": self.seed,
            "ensemble_size": self.ensemble_size,
            "outputs": outputs,
        });
        let path = self.dir.join(MANIFEST);
        let mut buf = serde_json::to_vec_pretty(&manifest)?;
        buf.push(b'\n');
        std::fs::write(&path, buf)?;
        Ok(path)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unique_labels(controllers: &[ControllerKind]) -> Result<Vec<String>> {
    let labels: Vec<String> = controllers.iter().map(ControllerKind::label).collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(Error::config("controllers", format!("duplicate controller '{l}'")));
        }
    }
    Ok(labels)
}

fn plans(config: &RunConfig, controllers: &[ControllerKind]) -> Result<Vec<LoopPlan>> {
    let spectrum = config.spectrum()?;
    let schedule = config.schedule()?;
    let cov = if controllers
        .iter()
        .any(|c| matches!(c, ControllerKind::HffBlock { .. } | ControllerKind::HffMoving { .. }))
    {
        Some(ScheduleCovariance::new(&mut CovarianceEngine::new(&spectrum), &schedule)?)
    } else {
        None
    };
    controllers
        .iter()
        .map(|c| match &cov {
            Some(cov) => LoopPlan::with_covariance(cov, &schedule, *c),
            None => LoopPlan::without_covariance(&schedule, *c),
        })
        .collect()
}

#[derive(Serialize)]
struct CurveJson<'a> {
    controller: &'a str,
    metric: crate::metrics::MetricKind,
    n_realizations: usize,
    n: &'a [usize],
    mean: Vec<f64>,
    std_error: Vec<f64>,
}

fn cmd_simulate(config: &RunConfig, out: &mut Output) -> Result<()> {
    let controllers = config.controllers();
    let labels = unique_labels(&controllers)?;
    let plans = plans(config, &controllers)?;
    let ensemble = config.ensemble()?;
    let n_values = config.n_values()?;
    let curves = ensemble_curves(&ensemble, &plans, config.metrics.kind, &n_values)?;
    for (c, label) in labels.iter().enumerate() {
        let curve = curves.curve(c)?;
        if out.wants(Format::Csv) {
            out.csv(&format!("curve_{label}.csv"), |buf, p| {
                writeln!(buf, "N,mean,std_error")?;
                for (n, s) in n_values.iter().zip(&curve) {
                    writeln!(buf, "{n},{:.p$e},{:.p$e}", s.mean, s.std_error)?;
                }
                Ok(())
            })?;
        }
        if out.wants(Format::Json) {
            out.json(
                &format!("curve_{label}.json"),
                &CurveJson {
                    controller: label,
                    metric: config.metrics.kind,
                    n_realizations: curves.n_realizations(),
                    n: &n_values,
                    mean: curve.iter().map(|s| s.mean).collect(),
                    std_error: curve.iter().map(|s| s.std_error).collect(),
                },
            )?;
        }
    }
    let n_traces = config.output.traces.min(ensemble.size);
    if n_traces > 0 {
        let schedule = config.schedule()?;
        for r in 0..n_traces {
            let realization = ensemble.realization(r, schedule.end_time())?;
            let obs = crate::control::RawObservations::observe(&realization, &schedule)?;
            for (plan, label) in plans.iter().zip(&labels) {
                let trace = plan.run(&obs)?;
                out.csv(&format!("trace_{label}_{r:04}.csv"), |buf, p| trace.write_csv(buf, p))?;
            }
        }
    }
    Ok(())
}

fn nondegenerate(blocks: CovarianceBlocks) -> Result<CovarianceBlocks> {
    if blocks.sigma_cc > 0.0 {
        Ok(blocks)
    } else {
        Err(Error::DegenerateSpectrum)
    }
}

fn blocks_json(blocks: &CovarianceBlocks) -> Value {
    let m: Vec<Vec<f64>> = (0..blocks.m.nrows()).map(|i| blocks.m.row(i).iter().copied().collect()).collect();
    json!({
        "m": m,
        "f": blocks.f.iter().copied().collect::<Vec<f64>>(),
        "sigma_cc": blocks.sigma_cc,
        "min_eigenvalue": blocks.min_eigenvalue(),
        "condition_number": blocks.condition_number(),
        "is_psd": blocks.is_psd(),
    })
}

/// Coefficients of both predictor forms, their exact accuracies and the
/// closed-form accuracy. Failures are reported as strings in place of values.
fn predictors_json(blocks: &CovarianceBlocks, gain: f64) -> Value {
    let paper = paper_coeffs_normalized(blocks, gain).map(|c| c.iter().copied().collect::<Vec<f64>>());
    let mmse = predictor_coeffs_mmse_ridge(blocks);
    let or_err = |r: Result<Value>| r.unwrap_or_else(|e| json!({ "error": e.to_string() }));
    json!({
        "gain": gain,
        "correlation_condition": correlation_condition(blocks, gain),
        "accuracy_analytic": or_err(accuracy_analytic(blocks, gain).map(|a| json!(a))),
        "paper": or_err(paper.map(|c| json!({
            "coeffs": c,
            "accuracy": accuracy_of_coeffs(blocks, &c),
        }))),
        "mmse": or_err(mmse.map(|s| {
            let scaled: Vec<f64> = s.coeffs.iter().map(|c| gain * c).collect();
            json!({
                "coeffs": scaled,
                "accuracy": accuracy_of_coeffs(blocks, &scaled),
                "ridge": s.ridge,
                "condition_number": s.condition_number,
            })
        })),
    })
}

fn cmd_covariance(config: &RunConfig, out: &mut Output) -> Result<()> {
    let spectrum = config.spectrum()?;
    let (windows, t_c, gain) = config.prediction_problem()?;
    let mut engine = CovarianceEngine::new(&spectrum);
    let blocks = nondegenerate(build_sigma_with(&mut engine, &windows, t_c)?)?;
    let windows_json: Vec<[f64; 2]> = windows.iter().map(|w| [w.t_start, w.t_end]).collect();
    out.json(
        "covariance.json",
        &json!({
            "windows": windows_json,
            "t_c": t_c,
            "blocks": blocks_json(&blocks),
            "predictors": predictors_json(&blocks, gain),
        }),
    )?;
    let points = config.covariance.as_ref().map_or(200, |c| c.tf_points).max(2);
    let (lo, hi) = (spectrum.omega_low(), spectrum.omega_cut());
    let omegas: Vec<f64> = (0..points).map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64)).collect();
    let n = windows.len();
    out.csv("pair_tf.csv", |buf, p| {
        let mut header = vec!["omega".to_string()];
        for k in 0..n {
            for l in k..n {
                header.push(format!("pair_{k}_{l}"));
            }
        }
        for k in 0..n {
            header.push(format!("point_{k}"));
        }
        writeln!(buf, "{}", header.join(","))?;
        for &w in &omegas {
            let mut row = vec![format!("{w:.p$e}")];
            for k in 0..n {
                for l in k..n {
                    row.push(format!("{:.p$e}", pair_tf(w, &windows[k], &windows[l])));
                }
            }
            for wk in &windows {
                row.push(format!("{:.p$e}", point_pair_tf(w, wk, t_c)));
            }
            writeln!(buf, "{}", row.join(","))?;
        }
        Ok(())
    })
}

fn cmd_accuracy(config: &RunConfig, out: &mut Output) -> Result<()> {
    let spectrum = config.spectrum()?;
    let (windows, t_c, gain) = config.prediction_problem()?;
    let blocks = nondegenerate(build_sigma_with(&mut CovarianceEngine::new(&spectrum), &windows, t_c)?)?;
    let controllers = config.controllers();
    let labels = unique_labels(&controllers)?;
    let schedule = config.schedule()?;
    let ensemble = config.ensemble()?;
    let mut monte_carlo = serde_json::Map::new();
    for (c, label) in controllers.iter().zip(&labels) {
        let k = accuracy_cycle(&schedule, *c)?;
        let head = schedule.truncated(k + 1)?;
        let plan = LoopPlan::new(&spectrum, &head, *c)?;
        let a = accuracy_from_observations_at(&plan, &ensemble.observe(&head)?, k)?;
        monte_carlo.insert(
            label.clone(),
            json!({ "accuracy": a.value, "std_error": a.std_error, "n_realizations": a.n_realizations, "cycle": k }),
        );
    }
    let windows_json: Vec<[f64; 2]> = windows.iter().map(|w| [w.t_start, w.t_end]).collect();
    out.json(
        "accuracy.json",
        &json!({
            "windows": windows_json,
            "t_c": t_c,
            "blocks": blocks_json(&blocks),
            "predictors": predictors_json(&blocks, gain),
            "monte_carlo": monte_carlo,
        }),
    )
}

fn cmd_sweep(config: &RunConfig, out: &mut Output) -> Result<()> {
    let axis = config.sweep_axis()?;
    let controllers = config.controllers();
    unique_labels(&controllers)?;
    let table = sweep(&config.spectrum()?, &config.schedule_family()?, &controllers, &axis, &config.ensemble()?)?;
    if out.wants(Format::Csv) {
        out.csv("sweep.csv", |buf, p| table.write_csv(buf, p))?;
    }
    if out.wants(Format::Json) {
        out.json("sweep.json", &table)?;
    }
    Ok(())
}

fn cmd_optimize(config: &RunConfig, out: &mut Output) -> Result<()> {
    let (problem, objective, simplex) = config.duration_problem()?;
    let result = optimize_ramsey_durations(&config.spectrum()?, problem, objective, &simplex)?;
    if out.wants(Format::Json) {
        out.json("optimize.json", &json!({ "problem": problem, "objective": objective, "result": result }))?;
    }
    if out.wants(Format::Csv) {
        let is_accuracy = config.optimize.as_ref().map(|o| o.objective) == Some(ObjectiveName::Accuracy);
        out.csv("optimize.csv", |buf, p| {
            let names: Vec<String> = (0..result.durations.len()).map(|i| format!("t{}", i + 1)).collect();
            writeln!(
                buf,
                "{},ratio,objective,objective_se,equal,equal_se,feedback,feedback_se,flat_landscape,objective_kind",
                names.join(",")
            )?;
            let durations: Vec<String> = result.durations.iter().map(|t| format!("{t:.p$e}")).collect();
            let (fb, fb_se) = match result.feedback_baseline {
                Some(v) => (format!("{:.p$e}", v.value), format!("{:.p$e}", v.std_error)),
                None => (String::new(), String::new()),
            };
            writeln!(
                buf,
                "{},{:.p$e},{:.p$e},{:.p$e},{:.p$e},{:.p$e},{fb},{fb_se},{},{}",
                durations.join(","),
                result.ratio,
                result.objective.value,
                result.objective.std_error,
                result.equal_baseline.value,
                result.equal_baseline.std_error,
                result.flat_landscape,
                if is_accuracy { "accuracy" } else { "expected_sample_variance" }
            )?;
            Ok(())
        })?;
    }
    Ok(())
}

/// Lists the sweep axes, for help text and error messages.
pub fn valid_axes() -> &'static [&'static str] {
    &SweepAxis::NAMES
}

/// Reads a manifest and returns the listed output files.
pub fn manifest_outputs(path: &Path) -> Result<Vec<String>> {
    let v: Value = serde_json::from_slice(&std::fs::read(path)?)?;
    Ok(v["outputs"]
        .as_array()
        .map(|a| a.iter().filter_map(|o| o["file"].as_str().map(String::from)).collect())
        .unwrap_or_default())
}
