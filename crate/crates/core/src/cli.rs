//! Command-line front end.
//!
//! Every subcommand reads an optional JSON config whose keys mirror the flag
//! names (`snake_case`); flags given on the command line win. Errors are
//! reported as one line of JSON on stderr and a distinct exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::basis::{Interval, TensorBasis, MAX_DEGREE};
use crate::error::{Error, ModelKind};
use crate::estimator::{fit_covariate, fit_trend, gram_diagnostics, FitArtifact, RidgeFit, RngMetadata, WeightRegion};
use crate::experiments::{
    run_coverage_study, run_rate_study, select_j, CovariateTruth, CoverageStudyConfig, JMode, JRule, NoiseSpec,
    RateStudyConfig, StudyResult, Truth,
};
use crate::field::{simulate_covariate_data, simulate_trend_data, FieldModel};
use crate::inference::{
    confidence_band, covariate_variance, hac_long_run_matrix, HacConfig, DEFAULT_BANDWIDTH_FRACTION,
};
use crate::io::{fmt_f64, read_dataset_file, write_atomic, Dataset};
use crate::points::Points;
use crate::rng::{Streams, GENERATOR_NAME};
use crate::sampling::{infer_region, rescale_sites_with_offset, SamplingDesign, SiteDensity, SiteSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_EMPTY_INPUT: i32 = 3;
pub const EXIT_INPUT: i32 = 4;
pub const EXIT_REGION: i32 = 5;
pub const EXIT_SINGULAR: i32 = 6;
pub const EXIT_ARTIFACT: i32 = 7;
pub const EXIT_NUMERICAL: i32 = 8;
pub const EXIT_IO: i32 = 9;
pub const EXIT_INVALID: i32 = 10;

/// Smoothness assumed by the default basis-size rule.
const DEFAULT_SMOOTHNESS: f64 = 2.0;
/// Upper bound on the probe grid used for basis-norm diagnostics.
const PROBE_POINTS: usize = 20_000;

#[derive(Parser, Debug)]
#[command(name = "spatial-ridge", version, about = "Series ridge regression for irregularly spaced spatial data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a trend or covariate model to a CSV dataset.
    Fit(FitArgs),
    /// Evaluate a fitted surface on a grid.
    Predict(PredictArgs),
    /// Pointwise confidence intervals on a grid.
    Infer(InferArgs),
    /// Simulate a dataset.
    Simulate(SimulateArgs),
    /// Monte Carlo study of convergence rates.
    RateStudy(StudyArgs),
    /// Monte Carlo study of interval coverage.
    CoverageStudy(CoverageArgs),
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
enum OutFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
struct FitArgs {
    /// JSON file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Input CSV (s1..sd, y, x1..xp).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Fit artifact (JSON).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Residual table; defaults to `<output>.residuals.csv`.
    #[arg(long)]
    residuals: Option<PathBuf>,
    #[arg(long)]
    degree: Option<usize>,
    /// Total basis size (split evenly over dimensions).
    #[arg(long = "J", visible_alias = "j")]
    j: Option<usize>,
    /// Interior knots per dimension, comma separated.
    #[arg(long, value_delimiter = ',')]
    knots_per_dim: Option<Vec<usize>>,
    /// Ridge penalty; default 0.5/n.
    #[arg(long)]
    ridge: Option<f64>,
    /// Region side lengths A_1,...,A_d.
    #[arg(long, value_delimiter = ',')]
    region: Option<Vec<f64>>,
    /// Region center (with --region); default the origin.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    center: Option<Vec<f64>>,
    /// Infer the region from the sites with this margin fraction.
    #[arg(long)]
    infer_region: Option<f64>,
    /// Expected number of covariate columns.
    #[arg(long)]
    covariates: Option<usize>,
    /// Covariate weight region in standardized units, `lo:hi,...`.
    #[arg(long, allow_hyphen_values = true)]
    weight_region: Option<String>,
    /// Seed of the data, if simulated; recorded in the artifact.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    out_format: Option<OutFormat>,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
struct PredictArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Fit artifact from `fit`.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Grid points per dimension (one value repeats).
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    out_format: Option<OutFormat>,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
struct InferArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    fit: Option<PathBuf>,
    /// The dataset the artifact was fit on.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    level: Option<f64>,
    /// HAC bandwidths as a fraction of the region side lengths.
    #[arg(long)]
    bandwidth_frac: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    out_format: Option<OutFormat>,
}

/// Full description of a simulated dataset.
#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
struct SimulateSpec {
    region: Vec<f64>,
    n: usize,
    seed: u64,
    #[serde(default = "default_truth")]
    truth: Truth,
    #[serde(default = "default_noise")]
    noise: NoiseSpec,
    #[serde(default = "default_field")]
    field: FieldModel,
    #[serde(default = "default_density")]
    density: SiteDensity,
    /// One field model per covariate; empty simulates the trend model.
    #[serde(default)]
    covariates: Vec<FieldModel>,
    #[serde(default = "default_covariate_truth")]
    covariate_truth: CovariateTruth,
    /// Conditional error standard deviation of the covariate model.
    #[serde(default = "default_noise_sd")]
    noise_sd: f64,
}

fn default_truth() -> Truth {
    Truth::Default
}

fn default_noise() -> NoiseSpec {
    NoiseSpec { eta: 0.5, sigma_eps: 0.5 }
}

fn default_field() -> FieldModel {
    FieldModel::standard_exponential(1.0).expect("valid kernel")
}

fn default_density() -> SiteDensity {
    SiteDensity::Uniform
}

fn default_covariate_truth() -> CovariateTruth {
    CovariateTruth::SinePlusSquare
}

fn default_noise_sd() -> f64 {
    0.5
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
struct SimulateArgs {
    /// Simulation spec (JSON); flags override its fields.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    region: Option<Vec<f64>>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of covariates (default fields when the config lists none).
    #[arg(long)]
    covariates: Option<usize>,
    /// Dataset CSV; metadata goes to `<output>.meta.json`.
    #[arg(long)]
    #[serde(skip)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct StudyArgs {
    /// Study config (JSON); missing keys take the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Report JSON; the per-rung table goes to `<output>.rungs.csv`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct CoverageArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    bandwidth_frac: Option<f64>,
}

/// A failed run: error kind, exit code and message.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { kind: "usage", code: EXIT_USAGE, message: message.into() }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Failure { kind: "invalid_parameter", code: EXIT_INVALID, message: message.into() }
    }

    fn to_json(&self) -> String {
        json!({ "error": self.kind, "exit_code": self.code, "message": self.message }).to_string()
    }
}

fn classify(err: &Error) -> (&'static str, i32) {
    match err {
        Error::InvalidParameter(_) | Error::EmptyWeightRegion => ("invalid_parameter", EXIT_INVALID),
        Error::Domain { .. } => ("domain", EXIT_REGION),
        Error::OutOfRegion { .. } => ("out_of_region", EXIT_REGION),
        Error::Input(_) | Error::Csv(_) | Error::Json(_) => ("input", EXIT_INPUT),
        Error::EmptyInput(_) => ("empty_input", EXIT_EMPTY_INPUT),
        Error::SingularGram { .. } => ("singular_gram", EXIT_SINGULAR),
        Error::ModelKind { .. } | Error::Artifact(_) => ("artifact", EXIT_ARTIFACT),
        Error::Quadrature { .. } | Error::CellBudget { .. } | Error::NegativeVariance { .. } => {
            ("numerical", EXIT_NUMERICAL)
        }
        Error::Study { source, .. } => classify(source),
        Error::Io(_) => ("io", EXIT_IO),
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let (kind, code) = classify(&err);
        Failure { kind, code, message: err.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// What a subcommand produced: a summary for stdout and warnings for stderr.
struct Outcome {
    summary: Value,
    warnings: Vec<String>,
}

/// Runs the CLI on `args` (including the program name), writing the summary
/// to `out` and warnings and errors to `err`. Returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return EXIT_OK;
            }
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let _ = writeln!(err, "{}", Failure::usage(first).to_json());
            return EXIT_USAGE;
        }
    };
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| dispatch(cli.command)));
    let result = match result {
        Ok(r) => r,
        Err(panic) => {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(Failure { kind: "internal", code: EXIT_INTERNAL, message })
        }
    };
    match result {
        Ok(outcome) => {
            for w in &outcome.warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            let text = serde_json::to_string_pretty(&outcome.summary).unwrap_or_default();
            if writeln!(out, "{text}").is_err() {
                return EXIT_IO;
            }
            EXIT_OK
        }
        Err(f) => {
            let _ = writeln!(err, "{}", f.to_json());
            f.code
        }
    }
}

/// [`run_with`] on the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

fn dispatch(command: Command) -> CliResult<Outcome> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::RateStudy(a) => cmd_rate_study(a),
        Command::CoverageStudy(a) => cmd_coverage_study(a),
    }
}

fn read_json_object(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    match serde_json::from_str::<Value>(&text).map_err(Error::from)? {
        Value::Object(map) => Ok(map),
        _ => Err(Failure::from(Error::Input(format!("{}: config must be a JSON object", path.display())))),
    }
}

/// Flags that are set, as a JSON object.
fn set_flags<T: Serialize>(flags: &T) -> Map<String, Value> {
    match serde_json::to_value(flags) {
        Ok(Value::Object(map)) => map.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Merges the config file under the flags. Of each mutually exclusive pair,
/// a key set by a flag removes its partner coming from the file.
fn resolve<T: Serialize + DeserializeOwned>(
    flags: &T,
    config: Option<&Path>,
    exclusive: &[(&str, &str)],
) -> CliResult<T> {
    let mut merged = match config {
        Some(p) => read_json_object(p)?,
        None => Map::new(),
    };
    let set = set_flags(flags);
    for (a, b) in exclusive {
        if set.contains_key(*a) {
            merged.remove(*b);
        }
        if set.contains_key(*b) {
            merged.remove(*a);
        }
    }
    merged.extend(set);
    for (a, b) in exclusive {
        if merged.contains_key(*a) && merged.contains_key(*b) {
            return Err(Failure::usage(format!("{a} and {b} are mutually exclusive")));
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::usage(format!("config: {e}")))
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value.as_ref().ok_or_else(|| Failure::usage(format!("missing required --{flag}")))
}

/// Appends `suffix` to the file name.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Refuses to overwrite any input.
fn check_distinct(inputs: &[&Path], outputs: &[&Path]) -> CliResult<()> {
    for o in outputs {
        for i in inputs {
            let same = match (std::fs::canonicalize(i), std::fs::canonicalize(o)) {
                (Ok(a), Ok(b)) => a == b,
                _ => i == o,
            };
            if same {
                return Err(Failure::usage(format!("output {} would overwrite an input", o.display())));
            }
        }
    }
    Ok(())
}

fn metadata(command: &str, config: Value, seed: Option<u64>) -> Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "generator": GENERATOR_NAME,
        "seed": seed,
        "config": config,
    })
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(Failure::from)
}

/// A numeric table written as CSV or as a JSON array of records.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<Value>>,
}

fn cell(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_u64() || n.is_i64() => n.to_string(),
        Value::Number(n) => fmt_f64(n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => s.clone(),
        Value::Null => "NaN".into(),
        other => other.to_string(),
    }
}

impl Table {
    fn write(&self, path: &Path, format: OutFormat) -> CliResult<()> {
        let bytes = match format {
            OutFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.header).map_err(Error::from)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(cell)).map_err(Error::from)?;
                }
                w.into_inner().map_err(|e| Error::Io(e.into_error()))?
            }
            OutFormat::Json => {
                let records: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| Value::Object(self.header.iter().cloned().zip(row.iter().cloned()).collect()))
                    .collect();
                let mut text = serde_json::to_string(&records).map_err(Error::from)?;
                text.push('\n');
                text.into_bytes()
            }
        };
        write_atomic(path, &bytes).map_err(Failure::from)
    }
}

fn coordinate_header(d: usize, p: usize) -> Vec<String> {
    (1..=d).map(|k| format!("s{k}")).chain((1..=p).map(|k| format!("x{k}"))).collect()
}

fn parse_weight_region(text: &str, p: usize) -> CliResult<WeightRegion> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for part in text.split(',') {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| Failure::invalid(format!("weight region entry {part:?} is not lo:hi")))?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| Failure::invalid(format!("bad number {s:?} in weight region")))
        };
        lower.push(parse(lo)?);
        upper.push(parse(hi)?);
    }
    if lower.len() != p {
        return Err(Failure::invalid(format!("weight region has {} intervals for {p} covariates", lower.len())));
    }
    Ok(WeightRegion::new(lower, upper)?)
}

fn expand(values: &[usize], dims: usize, what: &str) -> CliResult<Vec<usize>> {
    match values.len() {
        1 => Ok(vec![values[0]; dims]),
        n if n == dims => Ok(values.to_vec()),
        n => Err(Failure::invalid(format!("{what} has {n} entries for {dims} dimensions"))),
    }
}

fn check_level(level: f64) -> CliResult<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Failure::invalid(format!("confidence level must lie in (0, 1), got {level}")))
    }
}

fn check_fraction(fraction: f64) -> CliResult<()> {
    if fraction > 0.0 && fraction.is_finite() {
        Ok(())
    } else {
        Err(Failure::invalid(format!("bandwidth fraction must be positive, got {fraction}")))
    }
}

/// Validated fit settings, resolved before any data is read.
struct FitPlan {
    input: PathBuf,
    output: PathBuf,
    residuals: PathBuf,
    degree: usize,
    weight_region: Option<String>,
    format: OutFormat,
}

fn plan_fit(a: &FitArgs) -> CliResult<FitPlan> {
    let input = required(&a.input, "input")?.clone();
    let output = required(&a.output, "output")?.clone();
    let residuals = a.residuals.clone().unwrap_or_else(|| sidecar(&output, ".residuals.csv"));
    let degree = a.degree.unwrap_or(3);
    if degree > MAX_DEGREE {
        return Err(Failure::invalid(format!("degree {degree} exceeds the maximum {MAX_DEGREE}")));
    }
    if let Some(r) = a.ridge {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Failure::invalid(format!("ridge penalty must be finite and nonnegative, got {r}")));
        }
    }
    match (&a.region, a.infer_region) {
        (None, None) => return Err(Failure::usage("give --region or --infer-region")),
        (Some(r), _) if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) => {
            return Err(Failure::invalid("region side lengths must be positive"));
        }
        (_, Some(m)) if !(m.is_finite() && m > 0.0) => {
            return Err(Failure::invalid("region margin fraction must be positive"));
        }
        _ => {}
    }
    if a.center.is_some() && a.region.is_none() {
        return Err(Failure::usage("--center needs --region"));
    }
    if a.j == Some(0) {
        return Err(Failure::invalid("basis size must be positive"));
    }
    check_distinct(&[&input], &[&output, &residuals])?;
    Ok(FitPlan {
        input,
        output,
        residuals,
        degree,
        weight_region: a.weight_region.clone(),
        format: a.out_format.unwrap_or_default(),
    })
}

fn site_set(a: &FitArgs, raw: Points) -> CliResult<SiteSet> {
    let d = raw.dim();
    if let Some(region) = &a.region {
        if region.len() != d {
            return Err(Failure::invalid(format!("--region has {} entries for {d} site dimensions", region.len())));
        }
        let center = a.center.clone().unwrap_or_else(|| vec![0.0; d]);
        if center.len() != d {
            return Err(Failure::invalid(format!("--center has {} entries for {d} site dimensions", center.len())));
        }
        Ok(rescale_sites_with_offset(raw, region, &center)?)
    } else {
        let inferred = infer_region(&raw, a.infer_region.expect("checked by plan"))?;
        Ok(rescale_sites_with_offset(raw, &inferred.scales, &inferred.offset)?)
    }
}

fn build_basis(a: &FitArgs, degree: usize, dims: usize, n: usize) -> CliResult<TensorBasis> {
    if let Some(knots) = &a.knots_per_dim {
        return Ok(TensorBasis::uniform(degree, &expand(knots, dims, "--knots-per-dim")?)?);
    }
    if let Some(j) = a.j {
        return Ok(TensorBasis::with_total_dimension(degree, dims, j)?);
    }
    if n < 2 {
        return Err(Failure::invalid("default basis size needs at least two rows; give --J"));
    }
    let sel = select_j(n as f64, n, DEFAULT_SMOOTHNESS, dims, degree, JRule { mode: JMode::L2, scale: 1.0 })?;
    let knots: Vec<usize> = sel.per_dim.iter().map(|s| s - degree - 1).collect();
    Ok(TensorBasis::uniform(degree, &knots)?)
}

/// Grid over the model domain: the cube for sites, the weight region (or
/// the standardized range) for covariates.
fn model_grid(artifact: &FitArtifact, resolution: &[usize]) -> CliResult<Points> {
    let d = artifact.scales.len();
    let p = artifact.covariate_map.as_ref().map_or(0, |m| m.dim());
    let res = expand(resolution, d + p, "--grid")?;
    if res.iter().any(|&r| r < 2) {
        return Err(Failure::invalid("grid needs at least 2 points per dimension"));
    }
    let mut intervals = vec![Interval::UNIT; d];
    for k in 0..p {
        intervals.push(match &artifact.weight_region {
            Some(w) => Interval::new(w.lower[k], w.upper[k])?,
            None => Interval::UNIT,
        });
    }
    Ok(Points::grid(&res, &intervals)?)
}

fn probe_grid(fit: &RidgeFit) -> CliResult<Points> {
    let dims = fit.basis().dim();
    let per = ((PROBE_POINTS as f64).powf(1.0 / dims as f64).floor() as usize).clamp(2, 50);
    let d = fit.sites().dim();
    let mut intervals = vec![Interval::UNIT; d];
    if let Some(w) = fit.predictor().weight_region() {
        for k in 0..w.dim() {
            intervals.push(Interval::new(w.lower[k], w.upper[k])?);
        }
    }
    Ok(Points::grid(&vec![per; dims], &intervals)?)
}

fn read_artifact(path: &Path) -> CliResult<FitArtifact> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    FitArtifact::from_json(&text).map_err(|e| match e {
        Error::Json(j) => Failure::from(Error::Artifact(format!("{}: {j}", path.display()))),
        other => Failure::from(other),
    })
}

fn cmd_fit(flags: FitArgs) -> CliResult<Outcome> {
    let a = resolve(&flags, flags.config.as_deref(), &[("region", "infer_region"), ("j", "knots_per_dim")])?;
    let plan = plan_fit(&a)?;
    let Dataset { sites: raw, y, covariates: x } = read_dataset_file(&plan.input)?;
    let (d, p, n) = (raw.dim(), x.dim(), y.len());
    if let Some(expected) = a.covariates {
        if expected != p {
            return Err(
                Error::Input(format!("schema mismatch: expected {expected} covariate column(s), found {p}")).into()
            );
        }
    }
    let weight_region = match &plan.weight_region {
        Some(text) if p == 0 => return Err(Failure::invalid(format!("weight region {text:?} given for a trend fit"))),
        Some(text) => Some(parse_weight_region(text, p)?),
        None => None,
    };
    let sites = site_set(&a, raw)?;
    let basis = build_basis(&a, plan.degree, d + p, n)?;
    let penalty = a.ridge.unwrap_or(0.5 / n as f64);
    let fit = if p == 0 {
        fit_trend(&sites, &y, &basis, penalty)?
    } else {
        fit_covariate(&sites, &x, &y, &basis, weight_region, penalty)?
    };
    let diag = gram_diagnostics(&fit, &probe_grid(&fit)?)?;
    let resid = fit.residuals(&y)?;
    let resid_norm = resid.iter().map(|r| r * r).sum::<f64>().sqrt();

    let mut artifact = fit.artifact();
    artifact.rng = a.seed.map(|seed| RngMetadata { generator: GENERATOR_NAME.into(), seed });
    let text = artifact.to_json()? + "\n";
    write_atomic(&plan.output, text.as_bytes())?;

    let mut header = coordinate_header(d, p);
    header.splice(d..d, ["y".to_string()]);
    header.extend(["fitted".to_string(), "residual".to_string()]);
    let rows = (0..n)
        .map(|i| {
            let mut r: Vec<Value> = fit.sites().raw().row(i).iter().map(|&v| json!(v)).collect();
            r.push(json!(y[i]));
            r.extend(x.row(i).iter().map(|&v| json!(v)));
            r.push(json!(fit.fitted_values()[i]));
            r.push(json!(resid[i]));
            r
        })
        .collect();
    Table { header, rows }.write(&plan.residuals, plan.format)?;

    let summary = json!({
        "model_kind": fit.kind(),
        "n": n,
        "J": basis.total_dimension(),
        "per_dim": basis.spec().interior_knots.iter().map(|k| k + plan.degree + 1).collect::<Vec<_>>(),
        "degree": plan.degree,
        "ridge": penalty,
        "scales": fit.sites().scales(),
        "offset": fit.sites().offset(),
        "gram": diag,
        "residual_norm": resid_norm,
        "rmse": resid_norm / (n as f64).sqrt(),
        "normal_equation_residual": fit.normal_equation_residual(),
        "artifact": plan.output,
        "residuals": plan.residuals,
    });
    let meta_path = sidecar(&plan.output, ".meta.json");
    let mut meta = metadata("fit", serde_json::to_value(&a).map_err(Error::from)?, a.seed);
    meta["summary"] = summary.clone();
    write_json(&meta_path, &meta)?;
    Ok(Outcome { summary, warnings: Vec::new() })
}

fn surface_rows(artifact: &FitArtifact, grid: &Points, columns: &[&[f64]]) -> CliResult<Vec<Vec<Value>>> {
    let predictor = artifact.predictor()?;
    Ok(grid
        .rows()
        .enumerate()
        .map(|(i, z)| {
            let mut r: Vec<Value> = predictor.to_raw(z).into_iter().map(|v| json!(v)).collect();
            r.extend(columns.iter().map(|c| json!(c[i])));
            r
        })
        .collect())
}

fn cmd_predict(flags: PredictArgs) -> CliResult<Outcome> {
    let a = resolve(&flags, flags.config.as_deref(), &[])?;
    let fit_path = required(&a.fit, "fit")?;
    let output = required(&a.output, "output")?;
    let resolution = required(&a.grid, "grid")?;
    check_distinct(&[fit_path], &[output, &sidecar(output, ".meta.json")])?;
    let artifact = read_artifact(fit_path)?;
    let grid = model_grid(&artifact, resolution)?;
    let estimate = artifact.predictor()?.predict(&grid)?;
    let d = artifact.scales.len();
    let p = artifact.covariate_map.as_ref().map_or(0, |m| m.dim());
    let mut header = coordinate_header(d, p);
    header.push("estimate".into());
    let rows = surface_rows(&artifact, &grid, &[&estimate])?;
    Table { header, rows }.write(output, a.out_format.unwrap_or_default())?;
    let summary = json!({
        "model_kind": artifact.model_kind,
        "points": grid.len(),
        "grid": expand(resolution, d + p, "--grid")?,
        "J": artifact.beta.len(),
        "ridge": artifact.penalty,
        "output": output,
    });
    let mut meta =
        metadata("predict", serde_json::to_value(&a).map_err(Error::from)?, artifact.rng.as_ref().map(|r| r.seed));
    meta["summary"] = summary.clone();
    write_json(&sidecar(output, ".meta.json"), &meta)?;
    Ok(Outcome { summary, warnings: Vec::new() })
}

fn cmd_infer(flags: InferArgs) -> CliResult<Outcome> {
    let a = resolve(&flags, flags.config.as_deref(), &[])?;
    let fit_path = required(&a.fit, "fit")?;
    let input = required(&a.input, "input")?;
    let output = required(&a.output, "output")?;
    let resolution = required(&a.grid, "grid")?;
    let level = a.level.unwrap_or(0.95);
    let fraction = a.bandwidth_frac.unwrap_or(DEFAULT_BANDWIDTH_FRACTION);
    check_level(level)?;
    check_fraction(fraction)?;
    check_distinct(&[fit_path, input], &[output, &sidecar(output, ".meta.json")])?;

    let artifact = read_artifact(fit_path)?;
    let grid = model_grid(&artifact, resolution)?;
    let data = read_dataset_file(input)?;
    let d = artifact.scales.len();
    let p = artifact.covariate_map.as_ref().map_or(0, |m| m.dim());
    if data.sites.dim() != d || data.covariates.dim() != p {
        return Err(Error::Input(format!(
            "schema mismatch: artifact expects {d} site and {p} covariate column(s), data has {} and {}",
            data.sites.dim(),
            data.covariates.dim()
        ))
        .into());
    }
    let fit = artifact.refit(data.sites, &data.y, &data.covariates)?;
    let (var, bandwidths, kernel) = match artifact.model_kind {
        ModelKind::Trend => {
            let hac = HacConfig::from_fraction(&artifact.scales, fraction)?;
            let var = hac_long_run_matrix(&fit, &data.y, &hac)?;
            let name = hac.kernel.name();
            (var, Some(hac.bandwidths), name)
        }
        ModelKind::Covariate => (covariate_variance(&fit, &data.y)?, None, "iid-sandwich"),
    };
    let band = confidence_band(&fit, &var, &grid, level)?;
    let mut header = coordinate_header(d, p);
    header.extend(["estimate", "se", "lower", "upper"].map(String::from));
    let rows = surface_rows(&artifact, &grid, &[&band.estimate, &band.se, &band.lower, &band.upper])?;
    Table { header, rows }.write(output, a.out_format.unwrap_or_default())?;

    let mut warnings = Vec::new();
    if !band.clamped.is_empty() {
        warnings.push(format!(
            "{} of {} grid variances were slightly negative and clamped to 0",
            band.clamped.len(),
            grid.len()
        ));
    }
    if artifact.model_kind == ModelKind::Trend && var.diagonal_only {
        warnings.push("no site pairs fell inside the HAC bandwidth; the variance is i.i.d.-like".into());
    }
    let summary = json!({
        "model_kind": artifact.model_kind,
        "points": grid.len(),
        "grid": expand(resolution, d + p, "--grid")?,
        "level": level,
        "quantile": band.quantile,
        "kernel": kernel,
        "bandwidth_fraction": bandwidths.as_ref().map(|_| fraction),
        "bandwidths": bandwidths,
        "ridge": artifact.penalty,
        "J": artifact.beta.len(),
        "pairs": var.pairs,
        "clamped": band.clamped.len(),
        "clamped_fraction": band.clamped.len() as f64 / grid.len() as f64,
        "output": output,
    });
    let mut meta =
        metadata("infer", serde_json::to_value(&a).map_err(Error::from)?, artifact.rng.as_ref().map(|r| r.seed));
    meta["summary"] = summary.clone();
    meta["clamped_points"] = json!(band.clamped);
    write_json(&sidecar(output, ".meta.json"), &meta)?;
    Ok(Outcome { summary, warnings })
}

fn cmd_simulate(flags: SimulateArgs) -> CliResult<Outcome> {
    let output = required(&flags.output, "output")?.clone();
    let mut merged = match &flags.config {
        Some(p) => read_json_object(p)?,
        None => Map::new(),
    };
    let set = set_flags(&flags);
    let covariates = set.get("covariates").and_then(Value::as_u64).map(|v| v as usize);
    for (k, v) in set {
        if k != "covariates" {
            merged.insert(k, v);
        }
    }
    for key in ["region", "n", "seed"] {
        if !merged.contains_key(key) {
            return Err(Failure::usage(format!("simulate needs {key} (flag --{key} or config key)")));
        }
    }
    let mut spec: SimulateSpec =
        serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::usage(format!("config: {e}")))?;
    if let Some(p) = covariates {
        if spec.covariates.is_empty() {
            spec.covariates = vec![default_field(); p];
        } else if spec.covariates.len() != p {
            return Err(Failure::invalid(format!(
                "--covariates {p} but the spec lists {} covariate fields",
                spec.covariates.len()
            )));
        }
    }
    if spec.n == 0 {
        return Err(Failure::invalid("n must be positive"));
    }
    spec.noise.validate()?;
    let mut inputs: Vec<&Path> = Vec::new();
    if let Some(c) = &flags.config {
        inputs.push(c);
    }
    let meta_path = sidecar(&output, ".meta.json");
    check_distinct(&inputs, &[&output, &meta_path])?;

    let design = SamplingDesign::new(spec.region.clone(), spec.density.clone())?;
    let streams = Streams::new(spec.seed);
    let sites = design.draw_sites(spec.n, streams)?;
    let (y, x) = if spec.covariates.is_empty() {
        let truth = |z: &[f64]| spec.truth.eval(z);
        let y = if spec.noise.noiseless() {
            sites.scaled().rows().map(truth).collect()
        } else {
            let eta = |_: &[f64]| spec.noise.eta;
            let sig = |_: &[f64]| spec.noise.sigma_eps;
            simulate_trend_data(&truth, &eta, &sig, &spec.field, &sites, streams)?
        };
        (y, Points::empty_rows(spec.n))
    } else {
        if !(spec.noise_sd.is_finite() && spec.noise_sd > 0.0) {
            return Err(Failure::invalid("noise_sd must be positive"));
        }
        let m0 = |z: &[f64], x: &[f64]| spec.covariate_truth.eval(z, x);
        let h = |_: &[f64], _: &[f64]| spec.noise_sd;
        simulate_covariate_data(&m0, &h, &spec.covariates, &sites, streams)?
    };
    let data = Dataset { sites: sites.raw().clone(), y, covariates: x };
    let mut buf = Vec::new();
    crate::io::write_dataset(&mut buf, &data)?;
    write_atomic(&output, &buf)?;
    let summary = json!({
        "n": spec.n,
        "dimension": spec.region.len(),
        "covariates": spec.covariates.len(),
        "seed": spec.seed,
        "output": output,
        "metadata": meta_path,
    });
    let meta = metadata("simulate", serde_json::to_value(&spec).map_err(Error::from)?, Some(spec.seed));
    write_json(&meta_path, &meta)?;
    Ok(Outcome { summary, warnings: Vec::new() })
}

/// Builds a study config from defaults, the config file and the flags, in
/// increasing precedence. The seed has no default.
fn study_config<T: Serialize + DeserializeOwned>(
    defaults: &T,
    config: Option<&Path>,
    overrides: Vec<(&str, Value)>,
) -> CliResult<T> {
    let mut merged = match serde_json::to_value(defaults).map_err(Error::from)? {
        Value::Object(m) => m,
        _ => unreachable!("study configs serialize to objects"),
    };
    merged.remove("seed");
    let allowed: Vec<String> = merged.keys().cloned().chain(["seed".to_string()]).collect();
    if let Some(p) = config {
        for (k, v) in read_json_object(p)? {
            if !allowed.contains(&k) {
                return Err(Failure::usage(format!("config: unknown key {k:?}")));
            }
            merged.insert(k, v);
        }
    }
    for (k, v) in overrides {
        if !v.is_null() {
            merged.insert(k.to_string(), v);
        }
    }
    if !merged.contains_key("seed") {
        return Err(Failure::usage("studies need a seed (--seed or config key \"seed\")"));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::usage(format!("config: {e}")))
}

fn write_study(result: &StudyResult, output: &Path) -> CliResult<Vec<PathBuf>> {
    write_json(output, &serde_json::to_value(result).map_err(Error::from)?)?;
    let header = [
        "rung",
        "volume",
        "n",
        "j",
        "penalty",
        "replications",
        "mean_l2_error",
        "se_l2_error",
        "mean_sup_error",
        "se_sup_error",
        "clamped",
    ]
    .map(String::from)
    .to_vec();
    let rows = result
        .rungs
        .iter()
        .enumerate()
        .map(|(k, r)| {
            vec![
                json!(k),
                json!(r.volume),
                json!(r.n),
                json!(r.j),
                json!(r.penalty),
                json!(r.replications),
                json!(r.mean_l2_error),
                json!(r.se_l2_error),
                json!(r.mean_sup_error),
                json!(r.se_sup_error),
                json!(r.clamped),
            ]
        })
        .collect();
    let rungs_path = sidecar(output, ".rungs.csv");
    Table { header, rows }.write(&rungs_path, OutFormat::Csv)?;
    let mut written = vec![output.to_path_buf(), rungs_path];
    if result.rungs.iter().any(|r| !r.coverage.is_empty()) {
        let d = result.rungs[0].coverage.first().map_or(0, |c| c.point.len());
        let mut header = vec!["rung".to_string(), "target".to_string()];
        header.extend((1..=d).map(|k| format!("z{k}")));
        header.extend(["truth", "covered", "trials", "coverage", "mean_width", "mean_se"].map(String::from));
        let mut rows = Vec::new();
        for (k, r) in result.rungs.iter().enumerate() {
            for (t, c) in r.coverage.iter().enumerate() {
                let mut row = vec![json!(k), json!(t)];
                row.extend(c.point.iter().map(|v| json!(v)));
                row.extend([
                    json!(c.truth),
                    json!(c.covered),
                    json!(c.trials),
                    json!(c.coverage),
                    json!(c.mean_width),
                    json!(c.mean_se),
                ]);
                rows.push(row);
            }
        }
        let path = sidecar(output, ".coverage.csv");
        Table { header, rows }.write(&path, OutFormat::Csv)?;
        written.push(path);
    }
    Ok(written)
}

fn study_summary(result: &StudyResult, written: &[PathBuf]) -> Value {
    json!({
        "rungs": result.rungs.len(),
        "l2_slope": result.l2_slope,
        "sup_slope": result.sup_slope,
        "coverage": result.rungs.iter().map(|r| r.coverage.iter().map(|c| c.coverage).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "seed": result.provenance.seed,
        "outputs": written,
    })
}

fn cmd_rate_study(a: StudyArgs) -> CliResult<Outcome> {
    let output = required(&a.output, "output")?.clone();
    let inputs: Vec<&Path> = a.config.iter().map(|p| p.as_path()).collect();
    check_distinct(&inputs, &[&output])?;
    let overrides = vec![("seed", json!(a.seed)), ("replications", json!(a.replications))];
    let config: RateStudyConfig = study_config(&RateStudyConfig::default(), a.config.as_deref(), overrides)?;
    let result = run_rate_study(&config)?;
    let written = write_study(&result, &output)?;
    Ok(Outcome { summary: study_summary(&result, &written), warnings: result.provenance.warnings.clone() })
}

fn cmd_coverage_study(a: CoverageArgs) -> CliResult<Outcome> {
    let output = required(&a.study.output, "output")?.clone();
    let inputs: Vec<&Path> = a.study.config.iter().map(|p| p.as_path()).collect();
    check_distinct(&inputs, &[&output])?;
    if let Some(level) = a.level {
        check_level(level)?;
    }
    if let Some(f) = a.bandwidth_frac {
        check_fraction(f)?;
    }
    let overrides = vec![
        ("seed", json!(a.study.seed)),
        ("replications", json!(a.study.replications)),
        ("level", json!(a.level)),
        ("bandwidth_fraction", json!(a.bandwidth_frac)),
    ];
    let config: CoverageStudyConfig =
        study_config(&CoverageStudyConfig::default(), a.study.config.as_deref(), overrides)?;
    let result = run_coverage_study(&config)?;
    let written = write_study(&result, &output)?;
    Ok(Outcome { summary: study_summary(&result, &written), warnings: result.provenance.warnings.clone() })
}
