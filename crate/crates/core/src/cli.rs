//! Command-line front end for the `glip` binary.
//!
//! Exit codes: 0 success or passing verdict, 1 failing verdict, 2 usage or
//! config error, 3 scenario failure, 4 invalid bound.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bounds::{self, ProblemClass};
use crate::error::GlipError;
use crate::harness::{self, BoundSettings, GammaRule, RunOptions, Scenario, ScenarioConfig};
use crate::infer::SamplerConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SCENARIO: i32 = 3;
pub const EXIT_INVALID_BOUND: i32 = 4;

/// Environment variable read when neither flag nor config sets a seed.
pub const SEED_ENV: &str = "GLIP_SEED";

#[derive(Debug, Parser)]
#[command(name = "glip", version, about = "Posterior contraction experiments for generalised linear inverse problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a tau sweep and write the result CSV plus a JSON sidecar.
    Run(RunArgs),
    /// Print the theoretical bound at one tau as JSON.
    Bound(BoundArgs),
    /// Fit the log-log slope of a result CSV and compare with a prediction.
    Slope(SlopeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Record wall-clock milliseconds per row (breaks byte reproducibility).
    #[arg(long)]
    pub timing: bool,
    /// Print the normalized config as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub tau: f64,
    #[arg(long, conflicts_with = "delta_auto")]
    pub delta: Option<f64>,
    /// `a alpha`: use the localisation schedule `(-tau ln tau)^{1/((1+a) alpha)}`.
    #[arg(long, num_args = 2, value_names = ["A", "ALPHA"], allow_negative_numbers = true)]
    pub delta_auto: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SlopeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// A problem class name (e.g. `ill-posed-interior`) or a number.
    #[arg(long)]
    pub predicted: String,
    #[arg(long, allow_negative_numbers = true)]
    pub tol: f64,
}

/// Config file schema: the scenario config plus output settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub scenario: Scenario,
    pub taus: Vec<f64>,
    #[serde(default)]
    pub gamma_rule: Option<GammaRule>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_inner_draws")]
    pub inner_draws: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub bound: BoundSettings,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Result CSV path; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Sidecar path; defaults to the CSV path with a `.sidecar.json` extension.
    #[serde(default)]
    pub sidecar: Option<PathBuf>,
    #[serde(default)]
    pub verbose: bool,
}

fn default_replicates() -> usize {
    ScenarioConfig::new(Scenario::WellPosedGaussian, vec![]).replicates
}

fn default_inner_draws() -> usize {
    ScenarioConfig::new(Scenario::WellPosedGaussian, vec![]).inner_draws
}

fn default_bootstrap() -> usize {
    ScenarioConfig::new(Scenario::WellPosedGaussian, vec![]).bootstrap
}

impl CliConfig {
    pub fn from_json(text: &str) -> Result<Self, GlipError> {
        serde_json::from_str(text).map_err(|e| GlipError::Config(e.to_string()))
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            scenario: self.scenario.clone(),
            taus: self.taus.clone(),
            gamma_rule: self.gamma_rule,
            replicates: self.replicates,
            inner_draws: self.inner_draws,
            seed: self.seed,
            sampler: self.sampler.clone(),
            bound: self.bound,
            bootstrap: self.bootstrap,
        }
    }

    /// Applies a normalized scenario config, keeping output settings.
    fn with_scenario(&self, c: ScenarioConfig) -> Self {
        CliConfig {
            scenario: c.scenario,
            taus: c.taus,
            gamma_rule: c.gamma_rule,
            replicates: c.replicates,
            inner_draws: c.inner_draws,
            seed: c.seed,
            sampler: c.sampler,
            bound: c.bound,
            bootstrap: c.bootstrap,
            ..self.clone()
        }
    }
}

fn env_seed() -> Result<Option<u64>, GlipError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| GlipError::Config(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Reads and validates a config, applying flag overrides and the seed fallback.
fn load_config(path: &Path, seed: Option<u64>, replicates: Option<usize>) -> Result<CliConfig, GlipError> {
    let text = fs::read_to_string(path)
        .map_err(|e| GlipError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cli = CliConfig::from_json(&text)?;
    if let Some(r) = replicates {
        cli.replicates = r;
    }
    cli.seed = match (seed, cli.seed) {
        (Some(s), _) => Some(s),
        (None, Some(s)) => Some(s),
        (None, None) => env_seed()?,
    };
    let sc = cli.scenario_config();
    sc.validate()?;
    Ok(cli.with_scenario(sc.normalized()))
}

/// Lossless JSON for stdout.
fn print_json<T: Serialize>(value: &T) -> i32 {
    match serde_json::to_string_pretty(value) {
        Ok(s) => {
            // A closed pipe downstream is not an error of ours.
            let _ = writeln!(std::io::stdout(), "{s}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> i32 {
    let cli = match load_config(&args.config, args.seed, args.replicates) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if args.dump_config {
        return print_json(&cli);
    }
    let Some(out) = args.out.clone().or_else(|| cli.out.clone()) else {
        eprintln!("error: no output path; pass --out or set \"out\" in the config");
        return EXIT_CONFIG;
    };
    let sidecar = cli.sidecar.clone().unwrap_or_else(|| out.with_extension("sidecar.json"));
    let options = RunOptions { parallel: args.parallel, timing: args.timing };
    let result = match harness::run_scenario(&cli.scenario_config(), options) {
        Ok(r) => r,
        Err(e @ GlipError::Config(_)) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("error: scenario failed: {e}");
            return EXIT_SCENARIO;
        }
    };
    let written = result
        .to_csv_string()
        .and_then(|csv| fs::write(&out, csv).map_err(GlipError::from))
        .and_then(|_| result.sidecar_json())
        .and_then(|json| fs::write(&sidecar, json).map_err(GlipError::from));
    if let Err(e) = written {
        eprintln!("error: cannot write results: {e}");
        return EXIT_SCENARIO;
    }
    if cli.verbose {
        for (row, detail) in result.rows.iter().zip(&result.details) {
            eprintln!(
                "tau={:.3e} kf_posterior={:.6} bound={:.6} failed={}",
                row.tau, row.kf_posterior_empirical, row.bound_overall, row.failed
            );
            for e in &detail.errors {
                eprintln!("  {e}");
            }
        }
    }
    if result.scenario_failed() {
        eprintln!(
            "error: {} of {} rows failed; details in {}",
            result.failed_rows(),
            result.rows.len(),
            sidecar.display()
        );
        return EXIT_SCENARIO;
    }
    EXIT_OK
}

pub fn cmd_bound(args: &BoundArgs) -> i32 {
    let run = || -> Result<i32, GlipError> {
        let mut cli = load_config(&args.config, args.seed, None)?;
        if !(args.tau > 0.0 && args.tau < 1.0) {
            return Err(GlipError::Config(format!("tau = {} must lie in (0, 1)", args.tau)));
        }
        cli.taus = vec![args.tau];
        let config = cli.scenario_config();
        let delta = match (&args.delta, &args.delta_auto) {
            (Some(d), _) if !(*d >= 0.0) => return Err(GlipError::Config(format!("delta = {d} must be >= 0"))),
            (Some(d), _) => *d,
            (None, Some(v)) => bounds::delta_schedule(args.tau, v[1], v[0]).map_err(|e| GlipError::Config(e.to_string()))?,
            (None, None) => config.bound.delta,
        };
        let problem = config.build_problem(args.tau)?;
        let rho = harness::analytic_data_bound(&problem, config.metric_scales().1);
        if rho.is_nan() {
            return Err(GlipError::Unsupported(
                "no analytic data-level Ky Fan bound for this noise family; use `run`".into(),
            ));
        }
        let report = harness::evaluate_bound(&config, &problem, 0, rho, delta)?;
        let code = print_json(&report);
        Ok(if code == EXIT_OK && !report.valid { EXIT_INVALID_BOUND } else { code })
    };
    match run() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Resolves `--predicted`: a class name or a plain number.
pub fn resolve_prediction(text: &str) -> Result<f64, GlipError> {
    if let Some(class) = ProblemClass::parse(text) {
        return bounds::predicted_exponent(&class);
    }
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| GlipError::Config(format!("unknown prediction `{text}`")))
}

pub fn cmd_slope(args: &SlopeArgs) -> i32 {
    #[derive(Serialize)]
    struct Output {
        fit: harness::RateFit,
        verdict: harness::Verdict,
    }
    let run = || -> Result<i32, GlipError> {
        if !(args.tol >= 0.0) {
            return Err(GlipError::Config(format!("tol = {} must be >= 0", args.tol)));
        }
        let predicted = resolve_prediction(&args.predicted)?;
        let file = fs::File::open(&args.input)
            .map_err(|e| GlipError::Config(format!("cannot read {}: {e}", args.input.display())))?;
        let rows = harness::read_csv(file).map_err(|e| GlipError::Config(e.to_string()))?;
        let fit = harness::fit_slope(&rows)?;
        let verdict = harness::compare(&fit, predicted, args.tol);
        let pass = verdict.pass;
        let code = print_json(&Output { fit, verdict });
        Ok(if code != EXIT_OK { code } else if pass { EXIT_OK } else { EXIT_VERDICT_FAIL })
    };
    match run() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Parses `args` (including the program name) and dispatches.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let code = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Slope(a) => cmd_slope(a),
    };
    let _ = std::io::stdout().flush();
    code
}
