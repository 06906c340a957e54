//! Monte Carlo experiments: tau sweeps, nested Ky Fan estimates and slope fits.
//!
//! For each tau a scenario builds a problem, computes `x_star`, and for each
//! replicate draws data, samples the posterior and measures the Prokhorov
//! distance of the posterior to `x_star`. The Ky Fan radius of those
//! replicate distances is the empirical contraction radius at that tau.
//!
//! Slopes are fitted against the regressor `log(tau log(1/tau))`, so the
//! predicted exponents are exact targets.

use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundOptions, BoundReport, SpectralSpec};
use crate::error::{GlipError, Result};
use crate::forward::{ForwardOperator, Kernel, LinkMap, OperatorSpec};
use crate::infer::{sample_posterior, Domain, GlipProblem, SamplerConfig};
use crate::metrics;
use crate::noise::NoiseFamily;
use crate::prior::{self, PriorModel, PriorSpec};
use crate::rng::{Purpose, Stream};

/// Fraction of failed rows above which a scenario fails.
pub const MAX_FAILED_FRACTION: f64 = 0.10;

/// Regressor used by [`fit_slope`].
pub const REGRESSOR: &str = "log(tau*log(1/tau))";

pub const CSV_HEADER: [&str; 19] = [
    "scenario",
    "tau",
    "gamma",
    "nu",
    "n",
    "p",
    "replicates",
    "inner_draws",
    "kf_data_empirical",
    "kf_data_bound",
    "kf_posterior_empirical",
    "bound_overall",
    "bound_bias_random",
    "bound_bias_prior",
    "bound_variance",
    "x_star_offset",
    "failed",
    "wall_ms",
    "seed",
];

/// A fully user-specified problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub noise: NoiseFamily,
    pub operator: OperatorSpec,
    #[serde(default)]
    pub link: LinkMap,
    pub prior: PriorSpec,
    pub x_true: Vec<f64>,
    #[serde(default)]
    pub domain: Domain,
    /// Divisor of posterior distances; 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    /// Dense well-conditioned 4 x 4 operator, Gaussian noise and prior.
    WellPosedGaussian,
    /// Rank-2 4 x 4 operator, Gaussian noise and prior.
    IllPosedGaussian,
    /// Diagonal 4 x 4 operator, scaled Poisson noise, Gaussian prior.
    WellPosedPoisson,
    /// Rank-2 nonnegative 4 x 4 operator, scaled Poisson noise.
    IllPosedPoisson,
    /// Volterra operator on an `n x p` grid, Gaussian noise, grid metrics.
    GridVolterra {
        #[serde(default = "default_grid_size")]
        n: usize,
        #[serde(default = "default_grid_size")]
        p: usize,
    },
    /// `a_j = j^-alpha`, `x_j = j^{-beta-1/2}`, Sobolev prior, scaled Poisson noise.
    SpectralPoisson {
        alpha: f64,
        beta: f64,
        kappa: f64,
        #[serde(default = "default_spectral_p")]
        p: usize,
    },
    /// As [`Scenario::SpectralPoisson`] with unit-variance Gaussian noise.
    SpectralGaussian {
        alpha: f64,
        beta: f64,
        kappa: f64,
        #[serde(default = "default_spectral_p")]
        p: usize,
    },
    /// `x_true = 0` in the orthant, diagonal operator, scaled Poisson noise.
    BoundaryPoisson,
    /// `x_true = 0` in the orthant, diagonal operator, shifted exponential noise.
    BoundaryExponential,
    Custom { problem: ProblemSpec },
}

fn default_grid_size() -> usize {
    20
}

fn default_spectral_p() -> usize {
    100
}

/// How the prior scale `gamma` depends on `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaRule {
    Constant { gamma: f64 },
    /// `gamma^2 = tau^{2/3} (log 1/tau)^{-1/6}`.
    IllPosedSchedule,
    /// `nu` from the spectral case analysis; spectral scenarios only.
    SpectralSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSettings {
    pub delta: f64,
    pub evaluate_tail: bool,
    pub tail_budget: usize,
    pub inflate: bool,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            delta: 0.0,
            evaluate_tail: false,
            tail_budget: bounds::DEFAULT_TAIL_BUDGET,
            inflate: false,
        }
    }
}

impl BoundSettings {
    fn options(&self) -> BoundOptions {
        BoundOptions {
            evaluate_tail: self.evaluate_tail,
            tail_budget: self.tail_budget,
            inflate: self.inflate,
        }
    }
}

fn default_replicates() -> usize {
    200
}

fn default_inner_draws() -> usize {
    2000
}

fn default_bootstrap() -> usize {
    metrics::DEFAULT_BOOTSTRAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Strictly decreasing dispersions.
    pub taus: Vec<f64>,
    /// Defaults to the scenario's natural rule.
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
    /// Bootstrap resamples for the outer Ky Fan standard error.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, taus: Vec<f64>) -> Self {
        ScenarioConfig {
            scenario,
            taus,
            gamma_rule: None,
            replicates: default_replicates(),
            inner_draws: default_inner_draws(),
            seed: None,
            sampler: SamplerConfig::default(),
            bound: BoundSettings::default(),
            bootstrap: default_bootstrap(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| GlipError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Logarithmically spaced decreasing grid from `hi` to `lo`.
    pub fn log_grid(hi: f64, lo: f64, points: usize) -> Vec<f64> {
        if points == 1 {
            return vec![hi];
        }
        let (a, b) = (hi.ln(), lo.ln());
        (0..points)
            .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
            .collect()
    }

    pub fn gamma_rule(&self) -> GammaRule {
        self.gamma_rule.unwrap_or(match self.scenario {
            Scenario::IllPosedGaussian | Scenario::IllPosedPoisson => GammaRule::IllPosedSchedule,
            Scenario::SpectralPoisson { .. } | Scenario::SpectralGaussian { .. } => {
                GammaRule::SpectralSchedule
            }
            Scenario::Custom { ref problem } => GammaRule::Constant { gamma: problem.prior.gamma() },
            _ => GammaRule::Constant { gamma: 1.0 },
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Every default made explicit.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.gamma_rule = Some(self.gamma_rule());
        c.seed = Some(self.seed());
        c
    }

    /// A sweep of four or more tau points is meant for slope fitting.
    pub fn is_slope_sweep(&self) -> bool {
        self.taus.len() >= 4
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GlipError::Config(m));
        if self.taus.is_empty() {
            return bad("taus must be nonempty".into());
        }
        if let Some(t) = self.taus.iter().find(|t| !(t.is_finite() && **t > 0.0 && **t < 1.0)) {
            return bad(format!("tau = {t} must lie in (0, 1)"));
        }
        if self.taus.windows(2).any(|w| w[1] >= w[0]) {
            return bad("taus must be strictly decreasing".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if self.is_slope_sweep() && self.replicates < 50 {
            return bad(format!(
                "slope sweeps (>= 4 tau points) need replicates >= 50, got {}",
                self.replicates
            ));
        }
        if self.inner_draws < metrics::MIN_POSTERIOR_DRAWS {
            return bad(format!(
                "inner_draws must be >= {}, got {}",
                metrics::MIN_POSTERIOR_DRAWS,
                self.inner_draws
            ));
        }
        if !(self.bound.delta.is_finite() && self.bound.delta >= 0.0) {
            return bad(format!("bound delta = {} must be >= 0", self.bound.delta));
        }
        match (self.gamma_rule(), &self.scenario) {
            (GammaRule::Constant { gamma }, _) if !(gamma.is_finite() && gamma > 0.0) => {
                return bad(format!("gamma = {gamma} must be > 0"));
            }
            (GammaRule::SpectralSchedule, s) if spectral_params(s).is_none() => {
                return bad("spectral_schedule needs a spectral scenario".into());
            }
            _ => {}
        }
        if let Some((alpha, beta, kappa, p, poisson)) = spectral_params(&self.scenario) {
            let spec = spectral_spec(alpha, beta, kappa, p, poisson, 0.1, 0.1);
            bounds::spectral_rate(&spec).map_err(|e| GlipError::Config(e.to_string()))?;
        }
        // Builds the problem once to surface dimension errors early.
        self.build_problem(self.taus[0])?;
        Ok(())
    }

    pub fn gamma_at(&self, tau: f64) -> f64 {
        match self.gamma_rule() {
            GammaRule::Constant { gamma } => gamma,
            GammaRule::IllPosedSchedule => bounds::ill_posed_gamma_squared(tau).sqrt(),
            GammaRule::SpectralSchedule => {
                let (alpha, beta, kappa, p, poisson) =
                    spectral_params(&self.scenario).expect("validated spectral scenario");
                let spec = spectral_spec(alpha, beta, kappa, p, poisson, tau, 1.0);
                (tau / spec.nu_schedule(tau)).sqrt()
            }
        }
    }

    /// The problem at dispersion `tau`, with `gamma` from the rule.
    pub fn build_problem(&self, tau: f64) -> Result<GlipProblem> {
        build_scenario(&self.scenario, tau, self.gamma_at(tau))
    }

    /// `(posterior distance divisor, data distance divisor)`.
    pub fn metric_scales(&self) -> (f64, f64) {
        match &self.scenario {
            Scenario::GridVolterra { n, p } => ((*p as f64).sqrt(), (*n as f64).sqrt()),
            Scenario::Custom { problem } => (problem.metric_scale.unwrap_or(1.0), 1.0),
            _ => (1.0, 1.0),
        }
    }

    pub fn label(&self) -> String {
        let s = serde_json::to_value(&self.scenario).expect("scenario serializes");
        s["name"].as_str().unwrap_or("custom").to_string()
    }

    fn is_boundary(&self) -> bool {
        matches!(self.scenario, Scenario::BoundaryPoisson | Scenario::BoundaryExponential)
    }
}

fn spectral_params(s: &Scenario) -> Option<(f64, f64, f64, usize, bool)> {
    match *s {
        Scenario::SpectralPoisson { alpha, beta, kappa, p } => Some((alpha, beta, kappa, p, true)),
        Scenario::SpectralGaussian { alpha, beta, kappa, p } => Some((alpha, beta, kappa, p, false)),
        _ => None,
    }
}

fn spectral_spec(alpha: f64, beta: f64, kappa: f64, p: usize, poisson: bool, tau: f64, nu: f64) -> SpectralSpec {
    if poisson {
        SpectralSpec::poisson(alpha, beta, kappa, p, tau, nu)
    } else {
        SpectralSpec::gaussian(alpha, beta, kappa, p, tau, nu)
    }
}

const WELL_POSED_X: [f64; 4] = [1.0, -0.5, 0.25, 0.8];
const POSITIVE_X: [f64; 4] = [1.0, 2.0, 1.5, 0.8];

fn unit_gaussian_prior(p: usize, gamma: f64) -> Result<PriorModel> {
    PriorModel::gaussian_diagonal(&vec![1.0; p], gamma)
}

/// Problem of a named scenario at `(tau, gamma)`.
pub fn build_scenario(scenario: &Scenario, tau: f64, gamma: f64) -> Result<GlipProblem> {
    let vec4 = |v: [f64; 4]| DVector::from_column_slice(&v);
    match scenario {
        Scenario::WellPosedGaussian => {
            let a = DMatrix::from_fn(4, 4, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs()));
            GlipProblem::new(
                NoiseFamily::gaussian(vec![1.0; 4])?,
                ForwardOperator::dense(a)?,
                LinkMap::Identity,
                unit_gaussian_prior(4, gamma)?,
                vec4(WELL_POSED_X),
                Domain::AllReals,
                tau,
            )
        }
        Scenario::IllPosedGaussian => {
            let a = DMatrix::from_row_slice(
                4,
                4,
                &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0],
            );
            GlipProblem::new(
                NoiseFamily::gaussian(vec![1.0; 4])?,
                ForwardOperator::dense(a)?,
                LinkMap::Identity,
                unit_gaussian_prior(4, gamma)?,
                vec4(WELL_POSED_X),
                Domain::AllReals,
                tau,
            )
        }
        Scenario::WellPosedPoisson => GlipProblem::new(
            NoiseFamily::scaled_poisson(4)?,
            ForwardOperator::dense(DMatrix::from_diagonal(&vec4([1.0, 0.8, 1.2, 0.6])))?,
            LinkMap::Identity,
            unit_gaussian_prior(4, gamma)?,
            vec4(POSITIVE_X),
            Domain::AllReals,
            tau,
        ),
        Scenario::IllPosedPoisson => {
            let a = DMatrix::from_row_slice(
                4,
                4,
                &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 1.0],
            );
            GlipProblem::new(
                NoiseFamily::scaled_poisson(4)?,
                ForwardOperator::dense(a)?,
                LinkMap::Identity,
                unit_gaussian_prior(4, gamma)?,
                vec4(POSITIVE_X),
                Domain::AllReals,
                tau,
            )
        }
        Scenario::GridVolterra { n, p } => {
            let x = DVector::from_fn(*p, |j, _| (std::f64::consts::PI * (j as f64 + 1.0) / *p as f64).sin());
            GlipProblem::new(
                NoiseFamily::gaussian(vec![1.0; *n])?,
                ForwardOperator::grid(Kernel::Volterra, *n, *p)?,
                LinkMap::Identity,
                unit_gaussian_prior(*p, gamma)?,
                x,
                Domain::AllReals,
                tau,
            )
        }
        Scenario::SpectralPoisson { alpha, beta, kappa, p }
        | Scenario::SpectralGaussian { alpha, beta, kappa, p } => {
            let noise = if matches!(scenario, Scenario::SpectralPoisson { .. }) {
                NoiseFamily::scaled_poisson(*p)?
            } else {
                NoiseFamily::gaussian(vec![1.0; *p])?
            };
            let x = DVector::from_fn(*p, |j, _| (j as f64 + 1.0).powf(-beta - 0.5));
            GlipProblem::new(
                noise,
                ForwardOperator::spectral(*alpha, *p)?,
                LinkMap::Identity,
                PriorModel::sobolev(*kappa, *p, gamma)?,
                x,
                Domain::AllReals,
                tau,
            )
        }
        Scenario::BoundaryPoisson => GlipProblem::new(
            NoiseFamily::scaled_poisson(2)?,
            ForwardOperator::dense(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])))?,
            LinkMap::Identity,
            unit_gaussian_prior(2, gamma)?,
            DVector::zeros(2),
            Domain::NonNegOrthant,
            tau,
        ),
        Scenario::BoundaryExponential => GlipProblem::new(
            NoiseFamily::shifted_exponential(vec![1.0, 1.0])?,
            ForwardOperator::dense(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])))?,
            LinkMap::Identity,
            unit_gaussian_prior(2, gamma)?,
            DVector::zeros(2),
            Domain::NonNegOrthant,
            tau,
        ),
        Scenario::Custom { problem } => {
            let op = ForwardOperator::from_spec(&problem.operator)?;
            let prior = problem.prior.build(op.p())?.with_gamma(gamma)?;
            GlipProblem::new(
                problem.noise.clone(),
                op,
                problem.link,
                prior,
                DVector::from_column_slice(&problem.x_true),
                problem.domain,
                tau,
            )
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub tau: f64,
    pub gamma: f64,
    pub nu: f64,
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    pub inner_draws: usize,
    pub kf_data_empirical: f64,
    pub kf_data_bound: f64,
    pub kf_posterior_empirical: f64,
    pub bound_overall: f64,
    pub bound_bias_random: f64,
    pub bound_bias_prior: f64,
    pub bound_variance: f64,
    pub x_star_offset: f64,
    pub failed: bool,
    pub wall_ms: u64,
    pub seed: u64,
}

/// Per-row information that does not fit the CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDetail {
    pub tau: f64,
    pub bound: Option<BoundReport>,
    pub bound_error: Option<String>,
    pub kf_posterior_stderr: f64,
    /// Ky Fan radius of the posterior around `x_true` (secondary).
    pub kf_posterior_x_true: Option<f64>,
    pub kf_data_stderr: f64,
    /// Largest `|Y - y_exact|_inf` over replicates.
    pub data_max_abs_error: Option<f64>,
    /// Largest `|x_map|_inf` over replicates; boundary scenarios only.
    pub map_max_abs: Option<f64>,
    pub sampler: Option<String>,
    pub mean_acceptance: Option<f64>,
    pub sampler_warnings: Vec<String>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub rows: Vec<ResultRow>,
    pub details: Vec<RowDetail>,
}

impl ScenarioResult {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.failed).count()
    }

    /// More than [`MAX_FAILED_FRACTION`] of rows failed.
    pub fn scenario_failed(&self) -> bool {
        self.failed_rows() as f64 > MAX_FAILED_FRACTION * self.rows.len() as f64
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_csv(&self.rows, &mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    /// JSON sidecar with the normalized config and per-row details.
    pub fn sidecar_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            config: &'a ScenarioConfig,
            rows: &'a [RowDetail],
        }
        Ok(serde_json::to_string_pretty(&Sidecar { config: &self.config, rows: &self.details })?)
    }
}

struct Replicate {
    posterior: f64,
    posterior_x_true: f64,
    data: f64,
    data_max_abs: f64,
    map_abs: Option<f64>,
    method: String,
    acceptance: Option<f64>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub parallel: Option<usize>,
    /// Record wall-clock time per row. Off keeps output byte-reproducible.
    pub timing: bool,
}

/// Runs every tau point of the sweep.
pub fn run_scenario(config: &ScenarioConfig, options: RunOptions) -> Result<ScenarioResult> {
    config.validate()?;
    let config = config.normalized();
    let work = || -> Result<ScenarioResult> {
        let mut rows = Vec::with_capacity(config.taus.len());
        let mut details = Vec::with_capacity(config.taus.len());
        for (ti, &tau) in config.taus.iter().enumerate() {
            let (row, detail) = run_tau(&config, ti as u32, tau, options.timing);
            rows.push(row);
            details.push(detail);
        }
        Ok(ScenarioResult { config: config.clone(), rows, details })
    };
    match options.parallel {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| GlipError::Scenario(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Analytic Ky Fan bound on `rho_K(Y / scale, y_exact / scale)`; NaN when none applies.
///
/// Only Gaussian noise has a bound for `scale != 1`.
pub fn analytic_data_bound(problem: &GlipProblem, scale: f64) -> f64 {
    let y = match problem.y_exact() {
        Ok(y) => y,
        Err(_) => return f64::NAN,
    };
    let tau = problem.tau;
    let r = match &problem.noise {
        NoiseFamily::Gaussian { variances } => {
            metrics::kyfan_bound_gaussian(tau * variances.iter().sum::<f64>() / (scale * scale))
        }
        _ if scale != 1.0 => return f64::NAN,
        NoiseFamily::ScaledPoisson { .. } => {
            let mu: Vec<f64> = y.iter().cloned().filter(|m| *m > 0.0).collect();
            if mu.is_empty() {
                // Every mean is zero, so the data are exact.
                return 0.0;
            }
            metrics::kyfan_bound_poisson(&mu, tau)
        }
        NoiseFamily::ShiftedExponential { rates } if rates.len() == 1 => {
            metrics::kyfan_bound_exponential(rates[0], tau)
        }
        _ => return f64::NAN,
    };
    r.unwrap_or(f64::NAN)
}

fn run_replicate(
    config: &ScenarioConfig,
    problem: &GlipProblem,
    x_star: &DVector<f64>,
    y_exact: &DVector<f64>,
    ti: u32,
    r: u32,
) -> Result<Replicate> {
    let seed = config.seed();
    let (x_scale, y_scale) = config.metric_scales();
    let mut data_rng = Stream::derive(seed, Purpose::Data, ti, r);
    let y = problem.sample_data(&mut data_rng)?;
    let mut post_rng = Stream::derive(seed, Purpose::Posterior, ti, r);
    let draws = sample_posterior(problem, &y, config.inner_draws, &mut post_rng, &config.sampler, None)?;
    let mut none = Stream::derive(seed, Purpose::Bootstrap, ti, r);
    let posterior = metrics::prokhorov_to_point_with(&draws.draws, x_star, x_scale, 0, &mut none)?.epsilon;
    let posterior_x_true =
        metrics::prokhorov_to_point_with(&draws.draws, &problem.x_true, x_scale, 0, &mut none)?.epsilon;
    let map_abs = if config.is_boundary() {
        Some(problem.map_estimate(&y, &map_start(problem, &y, x_star), prior::DEFAULT_TOL)?.amax())
    } else {
        None
    };
    let diff = &y - y_exact;
    Ok(Replicate {
        posterior,
        posterior_x_true,
        data: diff.norm() / y_scale,
        data_max_abs: diff.amax(),
        map_abs,
        method: format!("{:?}", draws.method).to_lowercase(),
        acceptance: draws.acceptance_rate,
        warnings: draws.warnings,
    })
}

/// Starting point for the MAP solve. The barrier method used for non-canonical
/// families needs `x > 0` and `A x < y`, so it starts halfway along the ray
/// `t * 1` towards the support edge.
fn map_start(problem: &GlipProblem, y: &DVector<f64>, x_star: &DVector<f64>) -> DVector<f64> {
    if problem.noise.is_canonical() {
        return x_star.clone();
    }
    let row_sums = problem.operator.matrix() * DVector::from_element(problem.p(), 1.0);
    let t = row_sums
        .iter()
        .zip(y.iter())
        .filter(|(s, _)| **s > 0.0)
        .map(|(s, yi)| yi / s)
        .fold(1.0, f64::min);
    DVector::from_element(problem.p(), 0.5 * t)
}

fn nan_row(config: &ScenarioConfig, tau: f64, gamma: f64, problem: Option<&GlipProblem>) -> ResultRow {
    ResultRow {
        scenario: config.label(),
        tau,
        gamma,
        nu: tau / (gamma * gamma),
        n: problem.map_or(0, |p| p.n()),
        p: problem.map_or(0, |p| p.p()),
        replicates: config.replicates,
        inner_draws: config.inner_draws,
        kf_data_empirical: f64::NAN,
        kf_data_bound: f64::NAN,
        kf_posterior_empirical: f64::NAN,
        bound_overall: f64::NAN,
        bound_bias_random: f64::NAN,
        bound_bias_prior: f64::NAN,
        bound_variance: f64::NAN,
        x_star_offset: f64::NAN,
        failed: true,
        wall_ms: 0,
        seed: config.seed(),
    }
}

fn empty_detail(tau: f64) -> RowDetail {
    RowDetail {
        tau,
        bound: None,
        bound_error: None,
        kf_posterior_stderr: f64::NAN,
        kf_posterior_x_true: None,
        kf_data_stderr: f64::NAN,
        data_max_abs_error: None,
        map_max_abs: None,
        sampler: None,
        mean_acceptance: None,
        sampler_warnings: Vec::new(),
        errors: Vec::new(),
    }
}

fn run_tau(config: &ScenarioConfig, ti: u32, tau: f64, timing: bool) -> (ResultRow, RowDetail) {
    let start = Instant::now();
    let gamma = config.gamma_at(tau);
    let mut detail = empty_detail(tau);
    let problem = match config.build_problem(tau) {
        Ok(p) => p,
        Err(e) => {
            detail.errors.push(format!("problem: {e}"));
            return (nan_row(config, tau, gamma, None), detail);
        }
    };
    let mut row = nan_row(config, tau, gamma, Some(&problem));
    let star = problem.solve_x_star(prior::DEFAULT_TOL);
    let y_exact = problem.y_exact();
    let (star, y_exact) = match (star, y_exact) {
        (Ok(s), Ok(y)) => (s, y),
        (Err(e), _) | (_, Err(e)) => {
            detail.errors.push(format!("x_star: {e}"));
            return (row, detail);
        }
    };
    let x_star = star.x_star.clone();
    let proj = &problem.operator.split().projector;
    let gap = &problem.x_true - &x_star;
    row.x_star_offset = (&gap - proj * &gap).norm();
    row.kf_data_bound = analytic_data_bound(&problem, config.metric_scales().1);

    let results: Vec<Result<Replicate>> = (0..config.replicates as u32)
        .into_par_iter()
        .map(|r| run_replicate(config, &problem, &x_star, &y_exact, ti, r))
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rep) => ok.push(rep),
            Err(e) => detail.errors.push(format!("replicate {r}: {e}")),
        }
    }
    row.failed = !detail.errors.is_empty();
    if ok.is_empty() {
        return (row, detail);
    }

    let seed = config.seed();
    let mut boot = Stream::derive(seed, Purpose::Bootstrap, ti, u32::MAX);
    let kf = |d: Vec<f64>, boot: &mut Stream| metrics::kyfan_empirical_with(&d, config.bootstrap, boot);
    match (
        kf(ok.iter().map(|r| r.posterior).collect(), &mut boot),
        kf(ok.iter().map(|r| r.data).collect(), &mut boot),
        kf(ok.iter().map(|r| r.posterior_x_true).collect(), &mut boot),
    ) {
        (Ok(post), Ok(data), Ok(truth)) => {
            row.kf_posterior_empirical = post.epsilon;
            row.kf_data_empirical = data.epsilon;
            detail.kf_posterior_stderr = post.standard_error_hint;
            detail.kf_data_stderr = data.standard_error_hint;
            detail.kf_posterior_x_true = Some(truth.epsilon);
        }
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
            detail.errors.push(format!("ky fan: {e}"));
            row.failed = true;
            return (row, detail);
        }
    }
    detail.data_max_abs_error = ok.iter().map(|r| r.data_max_abs).reduce(f64::max);
    if config.is_boundary() {
        detail.map_max_abs = ok.iter().filter_map(|r| r.map_abs).reduce(f64::max);
    }
    detail.sampler = Some(ok[0].method.clone());
    let acc: Vec<f64> = ok.iter().filter_map(|r| r.acceptance).collect();
    if !acc.is_empty() {
        detail.mean_acceptance = Some(acc.iter().sum::<f64>() / acc.len() as f64);
    }
    let mut warnings: Vec<String> = ok.iter().flat_map(|r| r.warnings.iter().cloned()).collect();
    warnings.sort();
    warnings.dedup();
    detail.sampler_warnings = warnings;

    let report = evaluate_bound(config, &problem, ti, row.kf_data_empirical, config.bound.delta);
    match report {
        Ok(rep) => {
            row.bound_overall = rep.overall_or_nan();
            row.bound_bias_random = rep.bias_random.unwrap_or(f64::NAN);
            row.bound_bias_prior = rep.prior_bias.unwrap_or(f64::NAN);
            row.bound_variance = rep.variance_term.unwrap_or(f64::NAN);
            detail.bound = Some(rep);
        }
        Err(e) => detail.bound_error = Some(e.to_string()),
    }
    if timing {
        row.wall_ms = start.elapsed().as_millis() as u64;
    }
    (row, detail)
}

/// Bound for the scenario's geometry: boundary, grid or interior.
pub fn evaluate_bound(
    config: &ScenarioConfig,
    problem: &GlipProblem,
    tau_index: u32,
    rho: f64,
    delta: f64,
) -> Result<BoundReport> {
    let mut rng = Stream::derive(config.seed(), Purpose::TailIntegral, tau_index, 0);
    let opts = config.bound.options();
    match &config.scenario {
        Scenario::BoundaryPoisson | Scenario::BoundaryExponential => {
            bounds::boundary_bound(problem, rho, delta, opts, &mut rng)
        }
        Scenario::GridVolterra { n, p } => bounds::grid_bound(problem, *n, *p, rho, delta, opts, &mut rng),
        _ => bounds::interior_bound(problem, rho, delta, opts, &mut rng),
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.scenario.clone(),
            fmt_f(r.tau),
            fmt_f(r.gamma),
            fmt_f(r.nu),
            r.n.to_string(),
            r.p.to_string(),
            r.replicates.to_string(),
            r.inner_draws.to_string(),
            fmt_f(r.kf_data_empirical),
            fmt_f(r.kf_data_bound),
            fmt_f(r.kf_posterior_empirical),
            fmt_f(r.bound_overall),
            fmt_f(r.bound_bias_random),
            fmt_f(r.bound_bias_prior),
            fmt_f(r.bound_variance),
            fmt_f(r.x_star_offset),
            r.failed.to_string(),
            r.wall_ms.to_string(),
            r.seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a result table written by [`write_csv`].
pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(GlipError::Config(format!(
            "unexpected CSV header: {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |i: usize| GlipError::Config(format!("row {}: bad value in column {}", line + 1, CSV_HEADER[i]));
        let f = |i: usize| field(i).parse::<f64>().map_err(|_| bad(i));
        let u = |i: usize| field(i).parse::<usize>().map_err(|_| bad(i));
        rows.push(ResultRow {
            scenario: field(0).to_string(),
            tau: f(1)?,
            gamma: f(2)?,
            nu: f(3)?,
            n: u(4)?,
            p: u(5)?,
            replicates: u(6)?,
            inner_draws: u(7)?,
            kf_data_empirical: f(8)?,
            kf_data_bound: f(9)?,
            kf_posterior_empirical: f(10)?,
            bound_overall: f(11)?,
            bound_bias_random: f(12)?,
            bound_bias_prior: f(13)?,
            bound_variance: f(14)?,
            x_star_offset: f(15)?,
            failed: field(16).parse::<bool>().map_err(|_| bad(16))?,
            wall_ms: field(17).parse::<u64>().map_err(|_| bad(17))?,
            seed: field(18).parse::<u64>().map_err(|_| bad(18))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub points: usize,
    pub regressor: String,
}

/// Ordinary least squares of `log(kf)` on `log(tau log(1/tau))`.
pub fn fit_points(taus: &[f64], kf: &[f64]) -> Result<RateFit> {
    if taus.len() != kf.len() {
        return Err(GlipError::Dimension { context: "fit_points", expected: taus.len(), got: kf.len() });
    }
    if taus.len() < 4 {
        return Err(GlipError::Precondition(format!(
            "slope fit needs at least 4 tau points, got {}",
            taus.len()
        )));
    }
    if let Some(k) = kf.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
        return Err(GlipError::Precondition(format!(
            "empirical Ky Fan radius {k} is not positive; exact-data boundary cases need the boundary-specific analysis"
        )));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(GlipError::Domain(format!("tau = {t} must lie in (0, 1)")));
    }
    let x: Vec<f64> = taus.iter().map(|t| (t * (1.0 / t).ln()).ln()).collect();
    let y: Vec<f64> = kf.iter().map(|k| k.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return Err(GlipError::Precondition("slope fit needs distinct tau values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let sst: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    Ok(RateFit {
        slope,
        intercept,
        slope_stderr: (sse / (n - 2.0) / sxx).sqrt(),
        r_squared: if sst > 0.0 { 1.0 - sse / sst } else { 1.0 },
        points: x.len(),
        regressor: REGRESSOR.to_string(),
    })
}

/// Slope fit over the rows that did not fail.
pub fn fit_slope(rows: &[ResultRow]) -> Result<RateFit> {
    let used: Vec<&ResultRow> = rows.iter().filter(|r| !r.failed).collect();
    let taus: Vec<f64> = used.iter().map(|r| r.tau).collect();
    let kf: Vec<f64> = used.iter().map(|r| r.kf_posterior_empirical).collect();
    fit_points(&taus, &kf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub slope: f64,
    pub predicted: f64,
    pub tolerance: f64,
    pub deviation: f64,
}

/// Passes iff `|slope - predicted| <= tolerance`.
pub fn compare(fit: &RateFit, predicted: f64, tolerance: f64) -> Verdict {
    let deviation = (fit.slope - predicted).abs();
    Verdict { pass: deviation <= tolerance, slope: fit.slope, predicted, tolerance, deviation }
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let m = (n + 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - m) * (b - m)).sum();
    let vx: f64 = rx.iter().map(|a| (a - m).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - m).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
