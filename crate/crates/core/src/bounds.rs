//! Theoretical bounds and rates for posterior contraction.
//!
//! All asymptotic shapes are evaluated with unit constants. They are meant to
//! be compared through slopes, not absolute values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{GlipError, Result};
use crate::infer::GlipProblem;
use crate::linalg;
use crate::prior::{self, StarPoint};

const INV_E: f64 = 1.0 / std::f64::consts::E;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Default number of importance samples for the tail integral.
pub const DEFAULT_TAIL_BUDGET: usize = 20_000;

/// Proposal standard deviation inflation for the interior tail integral.
const TAIL_PROPOSAL_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    /// Estimate `Delta_0` by importance sampling.
    pub evaluate_tail: bool,
    pub tail_budget: usize,
    /// Multiply the variance (or main) term by `1 + Delta_star`.
    pub inflate: bool,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions { evaluate_tail: false, tail_budget: DEFAULT_TAIL_BUDGET, inflate: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Interior,
    Boundary,
    Grid,
}

/// Intermediate quantities of a bound. Entries that do not apply are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub lambda_tilde: Option<f64>,
    pub d_norm: Option<f64>,
    pub trace_h_nu_inv: Option<f64>,
    pub lambda_min_h_nu: Option<f64>,
    pub operator_norm: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// Radius `R(delta)` of the chi-square ball in the inflation factor.
    pub r_delta: Option<f64>,
    pub delta0: Option<f64>,
    pub delta0_tail_samples: Option<usize>,
    pub delta_star_k: Option<f64>,
    pub b_star: Option<Vec<f64>>,
    pub b_min: Option<f64>,
    pub b_max: Option<f64>,
    pub m_f1: Option<f64>,
    pub c_f2: Option<f64>,
    pub c_g2: Option<f64>,
    pub delta11: Option<f64>,
    pub delta1_star: Option<f64>,
    pub delta4_star: Option<f64>,
    pub delta5_star: Option<f64>,
    /// Named side-condition quantities of the grid bound.
    pub side_conditions: Option<Vec<(String, f64)>>,
}

/// A contraction bound with every term named.
///
/// Non-finite numbers serialize as JSON `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub valid: bool,
    pub invalid_reason: Option<String>,
    pub tau: f64,
    pub nu: f64,
    pub delta: f64,
    pub rho_data: f64,
    /// `c1 / (1 - lambda)`.
    pub random_bias_coeff: Option<f64>,
    /// `c2 / (1 - lambda)`.
    pub prior_bias_coeff: Option<f64>,
    /// `random_bias_coeff * rho_data`.
    pub bias_random: Option<f64>,
    /// `prior_bias_coeff * nu`.
    pub prior_bias: Option<f64>,
    pub variance_term: Option<f64>,
    pub data_term: f64,
    /// `Delta_0 / (1 + Delta_0)`, `None` when not evaluated.
    pub tail_term: Option<f64>,
    pub main_term: Option<f64>,
    pub overall: Option<f64>,
    pub inflated: bool,
    pub diagnostics: Diagnostics,
    pub flags: Vec<String>,
}

impl BoundReport {
    fn empty(kind: BoundKind, tau: f64, nu: f64, delta: f64, rho_data: f64) -> Self {
        BoundReport {
            kind,
            valid: true,
            invalid_reason: None,
            tau,
            nu,
            delta,
            rho_data,
            random_bias_coeff: None,
            prior_bias_coeff: None,
            bias_random: None,
            prior_bias: None,
            variance_term: None,
            data_term: 2.0 * rho_data,
            tail_term: None,
            main_term: None,
            overall: None,
            inflated: false,
            diagnostics: Diagnostics::default(),
            flags: Vec::new(),
        }
    }

    fn invalidate(&mut self, reason: String) {
        self.valid = false;
        self.invalid_reason = Some(reason);
        self.random_bias_coeff = None;
        self.prior_bias_coeff = None;
        self.bias_random = None;
        self.prior_bias = None;
        self.main_term = None;
        self.overall = None;
    }

    /// `overall`, or NaN when the report is invalid.
    pub fn overall_or_nan(&self) -> f64 {
        self.overall.unwrap_or(f64::NAN)
    }
}

fn fin(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(GlipError::Domain(format!("{name} = {v} must be finite and >= 0")))
    }
}

fn max_of(values: &[Option<f64>]) -> Option<f64> {
    let mut out: Option<f64> = None;
    for v in values.iter().flatten() {
        if v.is_nan() {
            return None;
        }
        out = Some(out.map_or(*v, |o| o.max(*v)));
    }
    out
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Operator with the link derivative folded in: `diag(G'(A x)) A`.
fn effective_operator(problem: &GlipProblem, x: &DVector<f64>) -> DMatrix<f64> {
    let a = problem.operator.matrix();
    if problem.link.is_identity() {
        return a.clone();
    }
    let mu = a * x;
    let mut out = a.clone();
    for i in 0..mu.len() {
        let g1 = problem.link.eval(mu[i]).1;
        out.row_mut(i).scale_mut(g1);
    }
    out
}

/// Quantities shared by the interior and grid bounds.
struct InteriorParts {
    star: StarPoint,
    h_nu: DMatrix<f64>,
    h_inv: DMatrix<f64>,
    grad_g: DVector<f64>,
    trace: f64,
    lambda_min: f64,
    a_norm: f64,
    d_norm: f64,
    lambda: f64,
    c1: f64,
    c2: f64,
}

fn interior_parts(problem: &GlipProblem, rho: f64, delta: f64) -> Result<InteriorParts> {
    let star = problem.solve_x_star(prior::DEFAULT_TOL)?;
    if !star.interior {
        return Err(GlipError::Precondition(
            "x_star lies on the domain boundary; the interior bound does not apply".into(),
        ));
    }
    let xs = &star.x_star;
    let y_exact = problem.y_exact()?;
    let nu = problem.nu();
    let (_, grad_g, b) = problem.prior.grad_hess(xs)?;
    let mut h_nu = problem.data_curvature(&y_exact, xs)? + &b * nu;
    linalg::symmetrize(&mut h_nu);
    let lambda_min = linalg::min_eigenvalue(&h_nu);
    let scale = linalg::spectral_norm(&h_nu).max(f64::MIN_POSITIVE);
    if !(lambda_min > 1e-13 * scale) {
        return Err(GlipError::Precondition(format!(
            "H_nu must be full rank (smallest eigenvalue {lambda_min:e}); ill-posed problems need nu > 0"
        )));
    }
    let h_inv = linalg::sym_inverse(&h_nu, "H_nu")?;
    let a_eff = effective_operator(problem, xs);
    let a_norm = linalg::spectral_norm(&a_eff);
    let nc = problem.noise.noise_constants(&y_exact, delta, rho, a_norm)?;
    let c_g = problem.prior.c_g(xs, delta)?;
    let d = linalg::weighted_gram(&a_eff, &nc.c_f) * a_norm + c_g * nu;
    let d_norm = linalg::spectral_norm(&d);
    let lambda = delta * linalg::spectral_norm(&(&h_inv * &d))
        + rho * linalg::spectral_norm(&(&h_inv * linalg::weighted_gram(&a_eff, &nc.m_f2)));
    let c1 = linalg::spectral_norm(&(&h_inv * linalg::scale_rows(&a_eff, &nc.m_f1).transpose()));
    let c2 = (&h_inv * &grad_g).norm();
    let trace = h_inv.trace();
    Ok(InteriorParts {
        star,
        h_nu,
        h_inv,
        grad_g,
        trace,
        lambda_min,
        a_norm,
        d_norm,
        lambda,
        c1,
        c2,
    })
}

/// Importance-sampling estimate of `Delta_0(B(0, delta))` for the interior case.
///
/// The numerator integrates `exp(-(h(x) - h(x_star)) / tau)` outside the ball
/// with a widened Laplace Gaussian proposal; the denominator is the local
/// Laplace constant. Returns `(Delta_0, samples outside the ball)`.
fn interior_tail<R: Rng + ?Sized>(
    problem: &GlipProblem,
    parts: &InteriorParts,
    delta: f64,
    budget: usize,
    rng: &mut R,
) -> Result<(f64, usize)> {
    let p = problem.p();
    let tau = problem.tau;
    let xs = &parts.star.x_star;
    let y_exact = problem.y_exact()?;
    let h_star = problem.h_value(&y_exact, xs);
    let x0 = &parts.h_inv * (&parts.grad_g * problem.nu());
    let mean = xs - &x0;

    let cov = &parts.h_inv * (tau * TAIL_PROPOSAL_SCALE * TAIL_PROPOSAL_SCALE);
    let chol = cov
        .cholesky()
        .ok_or_else(|| GlipError::Singular("tail proposal covariance".into()))?;
    let l = chol.l();
    let log_det_l: f64 = l.diagonal().iter().map(|d| d.ln()).sum();

    let mut logs = Vec::new();
    for _ in 0..budget {
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &mean + &l * &z;
        if (&x - xs).norm() <= delta {
            continue;
        }
        let h = problem.h_value(&y_exact, &x);
        if !h.is_finite() {
            continue;
        }
        let log_q = -0.5 * z.norm_squared() - 0.5 * p as f64 * LN_2PI - log_det_l;
        logs.push(-(h - h_star) / tau - log_q);
    }
    let outside = logs.len();
    if outside == 0 {
        return Ok((0.0, 0));
    }
    let log_num = log_sum_exp(&logs) - (budget as f64).ln();

    let split = problem.operator.split();
    let (u0, u1) = (split.u0(), split.u1());
    let data = problem.data_curvature(&y_exact, xs)?;
    let (_, _, b) = problem.prior.grad_hess(xs)?;
    let mut omega00 = u0.transpose() * &data * &u0;
    let mut b11 = u1.transpose() * &b * &u1;
    linalg::symmetrize(&mut omega00);
    linalg::symmetrize(&mut b11);
    let log_den = 0.5 * split.p0 as f64 * tau.ln()
        + split.p1 as f64 * problem.gamma().ln()
        + 0.5 * p as f64 * LN_2PI
        + x0.dot(&(&parts.h_nu * &x0)) / (2.0 * tau)
        - 0.5 * (linalg::log_det_pd(&omega00, "Omega00")? + linalg::log_det_pd(&b11, "B11")?);
    Ok(((log_num - log_den).exp(), outside))
}

/// Inflation factor `Delta_star_K` and the radius `R(delta)` it uses.
fn delta_star_k(
    p: usize,
    tau: f64,
    delta: f64,
    d_norm: f64,
    lambda: f64,
    lambda_min: f64,
    bias: f64,
    delta0: f64,
) -> (f64, f64) {
    let r = (lambda_min / tau).sqrt() * (1.0 - lambda).sqrt() * (delta - bias);
    let mass = if r > 0.0 {
        ChiSquared::new(p as f64).map(|c| c.cdf(r * r)).unwrap_or(f64::NAN)
    } else {
        0.0
    };
    let growth = (delta * d_norm * bias * bias / tau).exp();
    let ratio = ((1.0 + lambda) / (1.0 - lambda)).powf(0.5 * p as f64);
    (growth / mass * ratio - 1.0 + delta0 + lambda, r)
}

/// Contraction bound around an interior `x_star` for data at Ky Fan distance `rho_data`.
pub fn interior_bound<R: Rng + ?Sized>(
    problem: &GlipProblem,
    rho_data: f64,
    delta: f64,
    options: BoundOptions,
    rng: &mut R,
) -> Result<BoundReport> {
    check_nonneg("rho_data", rho_data)?;
    check_nonneg("delta", delta)?;
    let tau = problem.tau;
    let nu = problem.nu();
    let parts = interior_parts(problem, rho_data, delta)?;
    let t = 4.0 * tau * parts.trace;
    if !(t < INV_E) {
        return Err(GlipError::Precondition(format!(
            "4 tau trace(H_nu^-1) = {t} must be < 1/e"
        )));
    }
    let mut rep = BoundReport::empty(BoundKind::Interior, tau, nu, delta, rho_data);
    fill_interior(&mut rep, problem, &parts, options, rng, 1.0, rho_data, (-t * t.ln()).sqrt())?;
    Ok(rep)
}

/// Shared assembly. `x_scale` divides every `x`-space term; `rho_eff` multiplies `c1_bar`.
#[allow(clippy::too_many_arguments)]
fn fill_interior<R: Rng + ?Sized>(
    rep: &mut BoundReport,
    problem: &GlipProblem,
    parts: &InteriorParts,
    options: BoundOptions,
    rng: &mut R,
    x_scale: f64,
    rho_eff: f64,
    variance: f64,
) -> Result<()> {
    let (tau, nu, delta, rho) = (rep.tau, rep.nu, rep.delta, rep.rho_data);
    let dg = &mut rep.diagnostics;
    dg.lambda_tilde = fin(parts.lambda);
    dg.d_norm = fin(parts.d_norm);
    dg.trace_h_nu_inv = fin(parts.trace);
    dg.lambda_min_h_nu = fin(parts.lambda_min);
    dg.operator_norm = fin(parts.a_norm);
    dg.c1 = fin(parts.c1);
    dg.c2 = fin(parts.c2);
    rep.variance_term = fin(variance);

    let delta0 = if options.evaluate_tail {
        let (d0, outside) = interior_tail(problem, parts, delta, options.tail_budget, rng)?;
        rep.diagnostics.delta0 = fin(d0);
        rep.diagnostics.delta0_tail_samples = Some(outside);
        rep.tail_term = fin(d0 / (1.0 + d0) / x_scale);
        if outside == 0 {
            rep.flags.push("no tail samples fell outside B(x_star, delta)".into());
        }
        d0
    } else {
        rep.flags.push("Delta_0 not evaluated; taken as 0 in Delta_star_K".into());
        0.0
    };

    if parts.lambda >= 1.0 {
        rep.invalidate(format!("lambda_tilde = {} must be < 1", parts.lambda));
        return Ok(());
    }
    let c1_bar = parts.c1 / (1.0 - parts.lambda);
    let c2_bar = parts.c2 / (1.0 - parts.lambda);
    rep.random_bias_coeff = fin(c1_bar);
    rep.prior_bias_coeff = fin(c2_bar);
    rep.bias_random = fin(c1_bar * rho_eff / x_scale);
    rep.prior_bias = fin(c2_bar * nu / x_scale);

    let bias = c1_bar * rho + c2_bar * nu;
    let (dsk, r) = delta_star_k(
        problem.p(),
        tau,
        delta,
        parts.d_norm,
        parts.lambda,
        parts.lambda_min,
        bias,
        delta0,
    );
    rep.diagnostics.r_delta = fin(r);
    rep.diagnostics.delta_star_k = fin(dsk);
    let factor = if options.inflate {
        rep.inflated = true;
        if !dsk.is_finite() {
            rep.flags.push("Delta_star_K is not finite; increase delta".into());
        }
        1.0 + dsk
    } else {
        1.0
    };
    let main = rep.bias_random.unwrap_or(f64::NAN)
        + rep.prior_bias.unwrap_or(f64::NAN)
        + variance * factor;
    rep.main_term = Some(main).filter(|m| !m.is_nan());
    rep.overall = max_of(&[Some(rep.data_term), rep.tail_term, Some(main)]);
    Ok(())
}

/// Localisation radius `(-tau ln tau)^{1/((1+a) alpha)}`.
pub fn delta_schedule(tau: f64, alpha_growth: f64, a: f64) -> Result<f64> {
    if !(alpha_growth > 0.0 && alpha_growth < 3.0) {
        return Err(GlipError::Domain(format!(
            "growth exponent alpha = {alpha_growth} must lie in (0, 3)"
        )));
    }
    if !(a > 0.0) {
        return Err(GlipError::Domain(format!("a = {a} must be > 0")));
    }
    if !(tau > 0.0 && tau < INV_E) {
        return Err(GlipError::Domain(format!("tau = {tau} must lie in (0, 1/e)")));
    }
    Ok((-tau * tau.ln()).powf(1.0 / ((1.0 + a) * alpha_growth)))
}

/// Contraction bound when `x_star = 0` sits in the corner of the nonnegative orthant.
pub fn boundary_bound<R: Rng + ?Sized>(
    problem: &GlipProblem,
    rho_data: f64,
    delta: f64,
    options: BoundOptions,
    rng: &mut R,
) -> Result<BoundReport> {
    check_nonneg("rho_data", rho_data)?;
    check_nonneg("delta", delta)?;
    let tau = problem.tau;
    let nu = problem.nu();
    let p = problem.p();
    let star = problem.solve_x_star(prior::DEFAULT_TOL)?;
    if star.x_star.amax() > 1e-12 {
        return Err(GlipError::Precondition(format!(
            "boundary bound needs x_star = 0, got |x_star|_inf = {}",
            star.x_star.amax()
        )));
    }
    let zero = DVector::zeros(p);
    let y_exact = problem.y_exact()?;
    let (_, grad, hess) = problem.h_value_grad_hess(&y_exact, &zero)?;
    let (_, grad_g, hess_g) = problem.prior.grad_hess(&zero)?;
    let grad_data = &grad - &grad_g * nu;
    let b_star = if problem.noise.is_canonical() {
        grad.clone()
    } else {
        grad_data.abs() + &grad_g * nu
    };
    if let Some(i) = b_star.iter().position(|b| !(*b > 0.0)) {
        return Err(GlipError::Precondition(format!(
            "b_star[{i}] = {} must be > 0; the model is not in the pure boundary regime",
            b_star[i]
        )));
    }
    let b_min = b_star.min();
    let b_max = b_star.max();
    let sp = (p as f64).sqrt();

    let m_f1 = if rho_data == 0.0 || !problem.noise.is_canonical() {
        0.0
    } else {
        (0..problem.n())
            .map(|i| {
                problem
                    .noise
                    .canonical_derivs(i, y_exact[i])
                    .map(|d| d.b1.abs())
                    .unwrap_or(f64::INFINITY)
            })
            .fold(0.0, f64::max)
    };
    let c_f2 = linalg::spectral_norm(&(&hess - &hess_g * nu));
    let c_g2 = linalg::spectral_norm(&hess_g);
    let random = if rho_data == 0.0 { 0.0 } else { m_f1 / b_min * rho_data };
    let delta11 = random + delta * p as f64 * (c_f2 + 0.5 * nu * c_g2) / b_min;

    let t = tau / (sp * b_min);
    if !(t < 1.0) {
        return Err(GlipError::Precondition(format!(
            "tau / (sqrt(p) b_min) = {t} must be < 1"
        )));
    }
    let main = -(tau * sp / b_min) * t.ln();

    let mut rep = BoundReport::empty(BoundKind::Boundary, tau, nu, delta, rho_data);
    let dg = &mut rep.diagnostics;
    dg.b_star = Some(b_star.iter().cloned().collect());
    dg.b_min = fin(b_min);
    dg.b_max = fin(b_max);
    dg.m_f1 = fin(m_f1);
    dg.c_f2 = fin(c_f2);
    dg.c_g2 = fin(c_g2);
    dg.delta11 = fin(delta11);
    rep.variance_term = fin(main);

    let delta0 = if options.evaluate_tail {
        let (d0, outside) = boundary_tail(problem, &b_star, delta, options.tail_budget, rng)?;
        rep.diagnostics.delta0 = fin(d0);
        rep.diagnostics.delta0_tail_samples = Some(outside);
        rep.tail_term = fin(d0);
        d0
    } else {
        rep.flags.push("Delta_0 not evaluated; taken as 0 in Delta_5".into());
        0.0
    };

    if delta11 >= 1.0 {
        rep.invalidate(format!("Delta_11 = {delta11} must be < 1"));
        return Ok(rep);
    }
    let pf = p as f64;
    let d1 = -1.0
        + ((1.0 - delta11) / (1.0 + delta11)).powf(pf)
            * (1.0 - (-b_max * (1.0 + delta11) * delta / (sp * tau)).exp()).powf(pf);
    let d4 = ((1.0 + d1) / (1.0 + delta0)).ln() / (sp * b_min * (1.0 - delta11) / tau).ln();
    let d5 = -1.0 + (1.0 + d4) / (1.0 - delta11) * (1.0 - (1.0 - delta11).ln() / t.ln());
    rep.diagnostics.delta1_star = fin(d1);
    rep.diagnostics.delta4_star = fin(d4);
    rep.diagnostics.delta5_star = fin(d5);

    let scaled = if options.inflate {
        rep.inflated = true;
        if !d5.is_finite() {
            rep.flags.push("Delta_5 is not finite; delta must be > 0".into());
        }
        main * (1.0 + d5)
    } else {
        main
    };
    rep.main_term = fin(scaled).or(Some(f64::NAN)).filter(|m| !m.is_nan());
    rep.overall = max_of(&[Some(rep.data_term), rep.tail_term, Some(scaled)]);
    Ok(rep)
}

/// `Delta_0` for the boundary case as a ratio of importance-sampled integrals,
/// using independent exponential proposals with rates `b_star / (2 tau)`.
fn boundary_tail<R: Rng + ?Sized>(
    problem: &GlipProblem,
    b_star: &DVector<f64>,
    delta: f64,
    budget: usize,
    rng: &mut R,
) -> Result<(f64, usize)> {
    let tau = problem.tau;
    let p = problem.p();
    let y_exact = problem.y_exact()?;
    let zero = DVector::zeros(p);
    let h0 = problem.h_value(&y_exact, &zero);
    let rates: Vec<f64> = b_star.iter().map(|b| b / (2.0 * tau)).collect();
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for _ in 0..budget {
        let mut log_q = 0.0;
        let x = DVector::from_fn(p, |i, _| {
            let u: f64 = rng.random();
            let v = -(1.0 - u).ln() / rates[i];
            log_q += rates[i].ln() - rates[i] * v;
            v
        });
        let h = problem.h_value(&y_exact, &x);
        if !h.is_finite() {
            continue;
        }
        let w = -(h - h0) / tau - log_q;
        if x.norm() > delta {
            outside.push(w);
        } else {
            inside.push(w);
        }
    }
    let n_out = outside.len();
    if n_out == 0 {
        return Ok((0.0, 0));
    }
    if inside.is_empty() {
        return Ok((f64::INFINITY, n_out));
    }
    Ok(((log_sum_exp(&outside) - log_sum_exp(&inside)).exp(), n_out))
}

/// Rescaled bound for grid discretisations, with distances `|x| / sqrt(p)` and `|y| / sqrt(n)`.
///
/// Side conditions are reported in the diagnostics and flags rather than
/// rejected.
pub fn grid_bound<R: Rng + ?Sized>(
    problem: &GlipProblem,
    n: usize,
    p: usize,
    rho_tilde: f64,
    delta_tilde: f64,
    options: BoundOptions,
    rng: &mut R,
) -> Result<BoundReport> {
    crate::error::check_dim("grid_bound(n)", problem.n(), n)?;
    crate::error::check_dim("grid_bound(p)", problem.p(), p)?;
    check_nonneg("rho_tilde", rho_tilde)?;
    check_nonneg("delta_tilde", delta_tilde)?;
    let (nf, pf) = (n as f64, p as f64);
    let rho = rho_tilde * nf.sqrt();
    let delta = delta_tilde * pf.sqrt();
    let tau = problem.tau;
    let parts = interior_parts(problem, rho, delta)?;
    let t = 4.0 * tau * parts.trace / pf;
    let variance = (-t * t.ln()).sqrt();

    let mut rep = BoundReport::empty(BoundKind::Grid, tau, problem.nu(), delta_tilde, rho_tilde);
    rep.data_term = 2.0 * rho_tilde * (nf / pf).sqrt();
    let sides = vec![
        ("rho_tilde*sqrt(n/p)".to_string(), rho_tilde * (nf / pf).sqrt()),
        ("p*delta_tilde^2/(tau*trace)".to_string(), pf * delta_tilde.powi(2) / (tau * parts.trace)),
        ("tau*trace/p".to_string(), tau * parts.trace / pf),
        ("delta_tilde^2*rho_tilde^2/tau".to_string(), (delta_tilde * rho_tilde).powi(2) / tau),
    ];
    if !(t < 1.0) {
        rep.flags.push(format!("4 tau trace(H_nu^-1) / p = {t} is not below 1; variance term undefined"));
    }
    if tau * parts.trace / pf >= 1.0 {
        rep.flags.push("tau trace(H_nu^-1) / p is not small".into());
    }
    rep.diagnostics.side_conditions = Some(sides);
    fill_interior(&mut rep, problem, &parts, options, rng, pf.sqrt(), rho, variance)?;
    Ok(rep)
}

/// `gamma^2 = tau^{2/3} (ln 1/tau)^{-1/6}`, the prior scale for ill-posed problems.
pub fn ill_posed_gamma_squared(tau: f64) -> f64 {
    tau.powf(2.0 / 3.0) * (1.0 / tau).ln().powf(-1.0 / 6.0)
}

/// `gamma^2 = n^{-2/3} (ln n)^{-1/3}`, the prior scale for ill-posed grid problems with `tau = 1/n`.
pub fn grid_gamma_squared(n: usize) -> f64 {
    let n = n as f64;
    n.powf(-2.0 / 3.0) * n.ln().powf(-1.0 / 3.0)
}

/// `(sum_{i<=n} i^{-a-1} / (1 + i^{-m}/nu)^v, nu^v min(nu^{-1/m}, n)^{(vm-a)+} (ln n)^{[a = vm]})`.
pub fn knapik_sum(a: f64, m: f64, v: f64, nu: f64, n: usize) -> (f64, f64) {
    let exact: f64 = (1..=n)
        .map(|i| {
            let i = i as f64;
            i.powf(-a - 1.0) / (1.0 + i.powf(-m) / nu).powf(v)
        })
        .sum();
    let nf = n as f64;
    let k = nu.powf(-1.0 / m).min(nf);
    let e = v * m - a;
    let log_factor = if e.abs() <= 1e-12 * (1.0 + a.abs()) { nf.ln() } else { 1.0 };
    (exact, nu.powf(v) * k.powf(e.max(0.0)) * log_factor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralRegime {
    /// `s > 2 alpha + 1`: parametric rate without prior shrinkage.
    SelfRegularized,
    /// `s = 2 alpha + 1`.
    Critical,
    /// `s < 2 alpha + 1`.
    Mild,
}

/// Diagonal problem with `a_j ~ j^-alpha`, `x_j ~ j^{-beta-1/2}`, prior precision
/// `~ j^{2 kappa + 1}` and Fisher information `~ j^s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSpec {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub s: f64,
    pub p: usize,
    pub tau: f64,
    pub nu: f64,
}

impl SpectralSpec {
    /// Scaled Poisson noise, whose information exponent is `s = alpha + beta + 1/2`.
    pub fn poisson(alpha: f64, beta: f64, kappa: f64, p: usize, tau: f64, nu: f64) -> Self {
        SpectralSpec { alpha, beta, kappa, s: alpha + beta + 0.5, p, tau, nu }
    }

    /// Gaussian noise, `s = 0`.
    pub fn gaussian(alpha: f64, beta: f64, kappa: f64, p: usize, tau: f64, nu: f64) -> Self {
        SpectralSpec { alpha, beta, kappa, s: 0.0, p, tau, nu }
    }

    /// `m = 2 alpha - s + 2 kappa + 1`.
    pub fn m(&self) -> f64 {
        2.0 * self.alpha - self.s + 2.0 * self.kappa + 1.0
    }

    pub fn regime(&self) -> SpectralRegime {
        let gap = 2.0 * self.alpha + 1.0 - self.s;
        if gap.abs() <= 1e-12 {
            SpectralRegime::Critical
        } else if gap < 0.0 {
            SpectralRegime::SelfRegularized
        } else {
            SpectralRegime::Mild
        }
    }

    /// Exponent of `tau log(1/tau)` in the optimised rate.
    pub fn exponent(&self) -> f64 {
        match self.regime() {
            SpectralRegime::SelfRegularized | SpectralRegime::Critical => 0.5,
            SpectralRegime::Mild => {
                let b = self.beta.min(self.m());
                b / (2.0 * b + 2.0 * self.alpha + 1.0 - self.s)
            }
        }
    }

    /// Prior ratio minimising the bound: `(tau ln(1/tau))^{m / (2 min(beta, m) + (2 alpha + 1 - s)+)}`.
    pub fn nu_schedule(&self, tau: f64) -> f64 {
        let m = self.m();
        let b = self.beta.min(m);
        let gap = (2.0 * self.alpha + 1.0 - self.s).max(0.0);
        (tau * (1.0 / tau).ln()).powf(m / (2.0 * b + gap))
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("tau", self.tau), ("nu", self.nu)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GlipError::Domain(format!("spectral {name} = {v} must be > 0")));
            }
        }
        if !(self.kappa > 0.0) {
            return Err(GlipError::Precondition(format!(
                "spectral rate needs kappa > 0, got {}",
                self.kappa
            )));
        }
        if !(self.m() > 0.0) {
            return Err(GlipError::Precondition(format!(
                "spectral rate needs m = 2 alpha - s + 2 kappa + 1 > 0, got {} ({:?} regime)",
                self.m(),
                self.regime()
            )));
        }
        if self.p == 0 {
            return Err(GlipError::Domain("spectral p must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralRate {
    pub bound_value: f64,
    pub exponent: f64,
    pub regime: SpectralRegime,
    pub m: f64,
    /// Truncation, prior bias and variance terms.
    pub terms: [f64; 3],
}

/// Three-term spectral bound with unit constants, plus the case-analysis exponent.
pub fn spectral_rate(spec: &SpectralSpec) -> Result<SpectralRate> {
    spec.validate()?;
    let m = spec.m();
    let p = spec.p as f64;
    let k_inv = spec.nu.powf(-1.0 / m);
    let k = k_inv.min(p);
    let eq = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
    let t1 = p.max(k_inv).powf(-spec.beta);
    let t2 = spec.nu
        * k.powf((m - spec.beta).max(0.0))
        * if eq(spec.beta, m) { p.ln().sqrt() } else { 1.0 };
    let critical = eq(spec.s, 2.0 * spec.alpha + 1.0);
    let t3 = spec.tau.sqrt()
        * k.powf((spec.alpha - spec.s / 2.0 + 0.5).max(0.0))
        * (p / spec.tau).ln().powf(if critical { 1.0 } else { 0.5 });
    Ok(SpectralRate {
        bound_value: t1 + t2 + t3,
        exponent: spec.exponent(),
        regime: spec.regime(),
        m,
        terms: [t1, t2, t3],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemClass {
    WellPosedInterior,
    IllPosedInterior,
    BoundaryWellPosed,
    Spectral(SpectralSpec),
}

impl ProblemClass {
    /// Parses `well-posed-interior`, `ill-posed-interior` or `boundary-well-posed`.
    pub fn parse(name: &str) -> Option<Self> {
        match name.replace('_', "-").to_ascii_lowercase().as_str() {
            "well-posed-interior" => Some(ProblemClass::WellPosedInterior),
            "ill-posed-interior" => Some(ProblemClass::IllPosedInterior),
            "boundary-well-posed" => Some(ProblemClass::BoundaryWellPosed),
            _ => None,
        }
    }
}

/// Predicted exponent of `tau log(1/tau)` in the contraction rate.
pub fn predicted_exponent(class: &ProblemClass) -> Result<f64> {
    Ok(match class {
        ProblemClass::WellPosedInterior => 0.5,
        ProblemClass::IllPosedInterior => 1.0 / 3.0,
        ProblemClass::BoundaryWellPosed => 1.0,
        ProblemClass::Spectral(spec) => {
            spec.validate()?;
            spec.exponent()
        }
    })
}
