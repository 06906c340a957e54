//! Posterior samplers.
//!
//! Three strategies, chosen automatically unless forced:
//! exact Gaussian draws in the conjugate case, independent per-coordinate
//! inverse-CDF draws when the posterior factorises (diagonal operator and
//! diagonal Gaussian prior), and random-walk Metropolis otherwise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Domain, GlipProblem};
use crate::error::{check_dim, GlipError, Result};
use crate::forward::LinkMap;
use crate::linalg;
use crate::noise::NoiseFamily;
use crate::prior::{PriorKind, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Auto,
    Exact,
    Factorized,
    Metropolis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    /// Grid size of the one-dimensional inverse-CDF sampler.
    pub grid_nodes: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Auto,
            burn_in: 2000,
            thin: 5,
            target_acceptance: 0.3,
            grid_nodes: 512,
        }
    }
}

/// Posterior draws (one per row) with sampler diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub draws: DMatrix<f64>,
    pub method: SamplerKind,
    pub acceptance_rate: Option<f64>,
    pub chain_length: usize,
    pub warnings: Vec<String>,
}

fn is_conjugate(problem: &GlipProblem) -> bool {
    matches!(problem.noise, NoiseFamily::Gaussian { .. })
        && problem.prior.is_gaussian()
        && problem.link.is_identity()
        && problem.domain == Domain::AllReals
}

fn factorizes(problem: &GlipProblem) -> bool {
    let diag_prior = match &problem.prior.kind {
        PriorKind::GaussianPrecision { precision, .. } => linalg::is_diagonal(precision),
        PriorKind::GenericSmooth { .. } => false,
    };
    diag_prior && problem.operator.diagonal().is_some()
}

/// Closed-form posterior mean and covariance in the conjugate Gaussian case.
pub fn conjugate_posterior(
    problem: &GlipProblem,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (NoiseFamily::Gaussian { variances }, PriorKind::GaussianPrecision { precision, mean }) =
        (&problem.noise, &problem.prior.kind)
    else {
        return Err(GlipError::Unsupported(
            "closed-form posterior needs Gaussian noise and a Gaussian prior".into(),
        ));
    };
    if !problem.link.is_identity() || problem.domain != Domain::AllReals {
        return Err(GlipError::Unsupported(
            "closed-form posterior needs the identity link on all of R^p".into(),
        ));
    }
    check_dim("conjugate_posterior(y)", problem.n(), y.len())?;
    let a = problem.operator.matrix();
    let sinv = DVector::from_iterator(variances.len(), variances.iter().map(|s| 1.0 / s));
    let at_s = linalg::scale_rows(a, &sinv).transpose();
    let nu = problem.nu();
    let mut h = &at_s * a + precision * nu;
    linalg::symmetrize(&mut h);
    let h_inv = linalg::sym_inverse(&h, "posterior precision")?;
    let m = &h_inv * (&at_s * y + precision * mean * nu);
    Ok((m, h_inv * problem.tau))
}

/// Draws `count` samples from `p(x | y)`.
///
/// `init` seeds the MAP search used by the Metropolis sampler; it defaults to `x_star`.
pub fn sample_posterior<R: Rng + ?Sized>(
    problem: &GlipProblem,
    y: &DVector<f64>,
    count: usize,
    rng: &mut R,
    config: &SamplerConfig,
    init: Option<&DVector<f64>>,
) -> Result<PosteriorDraws> {
    if count == 0 {
        return Err(GlipError::Domain("count must be >= 1".into()));
    }
    check_dim("sample_posterior(y)", problem.n(), y.len())?;
    let kind = match config.kind {
        SamplerKind::Auto if is_conjugate(problem) => SamplerKind::Exact,
        SamplerKind::Auto if factorizes(problem) => SamplerKind::Factorized,
        SamplerKind::Auto => SamplerKind::Metropolis,
        k => k,
    };
    match kind {
        SamplerKind::Exact => exact(problem, y, count, rng),
        SamplerKind::Factorized => {
            if !factorizes(problem) {
                return Err(GlipError::Unsupported(
                    "factorised sampling needs a diagonal operator and diagonal Gaussian prior".into(),
                ));
            }
            factorized(problem, y, count, rng, config)
        }
        SamplerKind::Metropolis => metropolis(problem, y, count, rng, config, init),
        SamplerKind::Auto => unreachable!(),
    }
}

fn exact<R: Rng + ?Sized>(
    problem: &GlipProblem,
    y: &DVector<f64>,
    count: usize,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    let (mean, cov) = conjugate_posterior(problem, y)?;
    let l = cov
        .cholesky()
        .ok_or_else(|| GlipError::Singular("posterior covariance".into()))?
        .l();
    let p = mean.len();
    let mut draws = DMatrix::zeros(count, p);
    for r in 0..count {
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let x = &mean + &l * z;
        draws.set_row(r, &x.transpose());
    }
    Ok(PosteriorDraws {
        draws,
        method: SamplerKind::Exact,
        acceptance_rate: None,
        chain_length: count,
        warnings: Vec::new(),
    })
}

/// Support of one coordinate in `x`, given `eta = G(a x)`.
fn coordinate_support(
    problem: &GlipProblem,
    yi: f64,
    a: f64,
) -> (f64, f64) {
    let (eta_lo, eta_hi) = match &problem.noise {
        NoiseFamily::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        NoiseFamily::ScaledPoisson { .. } | NoiseFamily::Gamma { .. } => (0.0, f64::INFINITY),
        NoiseFamily::ShiftedExponential { .. } => (f64::NEG_INFINITY, yi),
    };
    let inv = |e: f64| -> f64 {
        if e.is_infinite() {
            return e;
        }
        match problem.link {
            LinkMap::Identity => e,
            LinkMap::Exp => e.ln(),
            LinkMap::Softplus => e.exp_m1().ln(),
            LinkMap::Custom(c) => (c.g_inv)(e),
        }
    };
    let (mut lo, mut hi) = if a > 0.0 {
        (inv(eta_lo) / a, inv(eta_hi) / a)
    } else if a < 0.0 {
        (inv(eta_hi) / a, inv(eta_lo) / a)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    if lo.is_nan() {
        lo = f64::NEG_INFINITY;
    }
    if hi.is_nan() {
        hi = f64::INFINITY;
    }
    if problem.domain == Domain::NonNegOrthant {
        lo = lo.max(0.0);
    }
    (lo, hi)
}

fn factorized<R: Rng + ?Sized>(
    problem: &GlipProblem,
    y: &DVector<f64>,
    count: usize,
    rng: &mut R,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    let diag = problem.operator.diagonal().expect("checked by caller");
    let PriorKind::GaussianPrecision { precision, mean } = &problem.prior.kind else {
        unreachable!("checked by caller")
    };
    let p = problem.p();
    let tau = problem.tau;
    let nu = problem.nu();
    let mut draws = DMatrix::zeros(count, p);
    for i in 0..p {
        let (a, b, m0, yi) = (diag[i], precision[(i, i)], mean[i], y[i]);
        let logf = |x: f64| -> f64 {
            let (eta, _, _) = problem.link.eval(a * x);
            match problem.noise.nll_term(i, yi, eta) {
                Some((v, _, _)) => -(v + 0.5 * nu * b * (x - m0) * (x - m0)) / tau,
                None => f64::NEG_INFINITY,
            }
        };
        let (lo, hi) = coordinate_support(problem, yi, a);
        let start = problem.x_true[i].clamp(lo, hi);
        // curvature guess at the truth for the initial step size
        let (eta, g1, _) = problem.link.eval(a * start);
        let curv = problem
            .noise
            .nll_term(i, yi, eta)
            .map(|(_, _, d2)| d2 * g1 * g1 * a * a)
            .unwrap_or(0.0)
            + nu * b;
        let scale = if curv > 0.0 { (tau / curv).sqrt() } else { 1e-3 };
        let xs = sample_log_density_1d(&logf, lo, hi, start, scale, config.grid_nodes, count, rng)?;
        for (r, v) in xs.into_iter().enumerate() {
            draws[(r, i)] = v;
        }
    }
    Ok(PosteriorDraws {
        draws,
        method: SamplerKind::Factorized,
        acceptance_rate: None,
        chain_length: count,
        warnings: Vec::new(),
    })
}

/// Log-density drop defining the sampled window around the mode.
const WINDOW_DROP: f64 = 40.0;

/// Samples a unimodal one-dimensional density by inverse CDF of a piecewise
/// log-linear interpolant on `nodes` grid points around the mode.
///
/// `logf` may return `-inf` outside its support; `[lo, hi]` bounds the search.
#[allow(clippy::too_many_arguments)]
pub fn sample_log_density_1d<F: Fn(f64) -> f64, R: Rng + ?Sized>(
    logf: &F,
    lo: f64,
    hi: f64,
    start: f64,
    scale: f64,
    nodes: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(lo < hi) || nodes < 8 || !(scale > 0.0) {
        return Err(GlipError::Domain("invalid one-dimensional sampler setup".into()));
    }
    let mode = find_mode(logf, lo, hi, start, scale)?;
    let fmax = logf(mode);
    let edge = |dir: f64| -> f64 {
        let bound = if dir < 0.0 { lo } else { hi };
        let mut step = scale;
        loop {
            let x = mode + dir * step;
            if (dir < 0.0 && x <= lo) || (dir > 0.0 && x >= hi) {
                return bound;
            }
            if logf(x) < fmax - WINDOW_DROP {
                return x;
            }
            step *= 2.0;
        }
    };
    let (mut left, mut right) = (edge(-1.0), edge(1.0));
    let mut grid = Vec::new();
    let mut vals = Vec::new();
    for _ in 0..4 {
        let h = (right - left) / (nodes - 1) as f64;
        grid = (0..nodes).map(|k| left + h * k as f64).collect::<Vec<_>>();
        vals = grid.iter().map(|&x| logf(x)).collect::<Vec<_>>();
        let inside: Vec<usize> = (0..nodes).filter(|&k| vals[k] >= fmax - WINDOW_DROP).collect();
        let (Some(&first), Some(&last)) = (inside.first(), inside.last()) else {
            break;
        };
        if last - first >= nodes / 4 {
            break;
        }
        left = grid[first.saturating_sub(1)];
        right = grid[(last + 1).min(nodes - 1)];
    }
    let floor = fmax - 800.0;
    let lv: Vec<f64> = vals.iter().map(|v| v.max(floor) - fmax).collect();
    let mut cum = Vec::with_capacity(nodes);
    let mut total = 0.0;
    for k in 0..nodes - 1 {
        let h = grid[k + 1] - grid[k];
        let d = lv[k + 1] - lv[k];
        let mass = if d.abs() < 1e-8 {
            h * lv[k].exp() * (1.0 + 0.5 * d)
        } else {
            // both endpoints are <= 0 on the log scale, so this cannot overflow
            h * (lv[k + 1].exp() - lv[k].exp()) / d
        };
        total += mass;
        cum.push(total);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random::<f64>() * total;
        let k = cum.partition_point(|c| *c < u).min(nodes - 2);
        let prev = if k == 0 { 0.0 } else { cum[k - 1] };
        let seg = cum[k] - prev;
        let v = if seg > 0.0 { ((u - prev) / seg).clamp(0.0, 1.0) } else { 0.5 };
        let h = grid[k + 1] - grid[k];
        let d = lv[k + 1] - lv[k];
        let x = if d.abs() < 1e-8 {
            grid[k] + h * v
        } else if d > 0.0 {
            grid[k] + h * (1.0 + (v + (1.0 - v) * (-d).exp()).ln() / d).max(0.0)
        } else {
            grid[k] + h * (v * d.exp_m1()).ln_1p() / d
        };
        out.push(x.clamp(lo, hi));
    }
    Ok(out)
}

/// Mode of a unimodal log density by bracketing and golden-section search.
fn find_mode<F: Fn(f64) -> f64>(logf: &F, lo: f64, hi: f64, start: f64, scale: f64) -> Result<f64> {
    let mut x0 = start.clamp(lo, hi);
    if !logf(x0).is_finite() {
        // move into the support, then search inward from the boundary
        let mut found = false;
        let mut step = scale;
        for _ in 0..200 {
            for cand in [x0 + step, x0 - step] {
                if cand > lo && cand < hi && logf(cand).is_finite() {
                    x0 = cand;
                    found = true;
                    break;
                }
            }
            if found {
                break;
            }
            step *= 2.0;
        }
        if !found {
            return Err(GlipError::Domain("density has no finite point near the start".into()));
        }
    }
    let f0 = logf(x0);
    let dir = {
        let r = (x0 + scale).min(hi);
        let l = (x0 - scale).max(lo);
        if logf(r) > f0 {
            1.0
        } else if logf(l) > f0 {
            -1.0
        } else {
            0.0
        }
    };
    let (mut a, mut b) = if dir == 0.0 {
        ((x0 - scale).max(lo), (x0 + scale).min(hi))
    } else {
        let mut prev = x0;
        let mut fprev = f0;
        let mut step = scale;
        loop {
            let next = (prev + dir * step).clamp(lo, hi);
            let fnext = logf(next);
            if fnext <= fprev || next == lo || next == hi {
                if fnext > fprev {
                    // monotone up to the boundary
                    return Ok(next);
                }
                let back = prev - dir * step * 0.5;
                break if dir > 0.0 {
                    (back.max(lo), next)
                } else {
                    (next, back.min(hi))
                };
            }
            prev = next;
            fprev = fnext;
            step *= 2.0;
        }
    };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (logf(c), logf(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = logf(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = logf(d);
        }
    }
    let mid = 0.5 * (a + b);
    let best = [a, mid, b]
        .into_iter()
        .filter(|x| logf(*x).is_finite())
        .max_by(|u, v| logf(*u).total_cmp(&logf(*v)))
        .unwrap_or(mid);
    Ok(best)
}

fn metropolis<R: Rng + ?Sized>(
    problem: &GlipProblem,
    y: &DVector<f64>,
    count: usize,
    rng: &mut R,
    config: &SamplerConfig,
    init: Option<&DVector<f64>>,
) -> Result<PosteriorDraws> {
    let p = problem.p();
    let tau = problem.tau;
    let start = match init {
        Some(x) => x.clone(),
        None => problem.solve_x_star(DEFAULT_TOL)?.x_star,
    };
    let x_map = problem.map_estimate(y, &start, 1e-9)?;
    let (_, grad, hess) = problem.h_value_grad_hess(y, &x_map)?;
    // boundary coordinates: the posterior decays like exp(-g_i x_i / tau), precision g_i^2 / tau
    let mut prec = hess;
    if problem.domain == Domain::NonNegOrthant {
        for i in 0..p {
            if x_map[i] == 0.0 && grad[i] > 0.0 {
                prec[(i, i)] += grad[i] * grad[i] / tau;
            }
        }
    }
    let eig = prec.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax().max(1e-300);
    let clamped = eig.eigenvalues.map(|e| e.max(1e-10 * top));
    let cov = &eig.eigenvectors
        * DMatrix::from_diagonal(&clamped.map(|e| tau / e))
        * eig.eigenvectors.transpose();
    let l = cov
        .cholesky()
        .ok_or_else(|| GlipError::Singular("proposal covariance".into()))?
        .l();
    let thin = config.thin.max(1);
    let mut x = x_map.clone();
    let mut hx = problem.h_value(y, &x);
    let mut log_step = (2.38 / (p as f64).sqrt()).ln();
    let mut draws = DMatrix::zeros(count, p);
    let mut accepted = 0usize;
    let total = config.burn_in + count * thin;
    for it in 0..total {
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let prop = &x + &l * z * log_step.exp();
        let hp = problem.h_value(y, &prop);
        let log_ratio = -(hp - hx) / tau;
        let u: f64 = rng.random();
        let accept = hp.is_finite() && u.ln() < log_ratio;
        if accept {
            x = prop;
            hx = hp;
        }
        if it < config.burn_in {
            let a = if accept { 1.0 } else { 0.0 };
            log_step += (a - config.target_acceptance) / ((it + 1) as f64).powf(0.6);
        } else {
            if accept {
                accepted += 1;
            }
            let k = it - config.burn_in;
            if (k + 1) % thin == 0 {
                draws.set_row(k / thin, &x.transpose());
            }
        }
    }
    let rate = accepted as f64 / (count * thin) as f64;
    let mut warnings = Vec::new();
    if !(0.05..=0.8).contains(&rate) {
        warnings.push(format!("Metropolis acceptance rate {rate:.3} outside [0.05, 0.8]"));
    }
    Ok(PosteriorDraws {
        draws,
        method: SamplerKind::Metropolis,
        acceptance_rate: Some(rate),
        chain_length: total,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ForwardOperator;
    use crate::prior::PriorModel;
    use crate::rng::Stream;

    fn ks_against(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        samples.sort_by(f64::total_cmp);
        let m = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let c = cdf(*x);
                (c - k as f64 / m).abs().max((c - (k + 1) as f64 / m).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Trapezoid CDF of an unnormalised log density on a fine grid.
    fn quadrature_cdf(logf: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> impl Fn(f64) -> f64 {
        let h = (hi - lo) / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|k| lo + h * k as f64).collect();
        let lv: Vec<f64> = xs.iter().map(|x| logf(*x)).collect();
        let top = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lv.iter().map(|v| (v - top).exp()).collect();
        let mut cum = vec![0.0];
        for k in 0..points - 1 {
            let last = *cum.last().unwrap();
            cum.push(last + 0.5 * h * (w[k] + w[k + 1]));
        }
        let total = *cum.last().unwrap();
        move |x: f64| {
            if x <= lo {
                return 0.0;
            }
            if x >= hi {
                return 1.0;
            }
            let k = (((x - lo) / h) as usize).min(points - 2);
            let frac = (x - xs[k]) / h;
            (cum[k] + frac * (cum[k + 1] - cum[k])) / total
        }
    }

    fn poisson_1d() -> GlipProblem {
        GlipProblem::new(
            NoiseFamily::scaled_poisson(1).unwrap(),
            ForwardOperator::dense(DMatrix::identity(1, 1)).unwrap(),
            LinkMap::Identity,
            PriorModel::gaussian_diagonal(&[1.0], 1.0).unwrap(),
            DVector::from_element(1, 1.0),
            Domain::AllReals,
            0.02,
        )
        .unwrap()
    }

    fn poisson_logf(pr: &GlipProblem, y: f64) -> impl Fn(f64) -> f64 + '_ {
        move |x: f64| -pr.h_value(&DVector::from_element(1, y), &DVector::from_element(1, x)) / pr.tau
    }

    #[test]
    fn metropolis_matches_quadrature() {
        let pr = poisson_1d();
        let y = 1.12;
        let cfg = SamplerConfig {
            kind: SamplerKind::Metropolis,
            ..SamplerConfig::default()
        };
        let mut out = sample_posterior(&pr, &DVector::from_element(1, y), 100_000, &mut Stream::from_seed(5), &cfg, None)
            .unwrap();
        assert!(out.warnings.is_empty(), "{:?}", out.warnings);
        let cdf = quadrature_cdf(poisson_logf(&pr, y), 0.3, 2.5, 10_000);
        let ks = ks_against(out.draws.as_mut_slice(), cdf);
        assert!(ks < 0.02, "KS distance {ks}");
    }

    #[test]
    fn factorized_matches_quadrature() {
        let pr = poisson_1d();
        let y = 0.86;
        let mut out = sample_posterior(
            &pr,
            &DVector::from_element(1, y),
            100_000,
            &mut Stream::from_seed(6),
            &SamplerConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(out.method, SamplerKind::Factorized);
        let cdf = quadrature_cdf(poisson_logf(&pr, y), 0.2, 2.5, 10_000);
        let ks = ks_against(out.draws.as_mut_slice(), cdf);
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn factorized_truncated_exponential_boundary() {
        // y = 0 Poisson on the orthant: posterior exp(-(x + nu x^2 / 2) / tau) on x >= 0
        let pr = GlipProblem {
            x_true: DVector::zeros(1),
            domain: Domain::NonNegOrthant,
            ..poisson_1d()
        };
        let mut out = sample_posterior(&pr, &DVector::zeros(1), 50_000, &mut Stream::from_seed(7), &SamplerConfig::default(), None)
            .unwrap();
        assert!(out.draws.iter().all(|v| *v >= 0.0));
        let cdf = quadrature_cdf(poisson_logf(&pr, 0.0), 0.0, 1.0, 100_000);
        let ks = ks_against(out.draws.as_mut_slice(), cdf);
        assert!(ks < 0.015, "KS distance {ks}");
    }

    #[test]
    fn single_draw_is_reproducible() {
        let pr = poisson_1d();
        let y = DVector::from_element(1, 1.0);
        for kind in [SamplerKind::Factorized, SamplerKind::Metropolis] {
            let cfg = SamplerConfig {
                kind,
                ..SamplerConfig::default()
            };
            let a = sample_posterior(&pr, &y, 1, &mut Stream::from_seed(9), &cfg, None).unwrap();
            let b = sample_posterior(&pr, &y, 1, &mut Stream::from_seed(9), &cfg, None).unwrap();
            assert_eq!(a.draws, b.draws);
        }
    }

    #[test]
    fn exact_sampler_needs_conjugacy() {
        let pr = poisson_1d();
        let cfg = SamplerConfig {
            kind: SamplerKind::Exact,
            ..SamplerConfig::default()
        };
        assert!(sample_posterior(&pr, &DVector::from_element(1, 1.0), 5, &mut Stream::from_seed(1), &cfg, None).is_err());
        assert!(sample_posterior(&pr, &DVector::from_element(1, 1.0), 0, &mut Stream::from_seed(1), &SamplerConfig::default(), None).is_err());
    }
}
