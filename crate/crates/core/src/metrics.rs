//! Ky Fan and Prokhorov distances.
//!
//! The Ky Fan distance between two random elements is
//! `inf { eps > 0 : P(d(X, Y) > eps) < eps }`. Empirically the probability is
//! replaced by the fraction of a sample of distances, and the infimum is found
//! exactly by walking the sorted order statistics. The distance of a measure
//! to a point mass is the Ky Fan distance of a random element with that law to
//! the point, so the same estimator serves for posterior contraction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, GlipError, Result};
use crate::rng::{Purpose, Stream};

/// Resamples used for the bootstrap standard-error hint.
pub const DEFAULT_BOOTSTRAP: usize = 200;

/// Fewest posterior draws accepted by [`prokhorov_to_point`].
pub const MIN_POSTERIOR_DRAWS: usize = 100;

const INV_E: f64 = 1.0 / std::f64::consts::E;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KyFanEstimate {
    pub epsilon: f64,
    pub sample_count: usize,
    /// Bootstrap standard deviation of `epsilon`. Advisory only.
    pub standard_error_hint: f64,
}

/// Ky Fan radius of a sorted sample of distances.
///
/// On each interval `[b_k, b_{k+1})` between consecutive distinct values the
/// tail fraction is a constant `t_k`, so the admissible set there is
/// `(t_k, b_{k+1})` or `[b_k, b_{k+1})`. The first nonempty piece gives the
/// infimum.
fn kyfan_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len() as f64;
    let mut lo = 0.0;
    let mut at_most = 0usize;
    let mut i = 0;
    while i < sorted.len() && sorted[i] <= 0.0 {
        i += 1;
    }
    at_most += i;
    while i < sorted.len() {
        let next = sorted[i];
        let tail = (sorted.len() - at_most) as f64 / m;
        let cand = f64::max(lo, tail);
        if cand < next {
            return cand;
        }
        let mut j = i;
        while j < sorted.len() && sorted[j] == next {
            j += 1;
        }
        at_most = j;
        lo = next;
        i = j;
    }
    lo
}

fn check_distances(distances: &[f64]) -> Result<()> {
    if distances.is_empty() {
        return Err(GlipError::Precondition("Ky Fan estimate needs at least one distance".into()));
    }
    if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(GlipError::Domain(format!("distance {d} must be finite and >= 0")));
    }
    Ok(())
}

/// Empirical Ky Fan radius with a bootstrap hint from a fixed internal stream.
pub fn kyfan_empirical(distances: &[f64]) -> Result<KyFanEstimate> {
    let mut rng = Stream::derive(0, Purpose::Bootstrap, 0, 0);
    kyfan_empirical_with(distances, DEFAULT_BOOTSTRAP, &mut rng)
}

/// Empirical Ky Fan radius with `resamples` bootstrap replicates drawn from `rng`.
///
/// `resamples = 0` skips the bootstrap and reports a zero hint.
pub fn kyfan_empirical_with<R: Rng + ?Sized>(
    distances: &[f64],
    resamples: usize,
    rng: &mut R,
) -> Result<KyFanEstimate> {
    check_distances(distances)?;
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let epsilon = kyfan_sorted(&sorted);
    let m = sorted.len();
    let standard_error_hint = if resamples > 1 && m > 1 {
        let mut buf = vec![0.0; m];
        let reps: Vec<f64> = (0..resamples)
            .map(|_| {
                for b in buf.iter_mut() {
                    *b = sorted[rng.random_range(0..m)];
                }
                buf.sort_by(f64::total_cmp);
                kyfan_sorted(&buf)
            })
            .collect();
        let mean = reps.iter().sum::<f64>() / resamples as f64;
        let var = reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok(KyFanEstimate { epsilon, sample_count: m, standard_error_hint })
}

/// Root of `exp(-z / a) = z` on `(0, -a ln a]`, for `0 < a <= 1/e`.
///
/// This is the exact Ky Fan distance of an `Exp(1/a)` variable to zero.
pub fn kyfan_fixed_point(a: f64) -> Result<f64> {
    if !(a > 0.0 && a <= INV_E * (1.0 + 1e-15)) {
        return Err(GlipError::Domain(format!("fixed point needs 0 < A <= 1/e, got {a}")));
    }
    let phi = |z: f64| (-z / a).exp() - z;
    let mut lo = 0.0_f64;
    let mut hi = (-a * a.ln()).max(f64::MIN_POSITIVE);
    if phi(hi) > 0.0 {
        // Only reachable through rounding at a = 1/e where the root is the endpoint.
        return Ok(hi);
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z = if phi(lo).abs() < phi(hi).abs() { lo } else { hi };
    Ok(z)
}

fn neg_t_log_t_sqrt(t: f64, what: &str) -> Result<f64> {
    if !(t > 0.0 && t < INV_E) {
        return Err(GlipError::Precondition(format!(
            "{what} = {t} must lie in (0, 1/e)"
        )));
    }
    Ok((-t * t.ln()).sqrt())
}

/// `sqrt(-4 tr ln(4 tr))` for a Gaussian with covariance trace `tr < 1/(4e)`.
pub fn kyfan_bound_gaussian(trace_sigma: f64) -> Result<f64> {
    if !(trace_sigma > 0.0 && 4.0 * trace_sigma < INV_E) {
        return Err(GlipError::Precondition(format!(
            "Gaussian Ky Fan bound needs 0 < trace(Sigma) < 1/(4e), got {trace_sigma}"
        )));
    }
    neg_t_log_t_sqrt(4.0 * trace_sigma, "4 trace(Sigma)")
}

/// Bound for `tau Poisson(mu / tau)` around `mu`, with `M = 4 sum(mu)`.
pub fn kyfan_bound_poisson(mu: &[f64], tau: f64) -> Result<f64> {
    if mu.is_empty() || mu.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(GlipError::Domain("Poisson means must be nonempty and > 0".into()));
    }
    if !(tau > 0.0) {
        return Err(GlipError::Domain(format!("tau = {tau} must be > 0")));
    }
    neg_t_log_t_sqrt(tau * 4.0 * mu.iter().sum::<f64>(), "tau M")
}

/// `-(tau/lambda) ln(tau/lambda)` for an `Exp(lambda / tau)` excess.
pub fn kyfan_bound_exponential(lambda: f64, tau: f64) -> Result<f64> {
    if !(lambda > 0.0 && tau > 0.0) {
        return Err(GlipError::Domain(format!("lambda = {lambda}, tau = {tau} must be > 0")));
    }
    let t = tau / lambda;
    if t >= INV_E {
        return Err(GlipError::Precondition(format!("tau/lambda = {t} must be < 1/e")));
    }
    Ok(-t * t.ln())
}

/// Bound from cumulant growth constants `C_t >= 1` and scales `w_t`, with `M = 4 sum C_t w_t`.
pub fn kyfan_bound_cumulant(c: &[f64], w: &[f64], tau: f64) -> Result<f64> {
    check_dim("kyfan_bound_cumulant(w)", c.len(), w.len())?;
    if c.is_empty() {
        return Err(GlipError::Domain("cumulant constants must be nonempty".into()));
    }
    if let Some(ct) = c.iter().find(|ct| !(ct.is_finite() && **ct >= 1.0)) {
        return Err(GlipError::Precondition(format!("cumulant constant {ct} must be >= 1")));
    }
    if w.iter().any(|wt| !(wt.is_finite() && *wt > 0.0)) || !(tau > 0.0) {
        return Err(GlipError::Domain("scales and tau must be > 0".into()));
    }
    let m: f64 = 4.0 * c.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    neg_t_log_t_sqrt(tau * m, "tau M")
}

/// `(n tau^{mK/2} L_K)^{1/(K+1)}` from a `K`-th moment bound.
pub fn kyfan_bound_moment(n: usize, tau: f64, m_k: f64, l_k: f64, k: f64) -> Result<f64> {
    for (name, v) in [("tau", tau), ("m(K)", m_k), ("L_K", l_k), ("K", k)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(GlipError::Domain(format!("{name} = {v} must be finite and > 0")));
        }
    }
    if n == 0 {
        return Err(GlipError::Domain("n must be >= 1".into()));
    }
    Ok((n as f64 * tau.powf(m_k * k / 2.0) * l_k).powf(1.0 / (k + 1.0)))
}

/// Exponential-moment variant: the expectation `E exp(alpha ||Y - mu||)` itself, clipped at 1.
///
/// Taken literally the expectation is at least 1, so the result is always 1
/// for admissible input. It is kept for completeness.
pub fn kyfan_bound_exp_moment(expectation: f64) -> Result<f64> {
    if !(expectation.is_finite() && expectation > 0.0) {
        return Err(GlipError::Domain(format!("expectation {expectation} must be > 0")));
    }
    Ok(expectation.min(1.0))
}

/// Distances `||draw_j - x_ref|| / scale` for each row of `draws`.
pub fn distances_to_point(draws: &DMatrix<f64>, x_ref: &DVector<f64>, scale: f64) -> Result<Vec<f64>> {
    check_dim("distances_to_point(x_ref)", draws.ncols(), x_ref.len())?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(GlipError::Domain(format!("scale = {scale} must be > 0")));
    }
    Ok(draws
        .row_iter()
        .map(|r| {
            r.iter()
                .zip(x_ref.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / scale
        })
        .collect())
}

/// Prokhorov distance between the empirical law of `draws` (rows) and a point mass.
pub fn prokhorov_to_point(draws: &DMatrix<f64>, x_ref: &DVector<f64>, scale: f64) -> Result<KyFanEstimate> {
    let mut rng = Stream::derive(0, Purpose::Bootstrap, 0, 0);
    prokhorov_to_point_with(draws, x_ref, scale, DEFAULT_BOOTSTRAP, &mut rng)
}

pub fn prokhorov_to_point_with<R: Rng + ?Sized>(
    draws: &DMatrix<f64>,
    x_ref: &DVector<f64>,
    scale: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<KyFanEstimate> {
    if draws.nrows() < MIN_POSTERIOR_DRAWS {
        return Err(GlipError::Precondition(format!(
            "need at least {MIN_POSTERIOR_DRAWS} posterior draws, got {}",
            draws.nrows()
        )));
    }
    let d = distances_to_point(draws, x_ref, scale)?;
    kyfan_empirical_with(&d, resamples, rng)
}

/// `max(rho + P(Omega_2), Phi_1(rho))`: Ky Fan distance of outputs from that of inputs.
pub fn lifting_combine(phi1_at_rho: f64, rho_data: f64, p_omega2: f64) -> f64 {
    f64::max(rho_data + p_omega2, phi1_at_rho)
}
