//! Exponential-family observation noise.
//!
//! Canonical families have per-coordinate densities
//! `exp(-(y b(eta) - c(eta)) / tau + d(y, tau))` with mean `eta` and variance
//! `-tau / b'(eta)`. The shifted exponential family is not canonical (its
//! support moves with `eta`) and is only offered for boundary experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma as GammaDist, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_dim, GlipError, Result};

/// Largest Poisson rate `eta / tau` the sampler accepts.
pub const MAX_POISSON_RATE: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    ScaledPoisson,
    Gamma,
    ShiftedExponential,
}

/// Observation noise model for an `n`-vector of independent responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseFamily {
    /// `Y ~ N(eta, tau diag(variances))`.
    Gaussian { variances: Vec<f64> },
    /// `Y / tau ~ Poisson(eta / tau)`.
    ScaledPoisson { n: usize },
    /// Gamma with shape `shape / tau` and mean `eta`.
    Gamma { shape: f64, n: usize },
    /// `Y - eta ~ Exp(rate / tau)`.
    ShiftedExponential { rates: Vec<f64> },
}

/// The functions `b`, `c` and their derivatives at one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalDerivs {
    pub b: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// Smoothness and convergence constants of a canonical family, stored as diagonals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConstants {
    pub m_f1: DVector<f64>,
    pub m_f2: DVector<f64>,
    pub c_f: DVector<f64>,
    /// Curvature of the negative log-likelihood at the exact data.
    pub v: DVector<f64>,
}

impl NoiseConstants {
    pub fn m_f1_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.m_f1)
    }
    pub fn m_f2_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.m_f2)
    }
    pub fn c_f_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.c_f)
    }
    pub fn v_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.v)
    }
}

fn check_positive(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        Some(i) => Err(GlipError::Domain(format!(
            "{what}[{i}] = {} must be finite and > 0",
            values[i]
        ))),
        None => Ok(()),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(GlipError::Domain(format!("dispersion tau = {tau} must be > 0")))
    }
}

/// `y / tau` as a count, if it is a nonnegative integer up to rounding.
fn as_count(y: f64, tau: f64) -> Option<f64> {
    let k = y / tau;
    let r = k.round();
    if r >= 0.0 && (k - r).abs() <= 1e-9 * r.max(1.0) {
        Some(r)
    } else {
        None
    }
}

impl NoiseFamily {
    pub fn gaussian(variances: Vec<f64>) -> Result<Self> {
        let f = NoiseFamily::Gaussian { variances };
        f.validate()?;
        Ok(f)
    }

    pub fn scaled_poisson(n: usize) -> Result<Self> {
        let f = NoiseFamily::ScaledPoisson { n };
        f.validate()?;
        Ok(f)
    }

    pub fn gamma(shape: f64, n: usize) -> Result<Self> {
        let f = NoiseFamily::Gamma { shape, n };
        f.validate()?;
        Ok(f)
    }

    pub fn shifted_exponential(rates: Vec<f64>) -> Result<Self> {
        let f = NoiseFamily::ShiftedExponential { rates };
        f.validate()?;
        Ok(f)
    }

    /// Checks the invariants; deserialised values should be validated before use.
    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(GlipError::Domain("noise dimension must be positive".into()));
        }
        match self {
            NoiseFamily::Gaussian { variances } => check_positive(variances, "variances"),
            NoiseFamily::ScaledPoisson { .. } => Ok(()),
            NoiseFamily::Gamma { shape, .. } => check_positive(&[*shape], "shape"),
            NoiseFamily::ShiftedExponential { rates } => check_positive(rates, "rates"),
        }
    }

    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseFamily::Gaussian { .. } => NoiseKind::Gaussian,
            NoiseFamily::ScaledPoisson { .. } => NoiseKind::ScaledPoisson,
            NoiseFamily::Gamma { .. } => NoiseKind::Gamma,
            NoiseFamily::ShiftedExponential { .. } => NoiseKind::ShiftedExponential,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseFamily::Gaussian { variances } => variances.len(),
            NoiseFamily::ScaledPoisson { n } | NoiseFamily::Gamma { n, .. } => *n,
            NoiseFamily::ShiftedExponential { rates } => rates.len(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.kind() != NoiseKind::ShiftedExponential
    }

    /// `b`, `c` and their first three derivatives at coordinate `i`.
    pub fn canonical_derivs(&self, i: usize, eta: f64) -> Result<CanonicalDerivs> {
        match self {
            NoiseFamily::Gaussian { variances } => {
                let s2 = variances[i];
                Ok(CanonicalDerivs {
                    b: -eta / s2,
                    b1: -1.0 / s2,
                    b2: 0.0,
                    b3: 0.0,
                    c: -0.5 * eta * eta / s2,
                    c1: -eta / s2,
                    c2: -1.0 / s2,
                    c3: 0.0,
                })
            }
            NoiseFamily::ScaledPoisson { .. } => {
                if !(eta > 0.0) {
                    return Err(GlipError::Domain(format!(
                        "Poisson mean eta[{i}] = {eta} must be > 0"
                    )));
                }
                Ok(CanonicalDerivs {
                    b: -eta.ln(),
                    b1: -1.0 / eta,
                    b2: 1.0 / (eta * eta),
                    b3: -2.0 / (eta * eta * eta),
                    c: -eta,
                    c1: -1.0,
                    c2: 0.0,
                    c3: 0.0,
                })
            }
            NoiseFamily::Gamma { shape: a, .. } => {
                if !(eta > 0.0) {
                    return Err(GlipError::Domain(format!(
                        "Gamma mean eta[{i}] = {eta} must be > 0"
                    )));
                }
                let e2 = eta * eta;
                Ok(CanonicalDerivs {
                    b: a / eta,
                    b1: -a / e2,
                    b2: 2.0 * a / (e2 * eta),
                    b3: -6.0 * a / (e2 * e2),
                    c: -a * eta.ln(),
                    c1: -a / eta,
                    c2: a / e2,
                    c3: -2.0 * a / (e2 * eta),
                })
            }
            NoiseFamily::ShiftedExponential { .. } => Err(GlipError::Unsupported(
                "the shifted exponential family has no canonical form".into(),
            )),
        }
    }

    /// Per-coordinate negative log-likelihood (scaled by `tau`, without `d`) and its
    /// first two derivatives in `eta`. `None` when `eta` is outside the support.
    pub fn nll_term(&self, i: usize, y: f64, eta: f64) -> Option<(f64, f64, f64)> {
        match self {
            NoiseFamily::Gaussian { variances } => {
                let s2 = variances[i];
                Some((
                    (0.5 * eta * eta - y * eta) / s2,
                    (eta - y) / s2,
                    1.0 / s2,
                ))
            }
            NoiseFamily::ScaledPoisson { .. } => {
                if y == 0.0 && eta >= 0.0 {
                    Some((eta, 1.0, 0.0))
                } else if eta > 0.0 {
                    Some((eta - y * eta.ln(), 1.0 - y / eta, y / (eta * eta)))
                } else {
                    None
                }
            }
            NoiseFamily::Gamma { shape: a, .. } => {
                if eta > 0.0 {
                    let e2 = eta * eta;
                    Some((
                        a * y / eta + a * eta.ln(),
                        a / eta - a * y / e2,
                        2.0 * a * y / (e2 * eta) - a / e2,
                    ))
                } else {
                    None
                }
            }
            NoiseFamily::ShiftedExponential { rates } => {
                if eta <= y {
                    Some((rates[i] * (y - eta), -rates[i], 0.0))
                } else {
                    None
                }
            }
        }
    }

    /// Log density (or log mass) of `y` given mean parameters `eta`.
    ///
    /// Returns `-inf` for `y` outside the support. A zero Poisson mean is
    /// admitted as the point mass at zero.
    pub fn log_density(&self, y: &DVector<f64>, eta: &DVector<f64>, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        check_dim("log_density(y)", self.dim(), y.len())?;
        check_dim("log_density(eta)", self.dim(), eta.len())?;
        let mut total = 0.0;
        for i in 0..self.dim() {
            let (yi, ei) = (y[i], eta[i]);
            let term = match self {
                NoiseFamily::Gaussian { variances } => {
                    let s2 = variances[i];
                    let (nll, _, _) = self.nll_term(i, yi, ei).expect("gaussian support");
                    -nll / tau - yi * yi / (2.0 * tau * s2)
                        - 0.5 * (2.0 * std::f64::consts::PI * tau * s2).ln()
                }
                NoiseFamily::ScaledPoisson { .. } => {
                    if !(ei >= 0.0) {
                        return Err(GlipError::Domain(format!(
                            "Poisson mean eta[{i}] = {ei} must be >= 0"
                        )));
                    }
                    match as_count(yi, tau) {
                        None => f64::NEG_INFINITY,
                        Some(k) => match self.nll_term(i, yi, ei) {
                            None => f64::NEG_INFINITY,
                            Some((nll, _, _)) => -nll / tau - k * tau.ln() - ln_gamma(k + 1.0),
                        },
                    }
                }
                NoiseFamily::Gamma { shape, .. } => {
                    if !(ei > 0.0) {
                        return Err(GlipError::Domain(format!(
                            "Gamma mean eta[{i}] = {ei} must be > 0"
                        )));
                    }
                    if !(yi > 0.0) {
                        f64::NEG_INFINITY
                    } else {
                        let k = shape / tau;
                        let (nll, _, _) = self.nll_term(i, yi, ei).expect("gamma support");
                        -nll / tau + k * k.ln() + (k - 1.0) * yi.ln() - ln_gamma(k)
                    }
                }
                NoiseFamily::ShiftedExponential { rates } => {
                    if yi < ei {
                        f64::NEG_INFINITY
                    } else {
                        let r = rates[i] / tau;
                        r.ln() - r * (yi - ei)
                    }
                }
            };
            total += term;
        }
        Ok(total)
    }

    /// Componentwise mean and variance of `Y`.
    pub fn mean_variance(
        &self,
        eta: &DVector<f64>,
        tau: f64,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        check_tau(tau)?;
        check_dim("mean_variance(eta)", self.dim(), eta.len())?;
        let n = self.dim();
        let mut mean = DVector::zeros(n);
        let mut var = DVector::zeros(n);
        for i in 0..n {
            match self {
                NoiseFamily::ShiftedExponential { rates } => {
                    mean[i] = eta[i] + tau / rates[i];
                    var[i] = (tau / rates[i]).powi(2);
                }
                _ => {
                    let d = self.canonical_derivs(i, eta[i])?;
                    mean[i] = eta[i];
                    var[i] = -tau / d.b1;
                }
            }
        }
        Ok((mean, var))
    }

    /// One draw of the response vector.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        eta: &DVector<f64>,
        tau: f64,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        check_tau(tau)?;
        check_dim("sample(eta)", self.dim(), eta.len())?;
        let n = self.dim();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let e = eta[i];
            y[i] = match self {
                NoiseFamily::Gaussian { variances } => {
                    let z: f64 = StandardNormal.sample(rng);
                    e + (tau * variances[i]).sqrt() * z
                }
                NoiseFamily::ScaledPoisson { .. } => {
                    let rate = e / tau;
                    if !(rate >= 0.0) {
                        return Err(GlipError::Domain(format!(
                            "Poisson mean eta[{i}] = {e} must be >= 0"
                        )));
                    }
                    if rate > MAX_POISSON_RATE {
                        return Err(GlipError::Domain(format!(
                            "Poisson rate eta/tau = {rate:e} at coordinate {i} exceeds {MAX_POISSON_RATE:e}"
                        )));
                    }
                    if rate == 0.0 {
                        0.0
                    } else {
                        let k: f64 = Poisson::new(rate)
                            .map_err(|e| GlipError::Domain(e.to_string()))?
                            .sample(rng);
                        tau * k
                    }
                }
                NoiseFamily::Gamma { shape, .. } => {
                    if !(e > 0.0) {
                        return Err(GlipError::Domain(format!(
                            "Gamma mean eta[{i}] = {e} must be > 0"
                        )));
                    }
                    let k = shape / tau;
                    GammaDist::new(k, e / k)
                        .map_err(|e| GlipError::Domain(e.to_string()))?
                        .sample(rng)
                }
                NoiseFamily::ShiftedExponential { rates } => {
                    let draw: f64 = Exp::new(rates[i] / tau)
                        .map_err(|e| GlipError::Domain(e.to_string()))?
                        .sample(rng);
                    e + draw
                }
            };
        }
        Ok(y)
    }

    /// Constants `M_f1`, `M_f2`, `C_f` and `V` at the exact data.
    ///
    /// `delta` is the localisation radius, `rho` the Ky Fan distance of the data
    /// and `operator_norm` the spectral norm of the forward operator.
    pub fn noise_constants(
        &self,
        y_exact: &DVector<f64>,
        delta: f64,
        rho: f64,
        operator_norm: f64,
    ) -> Result<NoiseConstants> {
        check_dim("noise_constants(y_exact)", self.dim(), y_exact.len())?;
        for (name, v) in [("delta", delta), ("rho", rho), ("operator_norm", operator_norm)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GlipError::Domain(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        let n = self.dim();
        let margin = |i: usize| -> Result<f64> {
            let m = y_exact[i] - delta * operator_norm;
            if m > 0.0 {
                Ok(m)
            } else {
                Err(GlipError::Precondition(format!(
                    "coordinate {i}: y_exact - delta*||A|| = {m} must be > 0"
                )))
            }
        };
        match self {
            NoiseFamily::Gaussian { variances } => {
                let inv = DVector::from_iterator(n, variances.iter().map(|s| 1.0 / s));
                Ok(NoiseConstants {
                    m_f1: inv.clone(),
                    m_f2: DVector::zeros(n),
                    c_f: DVector::zeros(n),
                    v: inv,
                })
            }
            NoiseFamily::ScaledPoisson { .. } => {
                let mut c = NoiseConstants::zeros(n);
                for i in 0..n {
                    let m = margin(i)?;
                    let y = y_exact[i];
                    c.m_f1[i] = 1.0 / y;
                    c.m_f2[i] = 1.0 / (y * y);
                    c.c_f[i] = 2.0 * (y + rho) / m.powi(3);
                }
                c.v = c.m_f1.clone();
                Ok(c)
            }
            NoiseFamily::Gamma { shape: a, .. } => {
                let mut c = NoiseConstants::zeros(n);
                for i in 0..n {
                    let m = margin(i)?;
                    let y = y_exact[i];
                    c.m_f1[i] = a / (y * y);
                    c.m_f2[i] = 2.0 * a / (y * y * y);
                    c.c_f[i] = 2.0 * a * (4.0 * y + rho) / m.powi(4);
                }
                c.v = c.m_f1.clone();
                Ok(c)
            }
            NoiseFamily::ShiftedExponential { .. } => Err(GlipError::Unsupported(
                "noise constants are defined for canonical families only".into(),
            )),
        }
    }
}

impl NoiseConstants {
    fn zeros(n: usize) -> Self {
        NoiseConstants {
            m_f1: DVector::zeros(n),
            m_f2: DVector::zeros(n),
            c_f: DVector::zeros(n),
            v: DVector::zeros(n),
        }
    }
}
