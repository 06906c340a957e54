//! Priors `p(x) ∝ exp(-g(x) / gamma^2)` and the concentration point `x_star`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GlipError, Result};
use crate::forward::ForwardOperator;
use crate::infer::Domain;
use crate::linalg;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_NEWTON_ITERS: usize = 200;
const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;

/// A smooth potential `g` with its gradient and Hessian.
pub trait Potential: Send + Sync {
    fn name(&self) -> &str;
    fn value_grad_hess(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)>;
}

/// `g(x) = sum_i ln cosh(x_i)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogCosh;

fn ln_cosh(v: f64) -> f64 {
    let a = v.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl Potential for LogCosh {
    fn name(&self) -> &str {
        "log_cosh"
    }

    fn value_grad_hess(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let value = x.iter().map(|v| ln_cosh(*v)).sum();
        let grad = x.map(f64::tanh);
        let hess = DMatrix::from_diagonal(&x.map(|v| 1.0 / v.cosh().powi(2)));
        Ok((value, grad, hess))
    }
}

#[derive(Clone)]
pub enum PriorKind {
    /// `g(x) = (x - mean)^T precision (x - mean) / 2`.
    GaussianPrecision {
        precision: DMatrix<f64>,
        mean: DVector<f64>,
    },
    /// A user potential, with an optional smoothness constant `C_g`.
    GenericSmooth {
        potential: Arc<dyn Potential>,
        dim: usize,
        c_g: Option<DMatrix<f64>>,
    },
}

impl fmt::Debug for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorKind::GaussianPrecision { precision, mean } => f
                .debug_struct("GaussianPrecision")
                .field("precision", precision)
                .field("mean", mean)
                .finish(),
            PriorKind::GenericSmooth { potential, dim, c_g } => f
                .debug_struct("GenericSmooth")
                .field("potential", &potential.name())
                .field("dim", dim)
                .field("c_g", c_g)
                .finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PriorModel {
    pub kind: PriorKind,
    pub gamma: f64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(GlipError::Domain(format!("prior scale gamma = {gamma} must be > 0")))
    }
}

impl PriorModel {
    pub fn gaussian(precision: DMatrix<f64>, mean: DVector<f64>, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let p = precision.nrows();
        check_dim("gaussian prior precision (square)", p, precision.ncols())?;
        check_dim("gaussian prior mean", p, mean.len())?;
        let scale = precision.amax().max(1.0);
        if (&precision - precision.transpose()).amax() > 1e-12 * scale {
            return Err(GlipError::Domain("prior precision is not symmetric".into()));
        }
        if linalg::min_eigenvalue(&precision) < -1e-12 * scale {
            return Err(GlipError::Domain("prior precision has a negative eigenvalue".into()));
        }
        Ok(PriorModel {
            kind: PriorKind::GaussianPrecision { precision, mean },
            gamma,
        })
    }

    /// Gaussian prior with diagonal precision and zero mean.
    pub fn gaussian_diagonal(diag: &[f64], gamma: f64) -> Result<Self> {
        let d = DVector::from_column_slice(diag);
        Self::gaussian(DMatrix::from_diagonal(&d), DVector::zeros(diag.len()), gamma)
    }

    /// Sobolev-type precision `b_j^2 = j^(2 kappa + 1)`.
    pub fn sobolev(kappa: f64, p: usize, gamma: f64) -> Result<Self> {
        let diag: Vec<f64> = (1..=p).map(|j| (j as f64).powf(2.0 * kappa + 1.0)).collect();
        Self::gaussian_diagonal(&diag, gamma)
    }

    pub fn generic(
        potential: Arc<dyn Potential>,
        dim: usize,
        c_g: Option<DMatrix<f64>>,
        gamma: f64,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        if let Some(c) = &c_g {
            check_dim("C_g rows", dim, c.nrows())?;
            check_dim("C_g cols", dim, c.ncols())?;
        }
        Ok(PriorModel {
            kind: PriorKind::GenericSmooth { potential, dim, c_g },
            gamma,
        })
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(PriorModel {
            kind: self.kind.clone(),
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            PriorKind::GaussianPrecision { mean, .. } => mean.len(),
            PriorKind::GenericSmooth { dim, .. } => *dim,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, PriorKind::GaussianPrecision { .. })
    }

    /// `(g(x), grad g(x), hess g(x))`.
    pub fn grad_hess(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        check_dim("prior grad_hess(x)", self.dim(), x.len())?;
        match &self.kind {
            PriorKind::GaussianPrecision { precision, mean } => {
                let r = x - mean;
                let grad = precision * &r;
                Ok((0.5 * r.dot(&grad), grad, precision.clone()))
            }
            PriorKind::GenericSmooth { potential, .. } => {
                let (v, g, mut h) = potential.value_grad_hess(x)?;
                check_dim("potential gradient", self.dim(), g.len())?;
                linalg::symmetrize(&mut h);
                Ok((v, g, h))
            }
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        match &self.kind {
            PriorKind::GaussianPrecision { precision, mean } => {
                let r = x - mean;
                Ok(0.5 * r.dot(&(precision * &r)))
            }
            PriorKind::GenericSmooth { potential, .. } => Ok(potential.value_grad_hess(x)?.0),
        }
    }

    /// Smoothness constant `C_g` bounding Hessian variation on `B(x_star, delta)`.
    ///
    /// Zero for Gaussian priors. For generic priors the supplied metadata is used;
    /// otherwise a finite-difference estimate over coordinate and diagonal probes.
    pub fn c_g(&self, x_star: &DVector<f64>, delta: f64) -> Result<DMatrix<f64>> {
        let p = self.dim();
        match &self.kind {
            PriorKind::GaussianPrecision { .. } => Ok(DMatrix::zeros(p, p)),
            PriorKind::GenericSmooth { c_g: Some(c), .. } => Ok(c.clone()),
            PriorKind::GenericSmooth { c_g: None, .. } => {
                let r = if delta > 0.0 { delta } else { 1e-4 };
                let (_, _, h0) = self.grad_hess(x_star)?;
                let mut dirs: Vec<DVector<f64>> = (0..p)
                    .map(|i| {
                        let mut e = DVector::zeros(p);
                        e[i] = 1.0;
                        e
                    })
                    .collect();
                dirs.push(DVector::from_element(p, 1.0 / (p as f64).sqrt()));
                let mut worst: f64 = 0.0;
                for d in dirs {
                    for sign in [-1.0, 1.0] {
                        let (_, _, h) = self.grad_hess(&(x_star + &d * (sign * r)))?;
                        worst = worst.max(linalg::spectral_norm(&(h - &h0)) / r);
                    }
                }
                Ok(DMatrix::identity(p, p) * worst)
            }
        }
    }
}

/// JSON description of a prior precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrecisionSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Sobolev { sobolev: f64 },
    Matrix { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Gaussian {
        precision: PrecisionSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        gamma: f64,
    },
    LogCosh {
        gamma: f64,
    },
}

impl PriorSpec {
    pub fn gamma(&self) -> f64 {
        match self {
            PriorSpec::Gaussian { gamma, .. } | PriorSpec::LogCosh { gamma } => *gamma,
        }
    }

    pub fn build(&self, p: usize) -> Result<PriorModel> {
        match self {
            PriorSpec::Gaussian {
                precision,
                mean,
                gamma,
            } => {
                let b = match precision {
                    PrecisionSpec::Scalar(s) => DMatrix::identity(p, p) * *s,
                    PrecisionSpec::Diagonal(d) => {
                        check_dim("prior diagonal precision", p, d.len())?;
                        DMatrix::from_diagonal(&DVector::from_column_slice(d))
                    }
                    PrecisionSpec::Sobolev { sobolev } => {
                        return match mean {
                            None => PriorModel::sobolev(*sobolev, p, *gamma),
                            Some(m) => {
                                let base = PriorModel::sobolev(*sobolev, p, *gamma)?;
                                let PriorKind::GaussianPrecision { precision, .. } = base.kind
                                else {
                                    unreachable!()
                                };
                                check_dim("prior mean", p, m.len())?;
                                PriorModel::gaussian(precision, DVector::from_column_slice(m), *gamma)
                            }
                        };
                    }
                    PrecisionSpec::Matrix { matrix } => {
                        check_dim("prior precision rows", p, matrix.len())?;
                        if matrix.iter().any(|r| r.len() != p) {
                            return Err(GlipError::Config("prior precision must be p x p".into()));
                        }
                        DMatrix::from_fn(p, p, |i, j| matrix[i][j])
                    }
                };
                let m0 = match mean {
                    Some(m) => {
                        check_dim("prior mean", p, m.len())?;
                        DVector::from_column_slice(m)
                    }
                    None => DVector::zeros(p),
                };
                PriorModel::gaussian(b, m0, *gamma)
            }
            PriorSpec::LogCosh { gamma } => PriorModel::generic(Arc::new(LogCosh), p, None, *gamma),
        }
    }
}

/// The concentration point `argmin { g(x) : A x = A x_true, x in domain }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarPoint {
    pub x_star: DVector<f64>,
    /// `||A x_star - A x_true||`.
    pub residual: f64,
    /// True when every coordinate is strictly inside the domain.
    pub interior: bool,
    /// Coordinates held at zero by the orthant constraint.
    pub active: Vec<usize>,
}

fn stack_constraints(a: &DMatrix<f64>, active: &[usize]) -> DMatrix<f64> {
    let (n, p) = a.shape();
    let mut m = DMatrix::zeros(n + active.len(), p);
    m.rows_mut(0, n).copy_from(a);
    for (r, &i) in active.iter().enumerate() {
        m[(n + r, i)] = 1.0;
    }
    m
}

fn finish(
    x: DVector<f64>,
    op: &ForwardOperator,
    x_true: &DVector<f64>,
    domain: Domain,
    active: Vec<usize>,
) -> StarPoint {
    let residual = (op.matrix() * (&x - x_true)).norm();
    let interior = match domain {
        Domain::AllReals => true,
        Domain::NonNegOrthant => x.iter().all(|v| *v > 0.0),
    };
    StarPoint {
        x_star: x,
        residual,
        interior,
        active,
    }
}

/// Computes `x_star` for a prior, operator, truth and domain.
pub fn solve_x_star(
    prior: &PriorModel,
    op: &ForwardOperator,
    x_true: &DVector<f64>,
    domain: Domain,
    tol: f64,
) -> Result<StarPoint> {
    let p = op.p();
    check_dim("solve_x_star(x_true)", p, x_true.len())?;
    check_dim("solve_x_star(prior)", p, prior.dim())?;
    if !(tol > 0.0) {
        return Err(GlipError::Domain(format!("tolerance {tol} must be > 0")));
    }
    if domain == Domain::NonNegOrthant {
        if let Some(i) = x_true.iter().position(|v| *v < 0.0) {
            return Err(GlipError::Precondition(format!(
                "x_true[{i}] = {} lies outside the nonnegative orthant",
                x_true[i]
            )));
        }
    }
    let split = op.split();
    if split.p1 == 0 {
        return Ok(finish(x_true.clone(), op, x_true, domain, Vec::new()));
    }
    let u1 = split.u1();
    let (_, _, b) = prior.grad_hess(x_true)?;
    let b11 = u1.transpose() * &b * &u1;
    if b11.clone().cholesky().is_none() {
        return Err(GlipError::Singular(
            "prior curvature restricted to null(A) (B11) is not positive definite".into(),
        ));
    }
    if let (PriorKind::GaussianPrecision { precision, mean }, Domain::AllReals) =
        (&prior.kind, domain)
    {
        // x = x_true + U1 z with B11 z = -U1^T B (x_true - m0)
        let rhs = -(u1.transpose() * (precision * (x_true - mean)));
        let z = b11
            .cholesky()
            .expect("checked above")
            .solve(&rhs);
        return Ok(finish(x_true + &u1 * z, op, x_true, domain, Vec::new()));
    }
    active_set_newton(prior, op, x_true, domain, tol)
}

/// Newton's method on `{A x = A x_true}` with an active set for the orthant.
fn active_set_newton(
    prior: &PriorModel,
    op: &ForwardOperator,
    x_true: &DVector<f64>,
    domain: Domain,
    tol: f64,
) -> Result<StarPoint> {
    let a = op.matrix();
    let orthant = domain == Domain::NonNegOrthant;
    let mut x = x_true.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut last_residual = f64::INFINITY;
    for _ in 0..MAX_NEWTON_ITERS {
        let cons = stack_constraints(a, &active);
        let (_, null, _) = linalg::row_null_split(&cons, 1e-12);
        let (g, grad, hess) = prior.grad_hess(&x)?;
        let rg = null.tr_mul(&grad);
        last_residual = rg.norm();
        if rg.norm() <= tol {
            if !orthant || active.is_empty() {
                return Ok(finish(x, op, x_true, domain, active));
            }
            // multipliers: grad = A^T lambda + sum_{i in W} mu_i e_i
            let svd = cons.transpose().svd(true, true);
            let coef = svd
                .solve(&grad, 1e-12)
                .map_err(|e| GlipError::Singular(e.to_string()))?;
            let (worst, mu) = active
                .iter()
                .enumerate()
                .map(|(r, &i)| (i, coef[a.nrows() + r]))
                .min_by(|u, v| u.1.total_cmp(&v.1))
                .expect("active set nonempty");
            if mu < -tol {
                active.retain(|&i| i != worst);
                continue;
            }
            return Ok(finish(x, op, x_true, domain, active));
        }
        let mut rh = null.transpose() * &hess * &null;
        linalg::symmetrize(&mut rh);
        let dz = match rh.clone().cholesky() {
            Some(ch) => ch.solve(&(-&rg)),
            None => {
                let shift = (-linalg::min_eigenvalue(&rh)).max(0.0) + 1e-8 * rh.amax().max(1.0);
                (rh + DMatrix::identity(null.ncols(), null.ncols()) * shift)
                    .cholesky()
                    .ok_or_else(|| GlipError::Singular("reduced prior Hessian".into()))?
                    .solve(&(-&rg))
            }
        };
        let step = &null * dz;
        let mut t_max = f64::INFINITY;
        let mut blocking = None;
        if orthant {
            for i in 0..x.len() {
                if step[i] < 0.0 && !active.contains(&i) {
                    let t = -x[i] / step[i];
                    if t < t_max {
                        t_max = t;
                        blocking = Some(i);
                    }
                }
            }
        }
        let slope = grad.dot(&step);
        let mut t = t_max.min(1.0);
        let hit_bound = t_max <= 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &x + &step * t;
            if prior.value(&trial)? <= g + ARMIJO_C * t * slope {
                accepted = true;
                break;
            }
            t *= BACKTRACK;
        }
        if !accepted {
            break;
        }
        x += &step * t;
        if hit_bound && t == t_max {
            let i = blocking.expect("bound hit implies a blocking index");
            x[i] = 0.0;
            active.push(i);
        }
        if orthant {
            for v in x.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    Err(GlipError::Convergence {
        solver: "x_star",
        iterations: MAX_NEWTON_ITERS,
        residual: last_residual,
        last_iterate: x.iter().copied().collect(),
    })
}
