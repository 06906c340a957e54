//! Posterior machinery: `h_y`, MAP estimation, Laplace curvature and sampling.

mod sampler;

pub use sampler::{
    conjugate_posterior, sample_log_density_1d, sample_posterior, PosteriorDraws, SamplerConfig,
    SamplerKind,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GlipError, Result};
use crate::forward::{ForwardOperator, LinkMap};
use crate::linalg;
use crate::noise::NoiseFamily;
use crate::prior::{self, PriorModel, StarPoint};

pub const MAP_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    #[default]
    AllReals,
    NonNegOrthant,
}

/// A complete model instance.
#[derive(Debug, Clone)]
pub struct GlipProblem {
    pub noise: NoiseFamily,
    pub operator: ForwardOperator,
    pub link: LinkMap,
    pub prior: PriorModel,
    pub x_true: DVector<f64>,
    pub domain: Domain,
    pub tau: f64,
}

/// Laplace objects at `x_star`.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub x_map: DVector<f64>,
    pub x_star: DVector<f64>,
    /// Curvature of `h_y` at `x_star` under the observed data.
    pub h: DMatrix<f64>,
    /// Curvature of `h` at `x_star` under the exact data.
    pub h_nu: DMatrix<f64>,
    /// `H^-1 grad h_y(x_star)`.
    pub x0: DVector<f64>,
    pub p0: usize,
    pub p1: usize,
    pub det_omega00: f64,
    pub det_b11: f64,
    pub log_det_omega00: f64,
    pub log_det_b11: f64,
    pub interior: bool,
    /// `x_star - x0`, the Gaussian-approximation mean.
    pub laplace_mean: DVector<f64>,
    /// `tau H^-1`.
    pub laplace_cov: DMatrix<f64>,
}

/// Result of a MAP solve with its iteration count.
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl GlipProblem {
    pub fn new(
        noise: NoiseFamily,
        operator: ForwardOperator,
        link: LinkMap,
        prior: PriorModel,
        x_true: DVector<f64>,
        domain: Domain,
        tau: f64,
    ) -> Result<Self> {
        noise.validate()?;
        check_dim("problem: noise dimension vs operator rows", operator.n(), noise.dim())?;
        check_dim("problem: prior dimension vs operator columns", operator.p(), prior.dim())?;
        check_dim("problem: x_true", operator.p(), x_true.len())?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(GlipError::Domain(format!("tau = {tau} must be > 0")));
        }
        if domain == Domain::NonNegOrthant {
            if let Some(i) = x_true.iter().position(|v| *v < 0.0) {
                return Err(GlipError::Precondition(format!(
                    "x_true[{i}] = {} is outside the nonnegative orthant",
                    x_true[i]
                )));
            }
        }
        let problem = GlipProblem {
            noise,
            operator,
            link,
            prior,
            x_true,
            domain,
            tau,
        };
        let y = problem.y_exact()?;
        for i in 0..y.len() {
            if problem.noise.nll_term(i, y[i], y[i]).is_none() {
                return Err(GlipError::Domain(format!(
                    "y_exact[{i}] = {} is not admissible for the noise family",
                    y[i]
                )));
            }
        }
        Ok(problem)
    }

    pub fn p(&self) -> usize {
        self.operator.p()
    }

    pub fn n(&self) -> usize {
        self.operator.n()
    }

    pub fn gamma(&self) -> f64 {
        self.prior.gamma
    }

    /// `nu = tau / gamma^2`.
    pub fn nu(&self) -> f64 {
        self.tau / (self.prior.gamma * self.prior.gamma)
    }

    pub fn with_tau_gamma(&self, tau: f64, gamma: f64) -> Result<Self> {
        GlipProblem::new(
            self.noise.clone(),
            self.operator.clone(),
            self.link,
            self.prior.with_gamma(gamma)?,
            self.x_true.clone(),
            self.domain,
            tau,
        )
    }

    /// `G(A x)`.
    pub fn eta(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.link.apply(&self.operator.apply(x)?)
    }

    pub fn y_exact(&self) -> Result<DVector<f64>> {
        self.eta(&self.x_true)
    }

    pub fn sample_data<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        self.noise.sample(&self.y_exact()?, self.tau, rng)
    }

    fn in_domain(&self, x: &DVector<f64>) -> bool {
        match self.domain {
            Domain::AllReals => true,
            Domain::NonNegOrthant => x.iter().all(|v| *v >= 0.0),
        }
    }

    /// Per-coordinate negative log-likelihood pieces in `mu = A x`: value, gradient, curvature.
    fn likelihood_mu(
        &self,
        y: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>, DVector<f64>)> {
        let n = mu.len();
        let mut f = 0.0;
        let mut g = DVector::zeros(n);
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let (eta, g1, g2) = self.link.eval(mu[i]);
            let (v, d1, d2) = self.noise.nll_term(i, y[i], eta).ok_or_else(|| {
                GlipError::Domain(format!(
                    "eta[{i}] = {eta} is not admissible for y[{i}] = {}",
                    y[i]
                ))
            })?;
            f += v;
            g[i] = d1 * g1;
            w[i] = d2 * g1 * g1 + d1 * g2;
        }
        Ok((f, g, w))
    }

    /// `(h_y(x), grad h_y(x), hess h_y(x))` with `h_y = f_y + nu g`.
    pub fn h_value_grad_hess(
        &self,
        y: &DVector<f64>,
        x: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        check_dim("h(y)", self.n(), y.len())?;
        check_dim("h(x)", self.p(), x.len())?;
        let a = self.operator.matrix();
        let mu = a * x;
        let (f, g_mu, w) = self.likelihood_mu(y, &mu)?;
        let (gv, gg, gh) = self.prior.grad_hess(x)?;
        let nu = self.nu();
        let grad = a.tr_mul(&g_mu) + gg * nu;
        let mut hess = linalg::weighted_gram(a, &w) + gh * nu;
        linalg::symmetrize(&mut hess);
        Ok((f + nu * gv, grad, hess))
    }

    /// `h_y(x)`, or `+inf` outside the support or the domain.
    pub fn h_value(&self, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
        if !self.in_domain(x) {
            return f64::INFINITY;
        }
        let mu = self.operator.matrix() * x;
        let mut f = 0.0;
        for i in 0..mu.len() {
            let m = mu[i];
            if let LinkMap::Custom(c) = self.link {
                if !(m > c.domain.0 && m < c.domain.1) {
                    return f64::INFINITY;
                }
            }
            match self.noise.nll_term(i, y[i], self.link.eval(m).0) {
                Some((v, _, _)) => f += v,
                None => return f64::INFINITY,
            }
        }
        match self.prior.value(x) {
            Ok(g) => f + self.nu() * g,
            Err(_) => f64::INFINITY,
        }
    }

    /// Curvature `A^T V_y(x) A` of the data term.
    pub fn data_curvature(&self, y: &DVector<f64>, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let a = self.operator.matrix();
        let (_, _, w) = self.likelihood_mu(y, &(a * x))?;
        let mut m = linalg::weighted_gram(a, &w);
        linalg::symmetrize(&mut m);
        Ok(m)
    }

    pub fn solve_x_star(&self, tol: f64) -> Result<StarPoint> {
        prior::solve_x_star(&self.prior, &self.operator, &self.x_true, self.domain, tol)
    }

    pub fn map_estimate(&self, y: &DVector<f64>, x_init: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        Ok(self.map_estimate_traced(y, x_init, tol)?.x)
    }

    /// MAP estimate with iteration count.
    ///
    /// Canonical families use projected Newton (active set on the orthant);
    /// the shifted exponential family, whose support moves with `x`, uses a
    /// log-barrier method.
    pub fn map_estimate_traced(
        &self,
        y: &DVector<f64>,
        x_init: &DVector<f64>,
        tol: f64,
    ) -> Result<MapResult> {
        check_dim("map_estimate(y)", self.n(), y.len())?;
        check_dim("map_estimate(x_init)", self.p(), x_init.len())?;
        if !(tol > 0.0) {
            return Err(GlipError::Domain(format!("tolerance {tol} must be > 0")));
        }
        if self.noise.is_canonical() {
            self.projected_newton(y, x_init, tol)
        } else {
            self.barrier_newton(y, x_init, tol)
        }
    }

    fn project(&self, x: &mut DVector<f64>) {
        if self.domain == Domain::NonNegOrthant {
            for v in x.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    fn projected_gradient(&self, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        match self.domain {
            Domain::AllReals => g.clone(),
            Domain::NonNegOrthant => {
                DVector::from_fn(x.len(), |i, _| x[i] - (x[i] - g[i]).max(0.0))
            }
        }
    }

    fn projected_newton(&self, y: &DVector<f64>, x_init: &DVector<f64>, tol: f64) -> Result<MapResult> {
        let p = self.p();
        let mut x = x_init.clone();
        self.project(&mut x);
        if !self.h_value(y, &x).is_finite() {
            return Err(GlipError::Domain(
                "MAP initial point lies outside the likelihood support".into(),
            ));
        }
        let mut kkt = f64::INFINITY;
        for it in 0..MAP_MAX_ITERS {
            let (f, g, h) = self.h_value_grad_hess(y, &x)?;
            let pg = self.projected_gradient(&x, &g);
            kkt = pg.amax();
            if kkt <= tol {
                return Ok(MapResult {
                    x,
                    iterations: it,
                    kkt_residual: kkt,
                });
            }
            let eps = pg.norm().min(1e-8);
            let bound: Vec<bool> = (0..p)
                .map(|i| self.domain == Domain::NonNegOrthant && x[i] <= eps && g[i] > 0.0)
                .collect();
            let free: Vec<usize> = (0..p).filter(|&i| !bound[i]).collect();
            let mut d = DVector::zeros(p);
            let mut decrement = 0.0;
            if !free.is_empty() {
                let hf = h.select_rows(&free).select_columns(&free);
                let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
                let df = match hf.clone().cholesky() {
                    Some(ch) => ch.solve(&gf),
                    None => {
                        let lmin = linalg::min_eigenvalue(&hf);
                        let scale = hf.amax().max(1e-300);
                        if lmin.abs() <= 1e-12 * scale {
                            return Err(GlipError::Singular(
                                "Hessian of h_y is singular with nu = 0; an ill-posed problem needs nu > 0"
                                    .into(),
                            ));
                        }
                        let shift = (-lmin).max(0.0) + 1e-8 * scale;
                        (hf + DMatrix::identity(free.len(), free.len()) * shift)
                            .cholesky()
                            .ok_or_else(|| GlipError::Singular("shifted Hessian".into()))?
                            .solve(&gf)
                    }
                };
                decrement = gf.dot(&df);
                for (k, &i) in free.iter().enumerate() {
                    d[i] = df[k];
                }
            }
            for i in 0..p {
                if bound[i] {
                    d[i] = g[i];
                }
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let mut trial = &x - &d * t;
                self.project(&mut trial);
                let ft = self.h_value(y, &trial);
                let mut model = 0.0;
                for i in 0..p {
                    model += if bound[i] {
                        g[i] * (x[i] - trial[i])
                    } else {
                        t * g[i] * d[i]
                    };
                }
                if ft.is_finite() && ft <= f - 1e-4 * model {
                    accepted = Some(trial);
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(next) => x = next,
                None => {
                    // no representable decrease left: converged to rounding
                    if decrement <= 1e-20 * (1.0 + f.abs()) {
                        return Ok(MapResult {
                            x,
                            iterations: it,
                            kkt_residual: kkt,
                        });
                    }
                    break;
                }
            }
        }
        Err(GlipError::Convergence {
            solver: "map_estimate",
            iterations: MAP_MAX_ITERS,
            residual: kkt,
            last_iterate: x.iter().copied().collect(),
        })
    }

    /// Barrier objective `h_y(x) - mu_b [sum ln(y - eta) + sum ln x]` and derivatives.
    fn barrier_terms(
        &self,
        y: &DVector<f64>,
        x: &DVector<f64>,
        mu_b: f64,
    ) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let (f, mut g, mut h) = self.h_value_grad_hess(y, x).ok()?;
        let a = self.operator.matrix();
        let mut val = f;
        let eta = self.eta(x).ok()?;
        let jac = self.link.jacobian(&(a * x)).ok()?;
        let ja = jac * a;
        for i in 0..y.len() {
            let s = y[i] - eta[i];
            if !(s > 0.0) {
                return None;
            }
            val -= mu_b * s.ln();
            let row = ja.row(i).transpose();
            g += &row * (mu_b / s);
            h += &row * row.transpose() * (mu_b / (s * s));
        }
        if self.domain == Domain::NonNegOrthant {
            for j in 0..x.len() {
                if !(x[j] > 0.0) {
                    return None;
                }
                val -= mu_b * x[j].ln();
                g[j] -= mu_b / x[j];
                h[(j, j)] += mu_b / (x[j] * x[j]);
            }
        }
        Some((val, g, h))
    }

    fn barrier_newton(&self, y: &DVector<f64>, x_init: &DVector<f64>, tol: f64) -> Result<MapResult> {
        let mut x = x_init.clone();
        if self.barrier_terms(y, &x, 1.0).is_none() {
            return Err(GlipError::Domain(
                "barrier MAP needs a strictly feasible initial point".into(),
            ));
        }
        let mut mu_b = 1e-2;
        let mut total = 0;
        loop {
            let mut inner_ok = false;
            for _ in 0..MAP_MAX_ITERS {
                total += 1;
                let (f, g, h) = self.barrier_terms(y, &x, mu_b).expect("iterate stays feasible");
                let d = linalg::sym_inverse(&h, "barrier Hessian")? * &g;
                let dec = g.dot(&d);
                // below this, Armijo tests only see rounding noise in f
                if dec <= tol * tol || dec <= 8.0 * f64::EPSILON * (1.0 + f.abs()) {
                    inner_ok = true;
                    break;
                }
                let mut t = 1.0;
                let mut moved = false;
                for _ in 0..80 {
                    let trial = &x - &d * t;
                    if let Some((ft, _, _)) = self.barrier_terms(y, &trial, mu_b) {
                        if ft <= f - 1e-4 * t * dec {
                            x = trial;
                            moved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !moved {
                    inner_ok = true;
                    break;
                }
            }
            if !inner_ok {
                return Err(GlipError::Convergence {
                    solver: "map_estimate (barrier)",
                    iterations: total,
                    residual: mu_b,
                    last_iterate: x.iter().copied().collect(),
                });
            }
            let constraints = (self.n() + self.p()) as f64;
            if mu_b * constraints <= tol {
                return Ok(MapResult {
                    x,
                    iterations: total,
                    kkt_residual: mu_b * constraints,
                });
            }
            mu_b *= 0.1;
        }
    }

    /// Laplace objects at `x_star` for observed data `y`.
    pub fn laplace_summary(&self, y: &DVector<f64>, star: &StarPoint) -> Result<PosteriorSummary> {
        let xs = &star.x_star;
        let y_exact = self.y_exact()?;
        let nu = self.nu();
        let (_, grad_y, h) = self.h_value_grad_hess(y, xs)?;
        let (_, _, b) = self.prior.grad_hess(xs)?;
        let data_exact = self.data_curvature(&y_exact, xs)?;
        let mut h_nu = &data_exact + &b * nu;
        linalg::symmetrize(&mut h_nu);
        let h_inv = linalg::sym_inverse(&h, "H (full-rank assumption)")?;
        let x0 = &h_inv * &grad_y;
        let split = self.operator.split();
        let (u0, u1) = (split.u0(), split.u1());
        let mut omega00 = u0.transpose() * &data_exact * &u0;
        let mut b11 = u1.transpose() * &b * &u1;
        linalg::symmetrize(&mut omega00);
        linalg::symmetrize(&mut b11);
        let log_det_omega00 = linalg::log_det_pd(&omega00, "Omega00")?;
        let log_det_b11 = linalg::log_det_pd(&b11, "B11")?;
        let x_map = self.map_estimate(y, xs, prior::DEFAULT_TOL)?;
        let laplace_mean = xs - &x0;
        Ok(PosteriorSummary {
            x_map,
            x_star: xs.clone(),
            h,
            h_nu,
            x0,
            p0: split.p0,
            p1: split.p1,
            det_omega00: log_det_omega00.exp(),
            det_b11: log_det_b11.exp(),
            log_det_omega00,
            log_det_b11,
            interior: star.interior,
            laplace_mean,
            laplace_cov: h_inv * self.tau,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use approx::assert_relative_eq;

    pub(crate) fn gaussian_problem(a: DMatrix<f64>, tau: f64, gamma: f64) -> GlipProblem {
        let (n, p) = a.shape();
        GlipProblem::new(
            NoiseFamily::gaussian(vec![1.0; n]).unwrap(),
            ForwardOperator::dense(a).unwrap(),
            LinkMap::Identity,
            PriorModel::gaussian_diagonal(&vec![1.0; p], gamma).unwrap(),
            DVector::from_element(p, 0.5),
            Domain::AllReals,
            tau,
        )
        .unwrap()
    }

    fn poisson_problem(a: DMatrix<f64>, x_true: DVector<f64>, domain: Domain) -> GlipProblem {
        let (n, p) = a.shape();
        GlipProblem::new(
            NoiseFamily::scaled_poisson(n).unwrap(),
            ForwardOperator::dense(a).unwrap(),
            LinkMap::Identity,
            PriorModel::gaussian_diagonal(&vec![1.0; p], 1.0).unwrap(),
            x_true,
            domain,
            0.01,
        )
        .unwrap()
    }

    #[test]
    fn gaussian_identity_gradient() {
        let pr = gaussian_problem(DMatrix::identity(3, 3), 0.1, 1.0);
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let (_, g, h) = pr.h_value_grad_hess(&y, &y).unwrap();
        assert!((g - &y * pr.nu()).norm() < 1e-14);
        assert!((h - DMatrix::identity(3, 3) * (1.0 + pr.nu())).norm() < 1e-14);
    }

    #[test]
    fn gradient_and_hessian_by_finite_differences() {
        let mut rng = Stream::from_seed(4);
        let a = DMatrix::from_fn(3, 2, |_, _| rng.random_range(0.2..1.0));
        let pr = poisson_problem(a, DVector::from_vec(vec![1.0, 2.0]), Domain::AllReals);
        let y = pr.sample_data(&mut rng).unwrap().map(|v| v + 0.05);
        let h = 1e-6;
        for _ in 0..50 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(0.5..3.0));
            let (_, g, hess) = pr.h_value_grad_hess(&y, &x).unwrap();
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (pr.h_value(&y, &xp) - pr.h_value(&y, &xm)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
                let gp = pr.h_value_grad_hess(&y, &xp).unwrap().1;
                let gm = pr.h_value_grad_hess(&y, &xm).unwrap().1;
                for j in 0..2 {
                    let fd2 = (gp[j] - gm[j]) / (2.0 * h);
                    assert!((fd2 - hess[(j, i)]).abs() <= 1e-5 * hess[(j, i)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn exp_link_gradient_by_finite_differences() {
        let pr = GlipProblem::new(
            NoiseFamily::scaled_poisson(2).unwrap(),
            ForwardOperator::dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.0])).unwrap(),
            LinkMap::Exp,
            PriorModel::gaussian_diagonal(&[1.0, 1.0], 0.5).unwrap(),
            DVector::from_vec(vec![0.2, -0.1]),
            Domain::AllReals,
            0.05,
        )
        .unwrap();
        let y = DVector::from_vec(vec![1.2, 0.7]);
        let x = DVector::from_vec(vec![0.1, 0.3]);
        let (_, g, hess) = pr.h_value_grad_hess(&y, &x).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            assert_relative_eq!(g[i], (pr.h_value(&y, &xp) - pr.h_value(&y, &xm)) / (2.0 * h), max_relative = 1e-6);
            let gp = pr.h_value_grad_hess(&y, &xp).unwrap().1;
            let gm = pr.h_value_grad_hess(&y, &xm).unwrap().1;
            assert_relative_eq!(hess[(i, i)], (gp[i] - gm[i]) / (2.0 * h), max_relative = 1e-5);
        }
    }

    #[test]
    fn scalar_conjugate_map() {
        let pr = gaussian_problem(DMatrix::identity(1, 1), 0.1, 1.0);
        let y = DVector::from_element(1, 1.0);
        let x = pr.map_estimate(&y, &DVector::zeros(1), 1e-12).unwrap();
        assert_relative_eq!(x[0], 10.0 / 11.0, epsilon = 1e-12);
        let (_, g, _) = pr.h_value_grad_hess(&y, &x).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn exact_data_without_penalty_recovers_truth() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.3, 1.0, 0.5, 0.5]);
        let mut pr = poisson_problem(a, DVector::from_vec(vec![1.0, 2.0]), Domain::AllReals);
        pr.prior = pr.prior.with_gamma(1e200).unwrap();
        assert!(pr.nu() < 1e-300);
        let y = pr.y_exact().unwrap();
        let x = pr.map_estimate(&y, &DVector::from_vec(vec![1.5, 1.5]), 1e-12).unwrap();
        assert!((x - &pr.x_true).norm() < 1e-9);
    }

    #[test]
    fn ill_posed_without_prior_is_an_error() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let mut pr = gaussian_problem(a, 0.1, 1.0);
        pr.prior = pr.prior.with_gamma(1e200).unwrap();
        assert_eq!(pr.nu(), 0.0);
        let y = DVector::from_element(1, 1.0);
        let err = pr.map_estimate(&y, &DVector::zeros(2), 1e-10).unwrap_err();
        assert!(err.to_string().contains("nu > 0"), "{err}");
    }

    #[test]
    fn boundary_map_is_exactly_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        let pr = poisson_problem(a, DVector::zeros(2), Domain::NonNegOrthant);
        let y = pr.sample_data(&mut Stream::from_seed(1)).unwrap();
        assert_eq!(y, DVector::zeros(2));
        for init in [DVector::zeros(2), DVector::from_vec(vec![0.3, 1.0])] {
            let x = pr.map_estimate(&y, &init, 1e-10).unwrap();
            assert_eq!(x, DVector::zeros(2));
        }
    }

    #[test]
    fn map_is_a_fixed_point() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.3, 1.0, 0.5, 0.5]);
        let pr = poisson_problem(a, DVector::from_vec(vec![1.0, 2.0]), Domain::AllReals);
        let y = pr.sample_data(&mut Stream::from_seed(2)).unwrap();
        let first = pr.map_estimate_traced(&y, &pr.x_true, 1e-10).unwrap();
        let again = pr.map_estimate_traced(&y, &first.x, 1e-10).unwrap();
        assert!(again.iterations <= 2);
    }

    #[test]
    fn barrier_map_for_shifted_exponential() {
        let pr = GlipProblem::new(
            NoiseFamily::shifted_exponential(vec![1.0, 1.0]).unwrap(),
            ForwardOperator::dense(DMatrix::identity(2, 2)).unwrap(),
            LinkMap::Identity,
            PriorModel::gaussian_diagonal(&[1.0, 1.0], 1.0).unwrap(),
            DVector::zeros(2),
            Domain::NonNegOrthant,
            0.01,
        )
        .unwrap();
        let y = DVector::from_vec(vec![0.02, 0.05]);
        let x = pr.map_estimate(&y, &DVector::from_element(2, 0.01), 1e-10).unwrap();
        // h = sum (y - x) + nu |x|^2 / 2 is minimised at the upper support edge
        assert!((x - &y).amax() < 1e-8);
    }

    #[test]
    fn laplace_scalar_objects() {
        let pr = gaussian_problem(DMatrix::identity(3, 3), 0.01, 1.0);
        let star = pr.solve_x_star(1e-10).unwrap();
        let y = pr.y_exact().unwrap();
        let s = pr.laplace_summary(&y, &star).unwrap();
        assert!((&s.h_nu - DMatrix::identity(3, 3) * 1.01).norm() < 1e-14);
        let tr = linalg::sym_inverse(&s.h_nu, "h").unwrap().trace();
        assert_relative_eq!(tr, 3.0 / 1.01, epsilon = 1e-13);
        let (_, g, _) = pr.prior.grad_hess(&star.x_star).unwrap();
        let expect = linalg::sym_inverse(&s.h, "h").unwrap() * g * pr.nu();
        assert!((&s.x0 - expect).norm() < 1e-14);
    }

    #[test]
    fn laplace_block_determinants_match_eigen_oracle() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, 1.0]);
        let pr = gaussian_problem(a.clone(), 0.01, 0.5);
        let pr = GlipProblem {
            prior: PriorModel::gaussian_diagonal(&[1.0, 2.0, 3.0], 0.5).unwrap(),
            ..pr
        };
        let star = pr.solve_x_star(1e-10).unwrap();
        let s = pr.laplace_summary(&pr.y_exact().unwrap(), &star).unwrap();
        // Omega00 has the nonzero eigenvalues of A^T A; B11 = n^T B n for the unit null vector
        let eig = (a.transpose() * &a).symmetric_eigen().eigenvalues;
        let prod: f64 = eig.iter().filter(|e| **e > 1e-10).product();
        assert_relative_eq!(s.det_omega00, prod, max_relative = 1e-8);
        let null = DVector::from_vec(vec![0.5, -1.0, 1.0]).normalize();
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_relative_eq!(s.det_b11, null.dot(&(b * &null)), max_relative = 1e-8);
        assert_eq!((s.p0, s.p1), (2, 1));
    }

    #[test]
    fn curvature_floor_on_ill_posed_problems() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        for gamma in [1.0, 0.3, 0.1] {
            let pr = gaussian_problem(a.clone(), 0.01, gamma);
            let star = pr.solve_x_star(1e-10).unwrap();
            let s = pr.laplace_summary(&pr.y_exact().unwrap(), &star).unwrap();
            let min = linalg::min_eigenvalue(&s.h_nu);
            assert!(min >= pr.nu() * 1.0 - 1e-12);
        }
    }
}
