//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.

use std::time::{Duration, Instant};

use glip::bounds::{self, ProblemClass};
use glip::forward::{ForwardOperator, LinkMap};
use glip::harness::{self, RunOptions, Scenario, ScenarioConfig};
use glip::infer::{sample_posterior, Domain, GlipProblem, SamplerConfig};
use glip::metrics;
use glip::noise::NoiseFamily;
use glip::prior::{PriorModel, DEFAULT_TOL};
use glip::rng::Stream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use statrs::function::erf::erfc;

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

/// Six log-spaced points from `hi` down to `lo`.
fn grid6(hi: f64, lo: f64) -> Vec<f64> {
    ScenarioConfig::log_grid(hi, lo, 6)
}

fn slope_config(scenario: Scenario, taus: Vec<f64>) -> ScenarioConfig {
    ScenarioConfig {
        replicates: 200,
        inner_draws: 2000,
        seed: Some(20240611),
        ..ScenarioConfig::new(scenario, taus)
    }
}

struct SlopeOutcome {
    slope: f64,
    spearman: f64,
    pass: bool,
    elapsed: Duration,
    result: harness::ScenarioResult,
}

fn slope_run(scenario: Scenario, taus: Vec<f64>, predicted: f64, tol: f64) -> SlopeOutcome {
    let start = Instant::now();
    let result = harness::run_scenario(&slope_config(scenario, taus), RunOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let fit = harness::fit_slope(&result.rows).unwrap();
    let verdict = harness::compare(&fit, predicted, tol);
    let taus: Vec<f64> = result.rows.iter().map(|r| r.tau).collect();
    let kf: Vec<f64> = result.rows.iter().map(|r| r.kf_posterior_empirical).collect();
    SlopeOutcome { slope: fit.slope, spearman: harness::spearman(&taus, &kf), pass: verdict.pass, elapsed, result }
}

fn random_spd(p: usize, rng: &mut Stream) -> DMatrix<f64> {
    let m = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(p, p) * 0.5
}

#[test]
fn criterion_01_conjugate_oracle() {
    let start = Instant::now();
    let mut rng = Stream::from_seed(101);
    let draws = 100_000;
    let mut worst_moment = 0.0_f64;
    let mut worst_closed = 0.0_f64;
    for case in 0..20 {
        let p = rng.random_range(1..=10usize);
        let n = p + rng.random_range(0..=3usize);
        let a = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.5..1.5));
        let variances: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..2.0)).collect();
        let b = random_spd(p, &mut rng);
        let m0 = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let x_true = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
        let tau = 10f64.powf(rng.random_range(-4.0..-1.0));
        let gamma = rng.random_range(0.5..2.0);
        let problem = GlipProblem::new(
            NoiseFamily::gaussian(variances.clone()).unwrap(),
            ForwardOperator::dense(a.clone()).unwrap(),
            LinkMap::Identity,
            PriorModel::gaussian(b.clone(), m0.clone(), gamma).unwrap(),
            x_true,
            Domain::AllReals,
            tau,
        )
        .unwrap();
        let y = problem.sample_data(&mut rng).unwrap();

        // closed form: precision (A' S^-1 A + nu B) / tau
        let nu = tau / (gamma * gamma);
        let s_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, variances.iter().map(|v| 1.0 / v)));
        let k = a.transpose() * &s_inv * &a + &b * nu;
        let k_inv = k.clone().try_inverse().unwrap();
        let mean = &k_inv * (a.transpose() * &s_inv * &y + &b * &m0 * nu);
        let cov = &k_inv * tau;

        let star = problem.solve_x_star(DEFAULT_TOL).unwrap();
        let summary = problem.laplace_summary(&y, &star).unwrap();
        let rel = |u: f64, v: f64| (u - v).abs() / (1.0 + v.abs());
        for i in 0..p {
            worst_closed = worst_closed.max(rel(summary.laplace_mean[i], mean[i]));
            for j in 0..p {
                worst_closed = worst_closed.max(rel(summary.laplace_cov[(i, j)], cov[(i, j)]) / tau);
            }
        }

        let post = sample_posterior(&problem, &y, draws, &mut rng, &SamplerConfig::default(), None).unwrap();
        let nd = draws as f64;
        let emp_mean = DVector::from_fn(p, |j, _| post.draws.column(j).sum() / nd);
        for i in 0..p {
            let se = (cov[(i, i)] / nd).sqrt();
            worst_moment = worst_moment.max((emp_mean[i] - mean[i]).abs() / se);
            for j in 0..=i {
                let c: f64 = post
                    .draws
                    .column(i)
                    .iter()
                    .zip(post.draws.column(j).iter())
                    .map(|(u, v)| (u - emp_mean[i]) * (v - emp_mean[j]))
                    .sum::<f64>()
                    / (nd - 1.0);
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / nd).sqrt();
                worst_moment = worst_moment.max((c - cov[(i, j)]).abs() / se);
            }
        }
        assert!(case < 20);
    }
    let elapsed = start.elapsed();
    let pass = worst_closed < 1e-10 && worst_moment < 5.0 && within(elapsed, 30.0);
    report(
        1,
        pass,
        &format!("(laplace max rel err {worst_closed:.2e}, sampler max |z| {worst_moment:.2}, {:.1}s)", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn criterion_02_kyfan_analytic_bounds() {
    let start = Instant::now();
    let mut rng = Stream::from_seed(202);
    let draws = 100_000;
    let mut ok = true;
    let mut notes = Vec::new();
    for &tau in &[1e-2_f64, 1e-3, 1e-4] {
        for &p in &[1usize, 5] {
            let normal = Normal::new(0.0, tau.sqrt()).unwrap();
            let d: Vec<f64> = (0..draws)
                .map(|_| (0..p).map(|_| { let z: f64 = normal.sample(&mut rng); z * z }).sum::<f64>().sqrt())
                .collect();
            let emp = metrics::kyfan_empirical(&d).unwrap().epsilon;
            let bound = metrics::kyfan_bound_gaussian(tau * p as f64).unwrap();
            ok &= emp <= bound;
            if tau <= 1e-3 {
                let ratio = emp / (tau * (1.0 / tau).ln()).sqrt();
                ok &= (0.6..=1.4).contains(&ratio);
                notes.push(format!("N p={p} tau={tau:e} ratio={ratio:.3}"));
            }
        }
        for mu in [vec![1.0], vec![1.0, 4.0]] {
            let d: Vec<f64> = (0..draws)
                .map(|_| {
                    mu.iter()
                        .map(|m| {
                            let k: f64 = Poisson::new(m / tau).unwrap().sample(&mut rng);
                            (tau * k - m).powi(2)
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let emp = metrics::kyfan_empirical(&d).unwrap().epsilon;
            let bound = metrics::kyfan_bound_poisson(&mu, tau).unwrap();
            if emp > bound {
                notes.push(format!("Poisson mu={mu:?} tau={tau:e}: {emp} > {bound}"));
            }
            ok &= emp <= bound;
        }
    }
    let elapsed = start.elapsed();
    let pass = ok && within(elapsed, 120.0);
    report(2, pass, &format!("({}; {:.1}s)", notes.join(", "), elapsed.as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_03_fixed_point() {
    let start = Instant::now();
    let inv_e = (-1.0f64).exp();
    let grid = ScenarioConfig::log_grid(inv_e, 1e-9, 20);
    let mut max_residual = 0.0_f64;
    let mut in_range = true;
    let mut ratios = Vec::new();
    for &a in &grid {
        let z = metrics::kyfan_fixed_point(a).unwrap();
        max_residual = max_residual.max(((-z / a).exp() - z).abs());
        let ratio = z / (-a * a.ln());
        in_range &= ratio > 0.0 && ratio <= 1.0 + 1e-12;
        ratios.push((a, ratio));
    }
    // Asymptotic monotonicity: the ratio rises towards 1 as A decreases past its dip.
    let tail: Vec<f64> = ratios.iter().filter(|(a, _)| *a <= 1e-2).map(|(_, r)| *r).collect();
    let increasing = tail.windows(2).all(|w| w[1] > w[0]);
    let whole_grid = ratios.windows(2).all(|w| w[1].1 >= w[0].1);
    let elapsed = start.elapsed();
    let pass = max_residual < 1e-12 && in_range && increasing && within(elapsed, 1.0);
    report(
        3,
        pass,
        &format!(
            "(max residual {max_residual:.1e}, ratio at 1e-9 {:.4}, monotone for A <= 1e-2: {increasing}, monotone on whole grid: {whole_grid})",
            ratios.last().unwrap().1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_well_posed_slopes() {
    let taus = grid6(1e-2, 1e-5);
    let g = slope_run(Scenario::WellPosedGaussian, taus.clone(), 0.5, 0.08);
    let p = slope_run(Scenario::WellPosedPoisson, taus, 0.5, 0.08);
    // the empirical radius sits below the interior bound wherever the bound is valid
    let below = g.result.rows.iter().zip(&g.result.details).all(|(r, d)| {
        r.bound_overall.is_nan() || r.kf_posterior_empirical <= r.bound_overall + 3.0 * d.kf_posterior_stderr
    });
    let pass = g.pass
        && p.pass
        && g.spearman > 0.9
        && p.spearman > 0.9
        && below
        && within(g.elapsed, 300.0)
        && within(p.elapsed, 300.0);
    report(
        4,
        pass,
        &format!(
            "(gaussian slope {:.4} in {:.1}s, poisson slope {:.4} in {:.1}s, target 0.5 +- 0.08, below bound: {below})",
            g.slope,
            g.elapsed.as_secs_f64(),
            p.slope,
            p.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_ill_posed_slope() {
    let predicted = bounds::predicted_exponent(&ProblemClass::IllPosedInterior).unwrap();
    let o = slope_run(Scenario::IllPosedGaussian, grid6(1e-2, 1e-5), predicted, 0.08);
    let offsets_positive = o.result.rows.iter().all(|r| r.x_star_offset > 0.0);
    let pass = o.pass && o.spearman > 0.9 && offsets_positive && within(o.elapsed, 300.0);
    report(
        5,
        pass,
        &format!(
            "(slope {:.4}, target {predicted:.4} +- 0.08, x_star offset {:.4}, {:.1}s)",
            o.slope,
            o.result.rows[0].x_star_offset,
            o.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_boundary() {
    let start = Instant::now();
    let cfg = slope_config(Scenario::BoundaryPoisson, grid6(1e-2, 1e-5));
    let res = harness::run_scenario(&cfg, RunOptions::default()).unwrap();
    let exact = res.rows.iter().zip(&res.details).all(|(r, d)| {
        !r.failed && r.kf_data_empirical == 0.0 && d.data_max_abs_error == Some(0.0) && d.map_max_abs == Some(0.0)
    });
    let poisson_elapsed = start.elapsed();
    let e = slope_run(Scenario::BoundaryExponential, grid6(1e-2, 1e-5), 1.0, 0.12);
    let pass = exact && e.pass && within(poisson_elapsed, 300.0) && within(e.elapsed, 300.0);
    report(
        6,
        pass,
        &format!(
            "(poisson exact data and MAP on every replicate: {exact}, exponential slope {:.4} target 1 +- 0.12, {:.1}s)",
            e.slope,
            e.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_spectral_self_regularization() {
    let taus = grid6(1e-3, 1e-6);
    let a = slope_run(Scenario::SpectralPoisson { alpha: 1.0, beta: 2.0, kappa: 1.0, p: 100 }, taus.clone(), 0.5, 0.1);
    let b = slope_run(Scenario::SpectralPoisson { alpha: 1.0, beta: 1.0, kappa: 1.0, p: 100 }, taus, 0.4, 0.1);
    let pass = a.pass && b.pass && within(a.elapsed, 600.0) && within(b.elapsed, 600.0);
    report(
        7,
        pass,
        &format!(
            "(beta=2 slope {:.4} target 0.5 +- 0.1 in {:.1}s, beta=1 slope {:.4} target 0.4 +- 0.1 in {:.1}s)",
            a.slope,
            a.elapsed.as_secs_f64(),
            b.slope,
            b.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

/// Max of `exact / shape` over a branch grid at `nu * scale`.
fn knapik_max_ratio(points: &[(f64, f64, f64, f64)], scale: f64, n: usize) -> f64 {
    points
        .iter()
        .map(|&(a, m, v, nu)| {
            let (exact, shape) = bounds::knapik_sum(a, m, v, nu * scale, n);
            exact / shape
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_08_knapik_sum() {
    let start = Instant::now();
    let n = 2000;
    let lin = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
        (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1).max(1) as f64).collect()
    };
    let nus = ScenarioConfig::log_grid(1e-2, 1e-6, 5);
    let mut branches: Vec<(&str, Vec<(f64, f64, f64, f64)>)> = Vec::new();
    for (name, factors) in [("a < vm", lin(0.2, 0.8, 4)), ("a > vm", lin(1.25, 3.0, 4))] {
        let mut pts = Vec::new();
        for &m in &lin(1.0, 3.0, 5) {
            for &v in &lin(1.0, 3.0, 5) {
                for &f in &factors {
                    for &nu in &nus {
                        pts.push((f * v * m, m, v, nu));
                    }
                }
            }
        }
        branches.push((name, pts));
    }
    let mut pts = Vec::new();
    for &m in &lin(1.0, 3.0, 10) {
        for &v in &lin(0.5, 2.0, 10) {
            for &nu in &nus {
                pts.push((v * m, m, v, nu));
            }
        }
    }
    branches.push(("a = vm", pts));

    let mut ok = true;
    let mut notes = Vec::new();
    for (name, pts) in &branches {
        assert_eq!(pts.len(), 500);
        let base = knapik_max_ratio(pts, 1.0, n);
        let scaled = knapik_max_ratio(pts, 4.0, n);
        let change = (base / scaled).max(scaled / base);
        ok &= base.is_finite() && scaled.is_finite() && change < 10.0;
        notes.push(format!("{name}: max ratio {base:.3} -> {scaled:.3} with nu x4"));
    }
    let elapsed = start.elapsed();
    let pass = ok && within(elapsed, 10.0);
    report(8, pass, &format!("({}; {:.2}s)", notes.join(", "), elapsed.as_secs_f64()));
    assert!(pass);
}

/// Exact Ky Fan radius of `|N(0, s^2)|` at zero: root of `P(|Y| > e) = e`.
fn kyfan_half_normal(s: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erfc(mid / (s * std::f64::consts::SQRT_2)) > mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_09_lifting() {
    let start = Instant::now();
    let mut rng = Stream::from_seed(909);
    let draws = 20_000;
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for _ in 0..50 {
        // Y ~ N(0, s^2) against 0; Phi(y) = L y on |y| <= c and 5 + y outside.
        let s = 10f64.powf(rng.random_range(-3.0..-1.0));
        let lip = rng.random_range(0.3..3.0);
        let c = s * rng.random_range(1.0..4.0);
        let rho = kyfan_half_normal(s);
        let p_omega2 = erfc(c / (s * std::f64::consts::SQRT_2));
        let bound = metrics::lifting_combine(lip * rho, rho, p_omega2);
        let normal = Normal::new(0.0, s).unwrap();
        let d: Vec<f64> = (0..draws)
            .map(|_| {
                let y: f64 = normal.sample(&mut rng);
                if y.abs() <= c { (lip * y).abs() } else { (5.0 + y).abs() }
            })
            .collect();
        let est = metrics::kyfan_empirical(&d).unwrap();
        let slack = est.epsilon - (bound + 3.0 * est.standard_error_hint);
        worst = worst.max(slack);
        ok &= slack <= 0.0;
    }
    let elapsed = start.elapsed();
    let pass = ok && within(elapsed, 60.0);
    report(9, pass, &format!("(max of empirical - bound - 3 se: {worst:.3e}, {:.1}s)", elapsed.as_secs_f64()));
    assert!(pass);
}

fn all_scenarios() -> Vec<Scenario> {
    let custom: harness::ProblemSpec = serde_json::from_str(
        r#"{"noise":{"kind":"gaussian","variances":[1.0,0.5,2.0]},
            "operator":{"kind":"dense","matrix":[[1.0,0.0],[0.0,1.0],[0.5,0.5]]},
            "prior":{"kind":"gaussian","precision":[1.0,2.0],"gamma":1.0},
            "x_true":[0.3,-0.7]}"#,
    )
    .unwrap();
    vec![
        Scenario::WellPosedGaussian,
        Scenario::IllPosedGaussian,
        Scenario::WellPosedPoisson,
        Scenario::IllPosedPoisson,
        Scenario::GridVolterra { n: 30, p: 10 },
        Scenario::SpectralPoisson { alpha: 1.0, beta: 2.0, kappa: 1.0, p: 40 },
        Scenario::SpectralGaussian { alpha: 1.0, beta: 1.0, kappa: 1.0, p: 40 },
        Scenario::BoundaryPoisson,
        Scenario::BoundaryExponential,
        Scenario::Custom { problem: custom },
    ]
}

#[test]
fn criterion_10_determinism() {
    let mut ok = true;
    let mut names = Vec::new();
    for scenario in all_scenarios() {
        let cfg = ScenarioConfig {
            replicates: 12,
            inner_draws: 150,
            bootstrap: 20,
            seed: Some(77),
            ..ScenarioConfig::new(scenario, vec![1e-2, 1e-3])
        };
        let one = harness::run_scenario(&cfg, RunOptions { parallel: Some(1), timing: false }).unwrap();
        let three = harness::run_scenario(&cfg, RunOptions { parallel: Some(3), timing: false }).unwrap();
        let same = one.to_csv_string().unwrap() == three.to_csv_string().unwrap()
            && one.sidecar_json().unwrap() == three.sidecar_json().unwrap();
        ok &= same;
        names.push(format!("{}={}", cfg.label(), same));
    }
    report(10, ok, &format!("({})", names.join(", ")));
    assert!(ok);
}
