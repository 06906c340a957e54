//! Empirical and analytic Ky Fan radii, the fixed point and the lifting combination.

use glip::metrics;
use glip::rng::Stream;
use rand_distr::{Distribution, Normal};

fn main() -> glip::Result<()> {
    let mut rng = Stream::from_seed(11);
    for tau in [1e-2, 1e-3, 1e-4] {
        let normal = Normal::new(0.0, f64::sqrt(tau)).unwrap();
        let d: Vec<f64> = (0..50_000).map(|_| f64::abs(normal.sample(&mut rng))).collect();
        let emp = metrics::kyfan_empirical(&d)?;
        println!(
            "N(0, tau) tau={tau:e}: empirical {:.5} (+- {:.1e}), bound {:.5}, sqrt(tau log 1/tau) {:.5}",
            emp.epsilon,
            emp.standard_error_hint,
            metrics::kyfan_bound_gaussian(tau)?,
            (tau * (1.0 / tau).ln()).sqrt()
        );
    }
    println!("poisson bound, mu = (1, 4), tau = 1e-3: {:.5}", metrics::kyfan_bound_poisson(&[1.0, 4.0], 1e-3)?);
    for a in [0.3, 1e-2, 1e-5, 1e-9] {
        let z = metrics::kyfan_fixed_point(a)?;
        println!("fixed point A={a:e}: z = {z:.6e}, z / (-A ln A) = {:.4}", z / (-a * a.ln()));
    }
    println!("lifting: max(rho + P(Omega2), Phi1(rho)) = {}", metrics::lifting_combine(0.02, 0.01, 0.003));
    Ok(())
}
