//! Regime classification and predicted rates for diagonal problems.

use glip::bounds::{self, ProblemClass, SpectralSpec};

fn main() -> glip::Result<()> {
    let tau = 1e-4;
    for (alpha, beta, kappa) in [(1.0, 2.0, 1.0), (1.0, 1.0, 1.0), (0.5, 0.5, 0.5), (2.0, 3.0, 1.0)] {
        let spec = SpectralSpec::poisson(alpha, beta, kappa, 200, tau, 1.0);
        let nu = spec.nu_schedule(tau);
        let rate = bounds::spectral_rate(&SpectralSpec { nu, ..spec })?;
        println!(
            "alpha {alpha} beta {beta} kappa {kappa}: s = {:.2}, regime {:?}, m = {:.2}, exponent {:.4}, nu = {nu:.3e}, bound {:.4e}",
            spec.s, rate.regime, rate.m, rate.exponent, rate.bound_value
        );
    }
    for name in ["well-posed-interior", "ill-posed-interior", "boundary-well-posed"] {
        let class = ProblemClass::parse(name).unwrap();
        println!("{name}: exponent {:.4}", bounds::predicted_exponent(&class)?);
    }
    let (exact, shape) = bounds::knapik_sum(1.0, 2.0, 1.0, 1e-4, 10_000);
    println!("knapik sum a=1 m=2 v=1 nu=1e-4: exact {exact:.4e}, shape {shape:.4e}");
    Ok(())
}
