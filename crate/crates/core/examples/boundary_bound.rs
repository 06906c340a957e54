//! Contraction at the corner of the orthant, where the rate is linear in tau log(1/tau).

use glip::bounds::{self, BoundOptions};
use glip::harness::{self, Scenario};
use glip::rng::Stream;

fn main() -> glip::Result<()> {
    let mut rng = Stream::from_seed(2);
    for scenario in [Scenario::BoundaryPoisson, Scenario::BoundaryExponential] {
        println!("{scenario:?}");
        for tau in [1e-2, 1e-3, 1e-4] {
            let problem = harness::build_scenario(&scenario, tau, 1.0)?;
            let rho = harness::analytic_data_bound(&problem, 1.0);
            let rho = if rho.is_nan() { 0.0 } else { rho };
            let r = bounds::boundary_bound(&problem, rho, 0.1, BoundOptions::default(), &mut rng)?;
            println!(
                "  tau {tau:e}: b_min {:.4}, main term {:.4e}, overall {:?}, tau log(1/tau) {:.4e}",
                r.diagnostics.b_min.unwrap_or(f64::NAN),
                r.main_term.unwrap_or(f64::NAN),
                r.overall,
                tau * (1.0 / tau).ln()
            );
        }
    }
    Ok(())
}
