//! Interior contraction bound and its components along a tau sweep.

use glip::bounds::{self, BoundOptions};
use glip::harness::{self, Scenario, ScenarioConfig};
use glip::rng::Stream;

fn main() -> glip::Result<()> {
    let config = ScenarioConfig::new(Scenario::WellPosedPoisson, vec![1e-3]);
    let mut rng = Stream::from_seed(5);
    println!("tau        rho_data   lambda~    bias_rand  bias_prior variance   overall");
    for tau in [1e-3, 1e-4, 1e-5, 1e-6] {
        let problem = config.build_problem(tau)?;
        let rho = harness::analytic_data_bound(&problem, 1.0);
        let delta = bounds::delta_schedule(tau, 2.0, 1.0)?;
        let opts = BoundOptions { evaluate_tail: true, ..BoundOptions::default() };
        let r = bounds::interior_bound(&problem, rho, delta, opts, &mut rng)?;
        println!(
            "{tau:<10.1e} {rho:<10.4} {:<10.4} {:<10.4} {:<10.4} {:<10.4} {:?}",
            r.diagnostics.lambda_tilde.unwrap_or(f64::NAN),
            r.bias_random.unwrap_or(f64::NAN),
            r.prior_bias.unwrap_or(f64::NAN),
            r.variance_term.unwrap_or(f64::NAN),
            r.overall,
        );
        for f in &r.flags {
            println!("    flag: {f}");
        }
    }
    Ok(())
}
