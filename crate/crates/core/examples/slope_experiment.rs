//! A full tau sweep: posterior Ky Fan radii, bounds and the fitted log-log slope.
//!
//! Pass a replicate count as the first argument to trade accuracy for speed.

use glip::bounds::{self, ProblemClass};
use glip::harness::{self, RunOptions, Scenario, ScenarioConfig};

fn main() -> glip::Result<()> {
    let replicates = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let config = ScenarioConfig {
        replicates,
        inner_draws: 1000,
        seed: Some(1),
        ..ScenarioConfig::new(Scenario::IllPosedGaussian, ScenarioConfig::log_grid(1e-2, 1e-5, 6))
    };
    let result = harness::run_scenario(&config, RunOptions::default())?;
    println!("tau        kf_post    bound      x_star_offset");
    for r in &result.rows {
        println!("{:<10.1e} {:<10.5} {:<10.5} {:.4}", r.tau, r.kf_posterior_empirical, r.bound_overall, r.x_star_offset);
    }
    let fit = harness::fit_slope(&result.rows)?;
    let predicted = bounds::predicted_exponent(&ProblemClass::IllPosedInterior)?;
    let verdict = harness::compare(&fit, predicted, 0.08);
    println!(
        "slope {:.4} +- {:.4} against {} (r^2 {:.4}): {}",
        fit.slope,
        fit.slope_stderr,
        fit.regressor,
        fit.r_squared,
        if verdict.pass { "pass" } else { "fail" }
    );
    print!("{}", result.to_csv_string()?);
    Ok(())
}
