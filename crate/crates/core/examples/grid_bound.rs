//! Grid-scaled bound for a Volterra discretisation with `tau = 1/n`.
//!
//! On square grids the bound tracks `(log n / n)^(1/3)`. With `p` held fixed
//! the data term `2 rho_tilde sqrt(n/p)` does not shrink.

use glip::bounds::{self, BoundOptions};
use glip::harness::{self, Scenario};
use glip::rng::Stream;

fn report(n: usize, p: usize, rng: &mut Stream) -> glip::Result<()> {
    let tau = 1.0 / n as f64;
    let gamma = bounds::grid_gamma_squared(n).sqrt();
    let problem = harness::build_scenario(&Scenario::GridVolterra { n, p }, tau, gamma)?;
    let rho_tilde = harness::analytic_data_bound(&problem, (n as f64).sqrt());
    let r = bounds::grid_bound(&problem, n, p, rho_tilde, 0.0, BoundOptions::default(), rng)?;
    let rate = ((n as f64).ln() / n as f64).powf(1.0 / 3.0);
    match r.overall {
        Some(b) => println!("n = {n:>6}, p = {p:>3}: overall {b:.4e}, ratio to (log n / n)^(1/3) {:.3}", b / rate),
        None => println!("n = {n:>6}, p = {p:>3}: no bound"),
    }
    println!(
        "    data {:.3e}, variance {:?}, random bias {:?}, prior bias {:?}",
        r.data_term, r.variance_term, r.bias_random, r.prior_bias
    );
    if let Some(why) = &r.invalid_reason {
        println!("    invalid: {why}");
    }
    for f in &r.flags {
        println!("    flag: {f}");
    }
    Ok(())
}

fn main() -> glip::Result<()> {
    let mut rng = Stream::from_seed(4);
    for n in [50usize, 200, 800] {
        report(n, n, &mut rng)?;
    }
    report(4_000, 10, &mut rng)
}
