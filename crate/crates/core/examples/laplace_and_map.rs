//! MAP estimate and Laplace summary for a Poisson problem with an exponential link.

use glip::forward::{ForwardOperator, LinkMap};
use glip::infer::{Domain, GlipProblem};
use glip::noise::NoiseFamily;
use glip::prior::{PriorModel, DEFAULT_TOL};
use glip::rng::Stream;
use nalgebra::{DMatrix, DVector};

fn main() -> glip::Result<()> {
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.3, 1.0, 0.5, 0.5]);
    let problem = GlipProblem::new(
        NoiseFamily::scaled_poisson(3)?,
        ForwardOperator::dense(a)?,
        LinkMap::Exp,
        PriorModel::gaussian_diagonal(&[1.0, 1.0], 1.0)?,
        DVector::from_vec(vec![0.4, -0.2]),
        Domain::AllReals,
        1e-3,
    )?;
    let y = problem.sample_data(&mut Stream::from_seed(7))?;
    let star = problem.solve_x_star(DEFAULT_TOL)?;
    let s = problem.laplace_summary(&y, &star)?;
    println!("y = {:?}", y.as_slice());
    println!("x_star = {:?}", s.x_star.as_slice());
    println!("x_map  = {:?}", s.x_map.as_slice());
    println!("laplace mean = {:?}", s.laplace_mean.as_slice());
    println!("laplace covariance = {:.3e}", s.laplace_cov);
    println!("rank split p0 = {}, p1 = {}", s.p0, s.p1);
    Ok(())
}
