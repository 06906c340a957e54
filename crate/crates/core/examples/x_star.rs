//! The identified point: the prior-minimal element of the data-consistent affine set.

use glip::forward::{ForwardOperator, LinkMap};
use glip::infer::{Domain, GlipProblem};
use glip::noise::NoiseFamily;
use glip::prior::{PriorModel, DEFAULT_TOL};
use nalgebra::{DMatrix, DVector};

fn main() -> glip::Result<()> {
    let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    let x_true = DVector::from_vec(vec![1.0, 2.0, -0.5]);
    for domain in [Domain::AllReals, Domain::NonNegOrthant] {
        let truth = if domain == Domain::AllReals { x_true.clone() } else { x_true.abs() };
        let problem = GlipProblem::new(
            NoiseFamily::gaussian(vec![1.0, 1.0])?,
            ForwardOperator::dense(a.clone())?,
            LinkMap::Identity,
            PriorModel::gaussian_diagonal(&[1.0, 1.0, 1.0], 1.0)?,
            truth.clone(),
            domain,
            1e-3,
        )?;
        let star = problem.solve_x_star(DEFAULT_TOL)?;
        println!("{domain:?}: x_true {:?}", truth.as_slice());
        println!("  x_star {:?}, residual {:.1e}, interior {}", star.x_star.as_slice(), star.residual, star.interior);
        println!("  A x_star - A x_true = {:?}", (&a * (&star.x_star - &truth)).as_slice());
    }
    Ok(())
}
