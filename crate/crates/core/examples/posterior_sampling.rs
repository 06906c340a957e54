//! The three posterior samplers picked by `sample_posterior`.

use glip::forward::{ForwardOperator, LinkMap};
use glip::infer::{sample_posterior, Domain, GlipProblem, SamplerConfig};
use glip::noise::NoiseFamily;
use glip::prior::PriorModel;
use glip::rng::Stream;
use nalgebra::{DMatrix, DVector};

fn summarize(name: &str, problem: &GlipProblem, rng: &mut Stream) -> glip::Result<()> {
    let y = problem.sample_data(rng)?;
    let post = sample_posterior(problem, &y, 5000, rng, &SamplerConfig::default(), None)?;
    let n = post.draws.nrows() as f64;
    let mean: Vec<f64> = post.draws.column_iter().map(|c| c.sum() / n).collect();
    println!("{name}: method {:?}, acceptance {:?}", post.method, post.acceptance_rate);
    println!("  posterior mean {mean:.4?} vs x_true {:.4?}", problem.x_true.as_slice());
    Ok(())
}

fn main() -> glip::Result<()> {
    let mut rng = Stream::from_seed(3);
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
    let x = DVector::from_vec(vec![1.0, 0.5]);
    let prior = PriorModel::gaussian_diagonal(&[1.0, 1.0], 1.0)?;

    let conjugate = GlipProblem::new(
        NoiseFamily::gaussian(vec![1.0, 1.0])?,
        ForwardOperator::dense(a.clone())?,
        LinkMap::Identity,
        prior.clone(),
        x.clone(),
        Domain::AllReals,
        1e-2,
    )?;
    summarize("gaussian / gaussian", &conjugate, &mut rng)?;

    let diagonal = GlipProblem::new(
        NoiseFamily::scaled_poisson(2)?,
        ForwardOperator::dense(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])))?,
        LinkMap::Identity,
        prior.clone(),
        x.clone(),
        Domain::AllReals,
        1e-2,
    )?;
    summarize("poisson, diagonal operator", &diagonal, &mut rng)?;

    let coupled = GlipProblem::new(
        NoiseFamily::scaled_poisson(2)?,
        ForwardOperator::dense(a)?,
        LinkMap::Identity,
        prior,
        x,
        Domain::AllReals,
        1e-2,
    )?;
    summarize("poisson, coupled operator", &coupled, &mut rng)?;
    Ok(())
}
