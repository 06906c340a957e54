//! Log-likelihood derivatives, sampling and curvature constants of the noise families.

use glip::noise::NoiseFamily;
use glip::rng::Stream;
use nalgebra::DVector;

fn main() -> glip::Result<()> {
    let tau = 1e-2;
    let eta = DVector::from_vec(vec![0.5, 2.0]);
    let families = [
        ("gaussian", NoiseFamily::gaussian(vec![1.0, 0.5])?),
        ("scaled poisson", NoiseFamily::scaled_poisson(2)?),
        ("gamma(a=3)", NoiseFamily::gamma(3.0, 2)?),
        ("shifted exponential", NoiseFamily::shifted_exponential(vec![1.0, 2.0])?),
    ];
    let mut rng = Stream::from_seed(1);
    for (name, f) in &families {
        let (mean, var) = f.mean_variance(&eta, tau)?;
        let y = f.sample(&eta, tau, &mut rng)?;
        println!("{name}");
        println!("  mean {:?} variance {:?}", mean.as_slice(), var.as_slice());
        println!("  one draw {:?}, log density {:.4}", y.as_slice(), f.log_density(&y, &eta, tau)?);
        if f.is_canonical() {
            let d = f.canonical_derivs(0, eta[0])?;
            println!("  b'(eta0) = {:.4}, c'(eta0) = {:.4}, mean c'/b' = {:.4}", d.b1, d.c1, d.c1 / d.b1);
            let k = f.noise_constants(&eta, 0.05, 0.1, 1.0)?;
            println!("  M_f1 diag {:?}", k.m_f1.as_slice());
        }
    }
    Ok(())
}
