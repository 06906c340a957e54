//! Dense, spectral and grid operators with their range/null-space split.

use glip::forward::{ForwardOperator, Kernel, LinkMap};
use nalgebra::{DMatrix, DVector};

fn main() -> glip::Result<()> {
    let rank2 = DMatrix::from_row_slice(3, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    let dense = ForwardOperator::dense(rank2)?;
    let split = dense.split();
    println!("dense 3x4: ||A|| = {:.4}, rank {} + null {}", dense.norm(), split.p0, split.p1);
    println!("singular values {:?}", split.singular_values);

    let spectral = ForwardOperator::spectral(1.0, 6)?;
    println!("spectral alpha=1: diagonal {:?}", spectral.diagonal().unwrap().as_slice());

    let grid = ForwardOperator::grid(Kernel::Volterra, 8, 4)?;
    let x = DVector::from_element(4, 1.0);
    println!("volterra 8x4 applied to ones: {:?}", grid.apply(&x)?.as_slice());

    let link = LinkMap::Exp;
    let (g, g1, g2) = link.eval(0.3);
    println!("exp link at 0.3: G = {g:.4}, G' = {g1:.4}, G'' = {g2:.4}, inverse {:.4}", link.inverse(g)?);
    Ok(())
}
