//! The optimal shared anchor of a series of source/target anchor pairs and
//! the reduced form of the objective at that anchor.
//!
//! cargo run --release --example anchor_identities

use anchorflow::anchor::{alignment_loss, optimal_anchor, reduced_objective, strong_objective, AnchorSeries};
use anchorflow::rng::Stream;
use anchorflow::Latent;

fn main() -> anchorflow::Result<()> {
    let mut rng = Stream::new(3);
    for len in [1, 4, 16, 64] {
        let sources: Vec<Latent> = (0..len).map(|_| rng.normal_latent(2)).collect();
        let targets: Vec<Latent> = (0..len).map(|_| rng.normal_latent(2).axpy(1.0, &Latent::from([2.0, 0.0]))).collect();
        let series = AnchorSeries::new(sources, targets)?;
        let a = optimal_anchor(&series);
        println!(
            "len {len:>2}: A* = ({:+.4}, {:+.4})  J(A*) = {:.10}  reduced = {:.10}  alignment = {:.6}",
            a[0],
            a[1],
            strong_objective(&series, &a)?,
            reduced_objective(&series),
            alignment_loss(&series)
        );
    }
    Ok(())
}
