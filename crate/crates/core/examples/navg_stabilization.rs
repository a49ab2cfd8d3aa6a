//! Spread of the edit of one fixed source across noise seeds as more
//! directions are averaged per step.
//!
//! cargo run --release --example navg_stabilization

use anchorflow::editing::{edit, EditConfig, Method};
use anchorflow::gmm::EditTask;
use anchorflow::rng::Stream;
use anchorflow::Latent;

fn main() -> anchorflow::Result<()> {
    let task = EditTask::paired_two_mode();
    let x_src = task.source().sample(&mut Stream::new(909));
    println!("source ({:+.4}, {:+.4})", x_src[0], x_src[1]);
    println!("{:<11} {:>6} {:>10} {:>22}", "method", "n_avg", "spread", "mean edit");
    for method in [Method::FlowEdit, Method::AnchorFlow] {
        for n_avg in [1, 2, 4, 8, 16] {
            let edits = (0..64)
                .map(|seed| {
                    let cfg = EditConfig { method, n_avg, seed, ..EditConfig::default() };
                    edit(&task, &cfg, &x_src, 0).map(|r| r.edited)
                })
                .collect::<anchorflow::Result<Vec<Latent>>>()?;
            let mean = Latent::mean(&edits).unwrap();
            let spread = (edits.iter().map(|e| (e - &mean).norm_squared()).sum::<f64>() / 63.0).sqrt();
            println!("{:<11} {n_avg:>6} {spread:>10.5} {:>10.4} {:>10.4}", method.name(), mean[0], mean[1]);
        }
    }
    Ok(())
}
