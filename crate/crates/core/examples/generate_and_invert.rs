//! Euler generation from noise and forward inversion back to noise, with
//! the round-trip error shrinking as the step count grows.
//!
//! cargo run --release --example generate_and_invert

use anchorflow::flow::{euler_generate, euler_invert, make_grid_and_schedule, ScheduleKind};
use anchorflow::gmm::EditTask;
use anchorflow::metrics::energy_distance;
use anchorflow::rng::Stream;
use anchorflow::{Condition, Latent};

fn main() -> anchorflow::Result<()> {
    let task = EditTask::paired_two_mode();
    println!("{:>5} {:>18} {:>22}", "T", "energy distance", "mean round-trip error");
    for steps in [5, 10, 25, 50, 100] {
        let (grid, sched) = make_grid_and_schedule(steps, ScheduleKind::Linear)?;
        let mut noise = Stream::new(11);
        let mut generated = Vec::new();
        let mut round_trip = 0.0;
        for _ in 0..2000 {
            let n = noise.normal_latent(2);
            let x = euler_generate(&task, Condition::Source, 1.0, &n, &grid, &sched)?;
            round_trip += euler_invert(&task, Condition::Source, 1.0, &x, &grid, &sched)?.distance(&n) / 2000.0;
            generated.push(x);
        }
        let truth: Vec<Latent> = task.source().sample_n(2000, &mut Stream::new(12));
        println!("{steps:>5} {:>18.5} {round_trip:>22.5}", energy_distance(&generated, &truth)?);
    }
    Ok(())
}
