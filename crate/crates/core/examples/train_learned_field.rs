//! Trains the small velocity network on the paired two-mode task, reports
//! how close it gets to the exact field, and writes a checkpoint.
//!
//! cargo run --release --example train_learned_field -- [steps] [checkpoint]

use std::fs::File;
use std::io::BufWriter;

use anchorflow::flow::{euler_generate, make_grid_and_schedule, ScheduleKind};
use anchorflow::gmm::EditTask;
use anchorflow::metrics::energy_distance;
use anchorflow::mlp::{cfm_loss, oracle_loss, sample_batch, train_field, TrainConfig};
use anchorflow::rng::Stream;
use anchorflow::{Condition, Latent};

fn main() -> anchorflow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps = args.first().map(|s| s.parse().expect("steps")).unwrap_or(20_000);
    let task = EditTask::paired_two_mode();
    let cfg = TrainConfig { steps, ..Default::default() };

    let started = std::time::Instant::now();
    let report = train_field(&task, &cfg)?;
    println!("trained {steps} steps in {:.1?}", started.elapsed());
    for (i, w) in report.loss_trace.chunks(steps.max(10) / 10).enumerate() {
        println!("  window {i:2}: mean loss {:.4}", w.iter().sum::<f64>() / w.len() as f64);
    }

    let held_out = sample_batch(&task, 20_000, &mut Stream::new(99));
    println!(
        "held-out loss {:.4}, exact-field loss {:.4}",
        cfm_loss(&report.field, &held_out)?,
        oracle_loss(&task, &held_out)?
    );

    let mut probes = Stream::new(7);
    let mut mse = 0.0;
    for _ in 0..100 {
        let cond = Condition::ALL[(probes.next_u64() % 3) as usize];
        let t = 0.05 + 0.9 * probes.uniform();
        let x = task.mixture(cond).sample(&mut probes).scale(1.0 - t).axpy(t, &probes.normal_latent(2));
        let learned = report.field.eval(&x, t, cond)?;
        let exact = task.mixture(cond).marginal_velocity(&x, t)?;
        mse += (&learned - &exact).norm_squared() / 100.0;
    }
    println!("mean squared deviation from exact field at 100 probes: {mse:.4}");

    let (grid, sched) = make_grid_and_schedule(50, ScheduleKind::Linear)?;
    let mut noise = Stream::new(3);
    let mut truth = Stream::new(4);
    let generated: Vec<Latent> = (0..2000)
        .map(|_| euler_generate(&report.field, Condition::Target, 1.0, &noise.normal_latent(2), &grid, &sched))
        .collect::<anchorflow::Result<_>>()?;
    let reference = task.target().sample_n(2000, &mut truth);
    println!("energy distance to target mixture: {:.4}", energy_distance(&generated, &reference)?);

    if let Some(path) = args.get(1) {
        report.field.write_checkpoint(BufWriter::new(File::create(path)?))?;
        println!("checkpoint written to {path}");
    }
    Ok(())
}
