//! Closed-form mixture velocity against the importance-sampling oracle.
//!
//! cargo run --release --example oracle_velocity

use anchorflow::gmm::{mc_velocity_oracle, EditTask};
use anchorflow::rng::Stream;
use anchorflow::Condition;

fn main() -> anchorflow::Result<()> {
    let task = EditTask::paired_two_mode();
    let mut rng = Stream::new(1);
    println!("{:>13} {:>7} {:>24} {:>24} {:>8} {:>9}", "cond", "t", "closed form", "monte carlo", "max z", "ess");
    for (i, t) in [0.1, 0.3, 0.5, 0.7, 0.9].into_iter().enumerate() {
        let cond = Condition::ALL[i % 3];
        let gmm = task.mixture(cond);
        let x = gmm.sample(&mut rng).scale(1.0 - t).axpy(t, &rng.normal_latent(2));
        let exact = gmm.marginal_velocity(&x, t)?;
        let mc = mc_velocity_oracle(gmm, &x, t, 100_000, &mut rng.fork(i as u64))?;
        let z = (0..2)
            .map(|j| (exact[j] - mc.mean[j]).abs() / mc.std_err[j])
            .fold(0.0, f64::max);
        println!(
            "{:>13} {t:>7.2} {:>11.5} {:>11.5} {:>11.5} {:>11.5} {z:>8.2} {:>9.0}",
            format!("{cond:?}").to_lowercase(),
            exact[0],
            exact[1],
            mc.mean[0],
            mc.mean[1],
            mc.ess
        );
    }
    Ok(())
}
