//! Compares the Jacobian-free alignment gradient with the exact one (target
//! Jacobian by central differences) along an anchor-aligned editing run,
//! and writes the per-step cosine similarity to CSV.
//!
//! cargo run --release --example jacobian_free_diagnostic -- [out.csv]

use std::fmt::Write as _;

use anchorflow::anchor::{anchor_gradient_exact, GuidanceScales};
use anchorflow::editing::{edit, EditConfig};
use anchorflow::gmm::EditTask;
use anchorflow::rng::Stream;

fn main() -> anchorflow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "jacobian_free.csv".into());
    let task = EditTask::paired_two_mode();
    let cfg = EditConfig::default();
    let scales = GuidanceScales { source: cfg.s_src, target: cfg.s_tar };
    let mut csv = String::from("sample,step,t,cosine,norm_ratio\n");
    let mut rng = Stream::new(5);
    let mut total = 0.0;
    let mut min_cosine = f64::INFINITY;
    let mut ratio_total = 0.0;
    let mut count = 0;
    for sample in 0..20u64 {
        let x_src = task.source().sample(&mut rng);
        let run = edit(&task, &cfg, &x_src, sample)?;
        for step in &run.trajectory {
            let rep = &step.reps[0];
            let exact = anchor_gradient_exact(&task, &step.x_fe, &rep.x_src_t, &x_src, step.t, scales, 1e-5)?;
            let approx = &rep.direction;
            let denom = exact.norm() * approx.norm();
            let cosine = if denom > 0.0 { exact.dot(approx) / denom } else { 1.0 };
            let ratio = if exact.norm() > 0.0 { approx.norm() / exact.norm() } else { f64::NAN };
            writeln!(csv, "{sample},{},{},{cosine},{ratio}", step.index, step.t).unwrap();
            total += cosine;
            min_cosine = min_cosine.min(cosine);
            ratio_total += ratio;
            count += 1;
        }
    }
    std::fs::write(&out, csv)?;
    println!(
        "{count} steps: mean cosine {:.6}, min cosine {min_cosine:.6}, mean norm ratio {:.4}",
        total / count as f64,
        ratio_total / count as f64
    );
    println!("per-step values in {out}");
    Ok(())
}
