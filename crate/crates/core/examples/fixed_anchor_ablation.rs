//! Inversion-free editing with fresh noise per step, with one noise draw
//! reused at every step, and the anchor-aligned editor.
//!
//! cargo run --release --example fixed_anchor_ablation

use anchorflow::bench::{run_cells, summarize};
use anchorflow::config::BenchSpec;
use anchorflow::editing::{Method, NoiseMode};

fn main() -> anchorflow::Result<()> {
    let variants = [
        ("flowedit, fresh noise", Method::FlowEdit, NoiseMode::Fresh),
        ("flowedit, fixed noise", Method::FlowEdit, NoiseMode::Fixed),
        ("anchorflow", Method::AnchorFlow, NoiseMode::Fresh),
        ("anchorflow, fixed noise", Method::AnchorFlow, NoiseMode::Fixed),
    ];
    println!("{:<26} {:>14} {:>14} {:>13}", "variant", "identity err", "target loglik", "cancel ratio");
    for (label, method, noise_mode) in variants {
        let mut spec = BenchSpec { methods: vec![method], verify: false, ..BenchSpec::default() };
        spec.base.noise_mode = noise_mode;
        let rows = run_cells(&spec, &spec.task)?;
        let a = summarize(&rows, None)?.remove(0).report.aggregates;
        println!(
            "{label:<26} {:>14.4} {:>14.4} {:>13.6}",
            a.mean_identity_error,
            a.mean_target_loglik,
            a.mean_cancel_ratio.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
