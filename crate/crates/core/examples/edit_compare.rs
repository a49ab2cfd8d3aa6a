//! All four editors on the paired two-mode task with default settings,
//! scored and plotted.
//!
//! cargo run --release --example edit_compare -- [out_dir]

use std::path::PathBuf;

use anchorflow::bench::{run_cells, summarize, target_reference, write_plots};
use anchorflow::config::BenchSpec;

fn main() -> anchorflow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "edit_compare_plots".into()));
    let spec = BenchSpec { verify: false, ..BenchSpec::default() };
    let rows = run_cells(&spec, &spec.task)?;
    let reference = target_reference(&spec);
    println!(
        "{:<11} {:>14} {:>12} {:>14} {:>13} {:>10}",
        "method", "identity err", "assign rate", "target loglik", "cancel ratio", "energy"
    );
    for cell in summarize(&rows, Some(&reference))? {
        let a = &cell.report.aggregates;
        println!(
            "{:<11} {:>14.4} {:>12.3} {:>14.4} {:>13} {:>10.4}",
            cell.cell.method.name(),
            a.mean_identity_error,
            a.assignment_rate,
            a.mean_target_loglik,
            a.mean_cancel_ratio.map_or("-".into(), |c| format!("{c:.6}")),
            a.energy_distance.unwrap_or(f64::NAN)
        );
    }
    for p in write_plots(&rows, &reference, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
