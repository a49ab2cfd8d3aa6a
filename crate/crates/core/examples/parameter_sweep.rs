//! Sweep over (n_max, s_tar) for both window editors.
//!
//! cargo run --release --example parameter_sweep

use anchorflow::bench::{run_cells, summarize};
use anchorflow::config::{BenchSpec, GridPoint};
use anchorflow::editing::Method;

fn main() -> anchorflow::Result<()> {
    let spec = BenchSpec {
        methods: vec![Method::FlowEdit, Method::AnchorFlow],
        grid: [(31, 4.0), (35, 5.0), (37, 6.0), (41, 7.5), (45, 9.0)]
            .into_iter()
            .map(|(n_max, s_tar)| GridPoint { n_max, s_tar })
            .collect(),
        verify: false,
        ..BenchSpec::default()
    };
    let rows = run_cells(&spec, &spec.task)?;
    println!("{:<11} {:>6} {:>6} {:>14} {:>14}", "method", "n_max", "s_tar", "identity err", "target loglik");
    for cell in summarize(&rows, None)? {
        let a = &cell.report.aggregates;
        println!(
            "{:<11} {:>6} {:>6.1} {:>14.4} {:>14.4}",
            cell.cell.method.name(),
            cell.cell.point.n_max,
            cell.cell.point.s_tar,
            a.mean_identity_error,
            a.mean_target_loglik
        );
    }
    Ok(())
}
