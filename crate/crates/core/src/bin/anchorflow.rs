use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use anchorflow::bench::{
    create_run_dir, fmt_real, plot_results, results_csv, run_bench, run_cells, summarize, summary_csv,
    target_reference, with_threads, BenchField,
};
use anchorflow::config::{load_config, load_mixture, parse_document, BenchSpec};
use anchorflow::editing::Method;
use anchorflow::fault::{self, Fault};
use anchorflow::rng::Stream;
use anchorflow::verify::run_verify;
use anchorflow::{Condition, Error, Result};

#[derive(Parser)]
#[command(name = "anchorflow", version, about = "Flow-matching editing samplers on Gaussian-mixture tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seeded defect for exercising `verify` (sign-flip, wrong-schedule, shared-rng).
    #[arg(long, global = true, hide = true, value_name = "FAULT")]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct Common {
    /// Configuration document; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; output bytes do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Source,
    Target,
    Union,
}

#[derive(Subcommand)]
enum Command {
    /// Draw points from a mixture document or a task's source/target to CSV.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "source")]
        which: Which,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Output CSV file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one method at the first grid point and write results rows.
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "anchorflow")]
        method: String,
        /// Output CSV file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full benchmark into a new run directory.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Root of the run registry.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run the verification suite and write verify.txt.
    Verify {
        #[arg(long)]
        threads: Option<usize>,
        /// Root of the run registry.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Re-render scatter plots from a results.csv.
    Plot {
        #[arg(long)]
        results: PathBuf,
        /// Config used to regenerate the target reference; defaults to the
        /// config.snapshot next to the results.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to `plots/` next to the results.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_spec(common: &Common) -> Result<BenchSpec> {
    let spec = match &common.config {
        Some(path) => load_config(path)?,
        None => BenchSpec::default(),
    };
    Ok(match common.seed {
        Some(seed) => spec.with_seed(seed),
        None => spec,
    })
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn sample(common: Common, which: Which, count: usize, out: Option<PathBuf>) -> Result<i32> {
    let is_mixture = match &common.config {
        Some(p) => parse_document(&std::fs::read_to_string(p)?)?.contains_key("weights"),
        None => false,
    };
    let spec;
    let mixture = if is_mixture {
        load_mixture(common.config.as_deref().unwrap())?
    } else {
        spec = load_spec(&common)?;
        let cond = match which {
            Which::Source => Condition::Source,
            Which::Target => Condition::Target,
            Which::Union => Condition::Unconditional,
        };
        spec.task.mixture(cond).clone()
    };
    let mut stream = Stream::new(common.seed.unwrap_or(0));
    let points = mixture.sample_n(count, &mut stream);
    let mut text: String = (0..mixture.dim()).map(|i| format!("x_{i}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for p in points {
        text.push_str(&p.iter().map(|v| fmt_real(*v)).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    write_output(out.as_deref(), &text)?;
    Ok(0)
}

fn edit(common: Common, method: &str, out: Option<PathBuf>) -> Result<i32> {
    let method = Method::parse(method).ok_or_else(|| Error::Config {
        line: None,
        msg: format!("unknown method '{method}'"),
    })?;
    let mut spec = load_spec(&common)?;
    spec.methods = vec![method];
    spec.grid.truncate(1);
    spec.n_avg.truncate(1);
    let field = BenchField::for_spec(&spec)?;
    let rows = with_threads(common.threads, || run_cells(&spec, field.as_field()))??;
    write_output(out.as_deref(), &results_csv(&rows, spec.task.dim()))?;
    let reference = target_reference(&spec);
    eprint!("{}", summary_csv(&summarize(&rows, Some(&reference))?));
    Ok(0)
}

fn bench(common: Common, out: PathBuf) -> Result<i32> {
    let spec = load_spec(&common)?;
    let run = with_threads(common.threads, || run_bench(&spec, &out))??;
    print!("{}", summary_csv(&run.summaries));
    println!("run directory: {}", run.dir.display());
    match run.verify_passed {
        Some(false) => {
            eprintln!("verification failed; see {}", run.dir.join("verify.txt").display());
            Ok(4)
        }
        _ => Ok(0),
    }
}

fn verify(threads: Option<usize>, out: PathBuf) -> Result<i32> {
    let report = with_threads(threads, run_verify)?;
    let dir = create_run_dir(&out, "verify")?;
    let text = report.to_text();
    std::fs::write(dir.join("verify.txt"), &text)?;
    print!("{text}");
    if let Some(c) = report.first_failure() {
        eprintln!("verification failed: {}", c.name);
    }
    Ok(report.exit_code())
}

fn plot(results: PathBuf, config: Option<PathBuf>, out: Option<PathBuf>) -> Result<i32> {
    let out = out.unwrap_or_else(|| results.with_file_name("plots"));
    let written = plot_results(&results, config.as_deref(), &out)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(name) = &cli.inject_fault {
        let f = Fault::parse(name).ok_or_else(|| Error::Config {
            line: None,
            msg: format!("unknown fault '{name}'"),
        })?;
        fault::inject(f);
    }
    match cli.command {
        Command::Sample { common, which, count, out } => sample(common, which, count, out),
        Command::Edit { common, method, out } => edit(common, &method, out),
        Command::Bench { common, out } => bench(common, out),
        Command::Verify { threads, out } => verify(threads, out),
        Command::Plot { results, config, out } => plot(results, config, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
