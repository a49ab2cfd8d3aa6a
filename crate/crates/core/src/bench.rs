//! Experiment orchestration: method x grid x n_avg cells over a shared set
//! of source draws, CSV and SVG output, and the run directory layout
//!
//! ```text
//! <out>/<timestamp>-<name>/
//!     config.snapshot  results.csv  summary.csv  plots/*.svg  verify.txt
//! ```

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::{load_config, BenchSpec, GridPoint};
use crate::editing::{edit, EditResult, Method};
use crate::error::{Error, Result};
use crate::flow::VelocityField;
use crate::gmm::EditTask;
use crate::latent::Latent;
use crate::metrics::{score_edit, MetricsReport, MetricsRow};
use crate::mlp::MlpField;
use crate::rng::Stream;
use crate::svg::{render_scatter_svg, Batch, Marker};
use crate::verify::run_verify;

const SOURCE_TAG: u64 = 0x5352_4300;
const REFERENCE_TAG: u64 = 0x5245_4600;

/// Formats a real with 17 significant digits; `nan` for missing values.
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Header of results.csv; coordinate columns follow the latent dimension.
pub fn results_header(dim: usize) -> String {
    let src: Vec<String> = (0..dim).map(|i| format!("src_{i}")).collect();
    let edit: Vec<String> = (0..dim).map(|i| format!("edit_{i}")).collect();
    format!(
        "method,n_max,s_tar,n_avg,seed,sample_idx,{},{},identity_err,assign_ok,target_loglik,source_loglik,cancel_ratio,runtime_us",
        src.join(","),
        edit.join(",")
    )
}

pub const SUMMARY_HEADER: &str = "method,n_max,s_tar,n_avg,rows,failed,mean_identity_err,assign_rate,mean_target_loglik,mean_source_loglik,mean_cancel_ratio,energy_distance";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub point: GridPoint,
    pub n_avg: usize,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("{}-nmax{}-star{:?}-navg{}", self.method.name(), self.point.n_max, self.point.s_tar, self.n_avg)
    }
}

/// One per-sample line of results.csv. A failed sample has no edit.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub cell: Cell,
    pub seed: u64,
    pub sample_idx: usize,
    pub src: Latent,
    pub edit: Option<Latent>,
    pub metrics: Option<MetricsRow>,
    pub runtime_us: u64,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{},{}",
            self.cell.method.name(),
            self.cell.point.n_max,
            fmt_real(self.cell.point.s_tar),
            self.cell.n_avg,
            self.seed,
            self.sample_idx
        );
        for v in self.src.iter() {
            write!(s, ",{}", fmt_real(*v)).unwrap();
        }
        for i in 0..self.src.dim() {
            let v = self.edit.as_ref().map_or(f64::NAN, |e| e[i]);
            write!(s, ",{}", fmt_real(v)).unwrap();
        }
        match &self.metrics {
            Some(m) => write!(
                s,
                ",{},{},{},{},{}",
                fmt_real(m.identity_error),
                u8::from(m.assignment_consistent),
                fmt_real(m.target_loglik),
                fmt_real(m.source_loglik),
                fmt_real(m.cancel_ratio.unwrap_or(f64::NAN))
            )
            .unwrap(),
            None => s.push_str(",nan,0,nan,nan,nan"),
        }
        write!(s, ",{}", self.runtime_us).unwrap();
        s
    }
}

pub fn results_csv(rows: &[ResultRow], dim: usize) -> String {
    let mut s = results_header(dim);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Parses results.csv back into rows; `nan` edits mark failures.
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::config(Some(1), "empty results file"))?;
    let cols = header.split(',').count();
    if cols < 14 || (cols - 12) % 2 != 0 {
        return Err(Error::config(Some(1), "unexpected results header"));
    }
    let dim = (cols - 12) / 2;
    if header != results_header(dim) {
        return Err(Error::config(Some(1), "unexpected results header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols {
            return Err(Error::config(Some(n), format!("expected {cols} fields, found {}", f.len())));
        }
        let bad = |what: &str| Error::config(Some(n), format!("bad {what}"));
        let real = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        let method = Method::parse(f[0]).ok_or_else(|| bad("method"))?;
        let point = GridPoint {
            n_max: f[1].parse().map_err(|_| bad("n_max"))?,
            s_tar: real(f[2], "s_tar")?,
        };
        let coords = |off: usize| -> Result<Latent> {
            Ok(Latent::new((0..dim).map(|j| real(f[off + j], "coordinate")).collect::<Result<_>>()?))
        };
        let src = coords(6)?;
        let edit = coords(6 + dim)?;
        let m = 6 + 2 * dim;
        let failed = !edit.is_finite();
        let cancel = real(f[m + 4], "cancel_ratio")?;
        rows.push(ResultRow {
            cell: Cell {
                method,
                point,
                n_avg: f[3].parse().map_err(|_| bad("n_avg"))?,
            },
            seed: f[4].parse().map_err(|_| bad("seed"))?,
            sample_idx: f[5].parse().map_err(|_| bad("sample_idx"))?,
            src,
            edit: (!failed).then_some(edit),
            metrics: if failed {
                None
            } else {
                Some(MetricsRow {
                    identity_error: real(f[m], "identity_err")?,
                    assignment_consistent: f[m + 1] == "1",
                    target_loglik: real(f[m + 2], "target_loglik")?,
                    source_loglik: real(f[m + 3], "source_loglik")?,
                    cancel_ratio: (!cancel.is_nan()).then_some(cancel),
                })
            },
            runtime_us: f[m + 5].parse().map_err(|_| bad("runtime_us"))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub rows: usize,
    pub failed: usize,
    pub report: MetricsReport,
}

/// Groups rows by cell (in first-seen order) and aggregates the successful
/// ones; energy distance is taken against `reference` when given.
pub fn summarize(rows: &[ResultRow], reference: Option<&[Latent]>) -> Result<Vec<CellSummary>> {
    let mut cells: Vec<Cell> = Vec::new();
    for r in rows {
        if !cells.contains(&r.cell) {
            cells.push(r.cell);
        }
    }
    cells
        .into_iter()
        .map(|cell| {
            let mine: Vec<&ResultRow> = rows.iter().filter(|r| r.cell == cell).collect();
            let ok: Vec<&ResultRow> = mine.iter().copied().filter(|r| r.metrics.is_some()).collect();
            let edited: Vec<Latent> = ok.iter().filter_map(|r| r.edit.clone()).collect();
            let report = MetricsReport::from_rows(
                ok.iter().map(|r| r.metrics.clone().unwrap()).collect(),
                Some(&edited),
                reference,
            )?;
            Ok(CellSummary {
                cell,
                rows: mine.len(),
                failed: mine.len() - ok.len(),
                report,
            })
        })
        .collect()
}

pub fn summary_csv(summaries: &[CellSummary]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for c in summaries {
        let a = &c.report.aggregates;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.cell.method.name(),
            c.cell.point.n_max,
            fmt_real(c.cell.point.s_tar),
            c.cell.n_avg,
            c.rows,
            c.failed,
            fmt_real(a.mean_identity_error),
            fmt_real(a.assignment_rate),
            fmt_real(a.mean_target_loglik),
            fmt_real(a.mean_source_loglik),
            fmt_real(a.mean_cancel_ratio.unwrap_or(f64::NAN)),
            fmt_real(a.energy_distance.unwrap_or(f64::NAN)),
        )
        .unwrap();
    }
    s
}

/// The field a bench runs against: the exact oracle or a learned network.
pub enum BenchField {
    Oracle(Box<EditTask>),
    Learned(MlpField),
}

impl BenchField {
    pub fn for_spec(spec: &BenchSpec) -> Result<Self> {
        match &spec.checkpoint {
            None => Ok(BenchField::Oracle(Box::new(spec.task.clone()))),
            Some(path) => {
                let file = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
                let field = MlpField::read_checkpoint(BufReader::new(file))?;
                if field.dim() != spec.task.dim() {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint dimension {} does not match task dimension {}",
                        field.dim(),
                        spec.task.dim()
                    )));
                }
                Ok(BenchField::Learned(field))
            }
        }
    }

    pub fn as_field(&self) -> &dyn VelocityField {
        match self {
            BenchField::Oracle(t) => t.as_ref(),
            BenchField::Learned(m) => m,
        }
    }
}

/// Source draws shared by every cell: sample `i` comes from its own fork of
/// the seed stream.
pub fn source_points(spec: &BenchSpec) -> Vec<Latent> {
    let base = Stream::new(spec.base.seed).fork(SOURCE_TAG);
    (0..spec.samples)
        .map(|i| spec.task.source().sample(&mut base.fork(i as u64)))
        .collect()
}

pub fn target_reference(spec: &BenchSpec) -> Vec<Latent> {
    let mut stream = Stream::new(spec.base.seed).fork(REFERENCE_TAG);
    spec.task.target().sample_n(spec.reference_samples, &mut stream)
}

pub fn cells(spec: &BenchSpec) -> Vec<Cell> {
    let mut out = Vec::new();
    for &method in &spec.methods {
        for &point in &spec.grid {
            for &n_avg in &spec.n_avg {
                out.push(Cell { method, point, n_avg });
            }
        }
    }
    out
}

/// Runs every (cell, sample) job on the current rayon pool and returns rows
/// in (method, grid point, n_avg, sample) order. A failing sample ends its
/// cell with a failure row.
pub fn run_cells(spec: &BenchSpec, field: &dyn VelocityField) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let sources = source_points(spec);
    let cells = cells(spec);
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..spec.samples).map(move |s| (c, s))).collect();
    let outcomes: Vec<Result<(EditResult, MetricsRow)>> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let cell = cells[c];
            let cfg = spec.cell_config(cell.method, cell.point, cell.n_avg);
            let result = edit(field, &cfg, &sources[s], s as u64)?;
            let metrics = score_edit(&spec.task, &sources[s], &result.edited, &result.updates())?;
            Ok((result, metrics))
        })
        .collect();
    let mut rows = Vec::with_capacity(jobs.len());
    let mut aborted = vec![false; cells.len()];
    for (&(c, s), outcome) in jobs.iter().zip(outcomes) {
        if aborted[c] {
            continue;
        }
        let mut row = ResultRow {
            cell: cells[c],
            seed: spec.base.seed,
            sample_idx: s,
            src: sources[s].clone(),
            edit: None,
            metrics: None,
            runtime_us: 0,
        };
        match outcome {
            Ok((result, metrics)) => {
                if spec.timing {
                    row.runtime_us = result.wall_time.as_micros() as u64;
                }
                row.edit = Some(result.edited);
                row.metrics = Some(metrics);
            }
            Err(e @ (Error::NumericFailure { .. } | Error::OracleDegenerate { .. })) => {
                eprintln!("cell {} aborted at sample {s}: {e}", cells[c].label());
                aborted[c] = true;
            }
            Err(e) => return Err(e),
        }
        rows.push(row);
    }
    Ok(rows)
}

fn method_color(m: Method) -> &'static str {
    match m {
        Method::Direct => "#d95f02",
        Method::Inversion => "#7570b3",
        Method::FlowEdit => "#1b9e77",
        Method::AnchorFlow => "#e7298a",
    }
}

/// One scatter per cell; skipped for latents that are not 2-dimensional.
pub fn write_plots(rows: &[ResultRow], reference: &[Latent], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.first().is_none_or(|r| r.src.dim() != 2) {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir)?;
    let mut cells: Vec<Cell> = Vec::new();
    for r in rows {
        if !cells.contains(&r.cell) {
            cells.push(r.cell);
        }
    }
    let mut paths = Vec::new();
    for cell in cells {
        let mine: Vec<&ResultRow> = rows.iter().filter(|r| r.cell == cell).collect();
        let src: Vec<Latent> = mine.iter().map(|r| r.src.clone()).collect();
        let edited: Vec<Latent> = mine.iter().filter_map(|r| r.edit.clone()).collect();
        let label = cell.label();
        let path = dir.join(format!("{label}.svg"));
        render_scatter_svg(
            &label,
            &[
                Batch { label: "source", marker: Marker::Filled("#999999"), points: &src },
                Batch { label: cell.method.name(), marker: Marker::Filled(method_color(cell.method)), points: &edited },
                Batch { label: "target reference", marker: Marker::Outlined("#1f3b73"), points: reference },
            ],
            &path,
        )?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub rows: Vec<ResultRow>,
    pub summaries: Vec<CellSummary>,
    pub verify_passed: Option<bool>,
}

/// Creates `<root>/<timestamp>-<name>`, adding a numeric suffix if taken.
pub fn create_run_dir(root: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{stamp}-{name}");
    for n in 1.. {
        let candidate = if n == 1 { root.join(&base) } else { root.join(format!("{base}-{n}")) };
        match std::fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::invalid("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs every cell of the bench and writes the run directory under `root`.
pub fn run_bench(spec: &BenchSpec, root: &Path) -> Result<RunOutput> {
    spec.validate()?;
    let field = BenchField::for_spec(spec)?;
    let dir = create_run_dir(root, &spec.name)?;
    std::fs::write(dir.join("config.snapshot"), spec.snapshot())?;

    let started = Instant::now();
    let rows = run_cells(spec, field.as_field())?;
    let reference = target_reference(spec);
    let summaries = summarize(&rows, Some(&reference))?;
    std::fs::write(dir.join("results.csv"), results_csv(&rows, spec.task.dim()))?;
    std::fs::write(dir.join("summary.csv"), summary_csv(&summaries))?;
    write_plots(&rows, &reference, &dir.join("plots"))?;
    eprintln!("bench: {} rows in {:.1?}", rows.len(), started.elapsed());

    let verify_passed = if spec.verify {
        let report = run_verify();
        std::fs::write(dir.join("verify.txt"), report.to_text())?;
        Some(report.passed())
    } else {
        None
    };
    Ok(RunOutput {
        dir,
        rows,
        summaries,
        verify_passed,
    })
}

/// Re-renders the per-cell scatters from a results.csv. The target
/// reference is regenerated from `config` (by default the sibling
/// config.snapshot) and left out if no config is found.
pub fn plot_results(results: &Path, config: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let rows = parse_results(&std::fs::read_to_string(results)?)?;
    let sibling = results.with_file_name("config.snapshot");
    let config = config.map(Path::to_path_buf).or_else(|| sibling.exists().then_some(sibling));
    let reference = match config {
        Some(c) => target_reference(&load_config(&c)?),
        None => Vec::new(),
    };
    if rows.first().is_some_and(|r| r.src.dim() != 2) {
        return Err(Error::UnsupportedDimension(rows[0].src.dim()));
    }
    write_plots(&rows, &reference, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_bench;

    fn small(text: &str) -> BenchSpec {
        parse_bench(text, Path::new(".")).unwrap()
    }

    #[test]
    fn real_formatting_round_trips() {
        for x in [0.1, -3.0, 1e-300, 123456.789, f64::MIN_POSITIVE, std::f64::consts::PI] {
            let s = fmt_real(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_real(f64::NAN), "nan");
        assert_eq!(fmt_real(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn header_matches_schema() {
        assert_eq!(
            results_header(2),
            "method,n_max,s_tar,n_avg,seed,sample_idx,src_0,src_1,edit_0,edit_1,identity_err,assign_ok,target_loglik,source_loglik,cancel_ratio,runtime_us"
        );
    }

    #[test]
    fn row_accounting_and_csv_round_trip() {
        let spec = small("samples = 5\nverify = false\ngrid = 35:5.0, 41:7.5\n");
        let rows = run_cells(&spec, &spec.task).unwrap();
        assert_eq!(rows.len(), 4 * 2 * 5);
        let text = results_csv(&rows, 2);
        let parsed = parse_results(&text).unwrap();
        assert_eq!(parsed, rows);
        assert_eq!(results_csv(&parsed, 2), text);
        let direct = rows.iter().find(|r| r.cell.method == Method::Direct).unwrap();
        assert!(direct.to_csv().contains(",nan,0"));
    }

    #[test]
    fn summary_recomputes_from_csv() {
        let spec = small("samples = 6\nmethods = flowedit, anchorflow\n");
        let rows = run_cells(&spec, &spec.task).unwrap();
        let reference = target_reference(&spec);
        let direct = summary_csv(&summarize(&rows, Some(&reference)).unwrap());
        let parsed = parse_results(&results_csv(&rows, 2)).unwrap();
        assert_eq!(summary_csv(&summarize(&parsed, Some(&reference)).unwrap()), direct);
    }

    #[test]
    fn sources_shared_across_cells() {
        let spec = small("samples = 3\nmethods = direct, anchorflow\n");
        let rows = run_cells(&spec, &spec.task).unwrap();
        assert_eq!(rows[0].src, rows[3].src);
        assert_ne!(rows[0].src, rows[1].src);
    }
}
