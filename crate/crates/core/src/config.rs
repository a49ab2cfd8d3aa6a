//! Flat `key = value` configuration documents.
//!
//! Lines are `key = value`; `#` starts a comment; a `[section]` header
//! prefixes the keys that follow with `section.`. Values are bare or quoted
//! strings, or comma-separated number lists, optionally in brackets.
//!
//! A bench document accepts these keys (defaults in parentheses):
//!
//! ```text
//! name             run label (bench)
//! task             named preset (paired-two-mode)
//! task_file        path of a mixture document with source./target. keys
//! source.* target.* pairing   inline task, see `parse_mixture`
//! checkpoint       learned-field checkpoint; the exact oracle if absent
//! methods          comma list of direct, inversion, flowedit, anchorflow (all)
//! T s_src s_tar n_min n_max   (50, 3.5, 7.5, 1, 41)
//! grid             "n_max:s_tar" list; replaces n_max and s_tar
//! n_avg            comma list (1)
//! seed samples reference_samples   (0, 200, samples)
//! schedule         linear
//! squared_factor   false
//! noise_mode       fresh | fixed (fresh)
//! timing           record runtime_us (false)
//! verify           run the verification suite into verify.txt (true)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::editing::{EditConfig, Method, NoiseMode};
use crate::error::{Error, Result};
use crate::flow::ScheduleKind;
use crate::gmm::{EditTask, GaussianMixture};
use crate::latent::Latent;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses a document into entries keyed by their full (section-prefixed)
/// name. Duplicate keys are errors.
pub fn parse_document(text: &str) -> Result<BTreeMap<String, Entry>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::config(Some(line), "unterminated section header"))?
                .trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::config(Some(line), format!("bad section name '{name}'")));
            }
            section = format!("{name}.");
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::config(Some(line), format!("expected 'key = value', found '{content}'")))?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::config(Some(line), format!("bad key '{key}'")));
        }
        let full = format!("{section}{key}");
        let entry = Entry {
            key: full.clone(),
            value: unquote(value.trim()).to_string(),
            line,
        };
        if let Some(prev) = out.insert(full.clone(), entry) {
            return Err(Error::config(
                Some(line),
                format!("duplicate key '{full}' (first set on line {})", prev.line),
            ));
        }
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

fn err(e: &Entry, msg: impl std::fmt::Display) -> Error {
    Error::config(Some(e.line), format!("{}: {msg}", e.key))
}

fn list(e: &Entry) -> Vec<&str> {
    let v = e.value.trim();
    let v = v.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(v);
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn real(e: &Entry) -> Result<f64> {
    let v: f64 = e.value.trim().parse().map_err(|_| err(e, format!("'{}' is not a number", e.value)))?;
    if !v.is_finite() {
        return Err(err(e, "must be finite"));
    }
    Ok(v)
}

fn reals(e: &Entry) -> Result<Vec<f64>> {
    list(e)
        .into_iter()
        .map(|s| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(err(e, format!("'{s}' is not a finite number"))),
        })
        .collect()
}

fn integer<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value
        .trim()
        .parse()
        .map_err(|_| err(e, format!("'{}' is not a nonnegative integer", e.value)))
}

fn integers(e: &Entry) -> Result<Vec<usize>> {
    list(e)
        .into_iter()
        .map(|s| s.parse().map_err(|_| err(e, format!("'{s}' is not a nonnegative integer"))))
        .collect()
}

fn boolean(e: &Entry) -> Result<bool> {
    match e.value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(err(e, format!("'{other}' is not a boolean"))),
    }
}

/// Reads `{prefix}weights`, `{prefix}mean.k` and `{prefix}cov.k`. A
/// covariance is one value (scaled identity), `d` values (diagonal) or
/// `d * d` values (row-major); it defaults to the identity. Consumed keys
/// are removed from `doc`.
pub fn parse_mixture(doc: &mut BTreeMap<String, Entry>, prefix: &str) -> Result<GaussianMixture> {
    let wkey = format!("{prefix}weights");
    let we = doc
        .remove(&wkey)
        .ok_or_else(|| Error::config(None, format!("missing key '{wkey}'")))?;
    let weights = reals(&we)?;
    let k = weights.len();
    if k == 0 {
        return Err(err(&we, "needs at least one weight"));
    }
    let mut means = Vec::with_capacity(k);
    for i in 0..k {
        let key = format!("{prefix}mean.{i}");
        let e = doc
            .remove(&key)
            .ok_or_else(|| Error::config(Some(we.line), format!("missing key '{key}' for weight {i}")))?;
        let m = reals(&e)?;
        if let Some(first) = means.first().map(Latent::dim) {
            if m.len() != first {
                return Err(err(&e, format!("has {} coordinates, expected {first}", m.len())));
            }
        }
        if m.is_empty() {
            return Err(err(&e, "empty mean"));
        }
        means.push(Latent::new(m));
    }
    let d = means[0].dim();
    let mut covs = Vec::with_capacity(k);
    for i in 0..k {
        let key = format!("{prefix}cov.{i}");
        let cov = match doc.remove(&key) {
            None => DMatrix::identity(d, d),
            Some(e) => {
                let v = reals(&e)?;
                if v.len() == 1 {
                    DMatrix::identity(d, d) * v[0]
                } else if v.len() == d {
                    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v))
                } else if v.len() == d * d {
                    DMatrix::from_row_slice(d, d, &v)
                } else {
                    return Err(err(&e, format!("needs 1, {d} or {} values, found {}", d * d, v.len())));
                }
            }
        };
        covs.push(cov);
    }
    let stray: Vec<&Entry> = doc
        .values()
        .filter(|e| e.key.starts_with(&format!("{prefix}mean.")) || e.key.starts_with(&format!("{prefix}cov.")))
        .collect();
    if let Some(e) = stray.first() {
        return Err(err(e, format!("component index out of range for {k} weights")));
    }
    let total: f64 = weights.iter().sum();
    let built = if (total - 1.0).abs() <= 1e-12 {
        GaussianMixture::new(weights, means, covs)
    } else {
        GaussianMixture::from_unnormalized(weights, means, covs)
    };
    built.map_err(|e| Error::config(Some(we.line), format!("{prefix}mixture: {e}")))
}

fn reject_unknown(doc: &BTreeMap<String, Entry>) -> Result<()> {
    match doc.values().min_by_key(|e| e.line) {
        Some(e) => Err(Error::config(Some(e.line), format!("unknown key '{}'", e.key))),
        None => Ok(()),
    }
}

/// Reads a standalone mixture document (`weights`, `mean.k`, `cov.k`).
pub fn load_mixture(path: &Path) -> Result<GaussianMixture> {
    let mut doc = parse_document(&std::fs::read_to_string(path)?)?;
    let m = parse_mixture(&mut doc, "")?;
    reject_unknown(&doc)?;
    Ok(m)
}

fn parse_task(doc: &mut BTreeMap<String, Entry>) -> Result<EditTask> {
    let source = parse_mixture(doc, "source.")?;
    let target = parse_mixture(doc, "target.")?;
    let pairing = match doc.remove("pairing") {
        Some(e) => integers(&e)?,
        None => (0..source.len()).collect(),
    };
    EditTask::new(source, target, pairing).map_err(|e| Error::config(None, format!("task: {e}")))
}

#[derive(Debug, Clone)]
pub enum TaskRef {
    Preset(String),
    Inline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub n_max: usize,
    pub s_tar: f64,
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub name: String,
    pub task_ref: TaskRef,
    pub task: EditTask,
    pub checkpoint: Option<PathBuf>,
    pub methods: Vec<Method>,
    /// Shared settings; `n_max`, `s_tar` and `n_avg` come from the grid.
    pub base: EditConfig,
    pub grid: Vec<GridPoint>,
    pub n_avg: Vec<usize>,
    pub samples: usize,
    pub reference_samples: usize,
    pub timing: bool,
    pub verify: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        let base = EditConfig::default();
        BenchSpec {
            name: "bench".into(),
            task_ref: TaskRef::Preset("paired-two-mode".into()),
            task: EditTask::paired_two_mode(),
            checkpoint: None,
            methods: Method::ALL.to_vec(),
            grid: vec![GridPoint {
                n_max: base.n_max,
                s_tar: base.s_tar,
            }],
            n_avg: vec![base.n_avg],
            base,
            samples: 200,
            reference_samples: 200,
            timing: false,
            verify: true,
        }
    }
}

impl BenchSpec {
    /// The sampler configuration of one cell.
    pub fn cell_config(&self, method: Method, point: GridPoint, n_avg: usize) -> EditConfig {
        EditConfig {
            method,
            n_max: point.n_max,
            s_tar: point.s_tar,
            n_avg,
            ..self.base.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.grid.is_empty() || self.n_avg.is_empty() {
            return Err(Error::config(None, "methods, grid and n_avg must be nonempty"));
        }
        if self.samples == 0 {
            return Err(Error::config(None, "samples must be positive"));
        }
        for &p in &self.grid {
            for &n in &self.n_avg {
                self.cell_config(Method::AnchorFlow, p, n)
                    .validate()
                    .map_err(|e| Error::config(None, format!("grid point {}:{}: {e}", p.n_max, p.s_tar)))?;
            }
        }
        Ok(())
    }

    /// Applies a seed override and revalidates nothing else.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base.seed = seed;
        self
    }

    /// Fully resolved document; parsing it reproduces this spec.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let reals = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let b = &self.base;
        writeln!(s, "name = \"{}\"", self.name).unwrap();
        match &self.task_ref {
            TaskRef::Preset(p) => writeln!(s, "task = {p}").unwrap(),
            TaskRef::Inline => {
                writeln!(
                    s,
                    "pairing = {}",
                    self.task.pairing().iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", ")
                )
                .unwrap();
            }
        }
        if let Some(path) = &self.checkpoint {
            writeln!(s, "checkpoint = \"{}\"", path.display()).unwrap();
        }
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        writeln!(s, "methods = {}", methods.join(", ")).unwrap();
        writeln!(s, "T = {}", b.steps).unwrap();
        writeln!(s, "schedule = {}", b.schedule.name()).unwrap();
        writeln!(s, "s_src = {:?}", b.s_src).unwrap();
        writeln!(s, "n_min = {}", b.n_min).unwrap();
        let grid: Vec<String> = self.grid.iter().map(|p| format!("{}:{:?}", p.n_max, p.s_tar)).collect();
        writeln!(s, "grid = {}", grid.join(", ")).unwrap();
        let navg: Vec<String> = self.n_avg.iter().map(|n| n.to_string()).collect();
        writeln!(s, "n_avg = {}", navg.join(", ")).unwrap();
        writeln!(s, "seed = {}", b.seed).unwrap();
        writeln!(s, "samples = {}", self.samples).unwrap();
        writeln!(s, "reference_samples = {}", self.reference_samples).unwrap();
        writeln!(s, "squared_factor = {}", b.squared_factor).unwrap();
        writeln!(s, "noise_mode = {}", b.noise_mode.name()).unwrap();
        writeln!(s, "timing = {}", self.timing).unwrap();
        writeln!(s, "verify = {}", self.verify).unwrap();
        if let TaskRef::Inline = self.task_ref {
            for (label, m) in [("source", self.task.source()), ("target", self.task.target())] {
                writeln!(s, "\n[{label}]").unwrap();
                writeln!(s, "weights = {}", reals(m.weights())).unwrap();
                for (k, (mean, cov)) in m.means().iter().zip(m.covariances()).enumerate() {
                    writeln!(s, "mean.{k} = {}", reals(mean.as_slice())).unwrap();
                    let rows: Vec<f64> = (0..cov.nrows())
                        .flat_map(|i| (0..cov.ncols()).map(move |j| (i, j)))
                        .map(|(i, j)| cov[(i, j)])
                        .collect();
                    writeln!(s, "cov.{k} = {}", reals(&rows)).unwrap();
                }
            }
        }
        s
    }
}

/// Parses a bench document. Relative `task_file` and `checkpoint` paths
/// resolve against `base_dir`.
pub fn parse_bench(text: &str, base_dir: &Path) -> Result<BenchSpec> {
    let mut doc = parse_document(text)?;
    let mut spec = BenchSpec::default();
    let mut take = |k: &str| doc.remove(k);

    if let Some(e) = take("name") {
        if e.value.is_empty() || e.value.contains(['/', '\\']) {
            return Err(err(&e, "must be a nonempty name without path separators"));
        }
        spec.name = e.value;
    }
    let preset = take("task");
    let task_file = take("task_file");
    if let Some(e) = take("checkpoint") {
        let path = std::path::absolute(base_dir.join(&e.value)).map_err(|io| err(&e, io))?;
        spec.checkpoint = Some(path);
    }
    if let Some(e) = take("methods") {
        spec.methods = list(&e)
            .into_iter()
            .map(|m| Method::parse(m).ok_or_else(|| err(&e, format!("unknown method '{m}'"))))
            .collect::<Result<_>>()?;
    }
    if let Some(e) = take("T") {
        spec.base.steps = integer(&e)?;
    }
    if let Some(e) = take("schedule") {
        spec.base.schedule = ScheduleKind::parse(&e.value).ok_or_else(|| err(&e, "unknown schedule"))?;
    }
    if let Some(e) = take("s_src") {
        spec.base.s_src = real(&e)?;
    }
    if let Some(e) = take("n_min") {
        spec.base.n_min = integer(&e)?;
    }
    let n_max = take("n_max");
    let s_tar = take("s_tar");
    let grid = take("grid");
    if let Some(e) = take("n_avg") {
        spec.n_avg = integers(&e)?;
    }
    if let Some(e) = take("seed") {
        spec.base.seed = integer(&e)?;
    }
    let mut reference = None;
    if let Some(e) = take("samples") {
        spec.samples = integer(&e)?;
    }
    if let Some(e) = take("reference_samples") {
        reference = Some(integer(&e)?);
    }
    if let Some(e) = take("squared_factor") {
        spec.base.squared_factor = boolean(&e)?;
    }
    if let Some(e) = take("noise_mode") {
        spec.base.noise_mode = NoiseMode::parse(&e.value).ok_or_else(|| err(&e, "expected fresh or fixed"))?;
    }
    if let Some(e) = take("timing") {
        spec.timing = boolean(&e)?;
    }
    if let Some(e) = take("verify") {
        spec.verify = boolean(&e)?;
    }
    spec.reference_samples = reference.unwrap_or(spec.samples);

    match (&grid, &n_max, &s_tar) {
        (Some(g), None, None) => {
            spec.grid = list(g)
                .into_iter()
                .map(|p| {
                    let (n, s) = p
                        .split_once(':')
                        .ok_or_else(|| err(g, format!("'{p}' is not n_max:s_tar")))?;
                    let n_max = n.trim().parse().map_err(|_| err(g, format!("bad n_max in '{p}'")))?;
                    let s_tar: f64 = s.trim().parse().map_err(|_| err(g, format!("bad s_tar in '{p}'")))?;
                    if !s_tar.is_finite() {
                        return Err(err(g, format!("bad s_tar in '{p}'")));
                    }
                    Ok(GridPoint { n_max, s_tar })
                })
                .collect::<Result<_>>()?;
        }
        (Some(g), _, _) => return Err(err(g, "grid cannot be combined with n_max or s_tar")),
        (None, _, _) => {
            let mut p = spec.grid[0];
            if let Some(e) = &n_max {
                p.n_max = integer(e)?;
            }
            if let Some(e) = &s_tar {
                p.s_tar = real(e)?;
            }
            spec.grid = vec![p];
        }
    }

    let has_inline = doc.keys().any(|k| k.starts_with("source.") || k.starts_with("target.")) || doc.contains_key("pairing");
    match (preset, task_file, has_inline) {
        (Some(e), None, false) => {
            spec.task = EditTask::preset(&e.value).ok_or_else(|| err(&e, format!("unknown preset '{}'", e.value)))?;
            spec.task_ref = TaskRef::Preset(e.value);
        }
        (None, Some(e), false) => {
            let path = base_dir.join(&e.value);
            let text = std::fs::read_to_string(&path).map_err(|io| err(&e, format!("{}: {io}", path.display())))?;
            let mut sub = parse_document(&text).map_err(|x| err(&e, format!("{}: {x}", path.display())))?;
            spec.task = parse_task(&mut sub).map_err(|x| err(&e, format!("{}: {x}", path.display())))?;
            reject_unknown(&sub).map_err(|x| err(&e, format!("{}: {x}", path.display())))?;
            spec.task_ref = TaskRef::Inline;
        }
        (None, None, true) => {
            spec.task = parse_task(&mut doc)?;
            spec.task_ref = TaskRef::Inline;
        }
        (None, None, false) => {}
        (Some(e), _, _) | (None, Some(e), _) => {
            return Err(err(&e, "task, task_file and inline source/target keys are mutually exclusive"))
        }
    }
    reject_unknown(&doc)?;

    let line_of = |e: &Option<Entry>| e.as_ref().map(|e| e.line);
    for &p in &spec.grid {
        for &n in &spec.n_avg {
            if let Err(e) = spec.cell_config(Method::AnchorFlow, p, n).validate() {
                let line = line_of(&grid).or(line_of(&n_max)).or(line_of(&s_tar));
                let key = if grid.is_some() { "grid" } else { "n_max" };
                return Err(Error::config(line, format!("{key}: {e}")));
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

pub fn load_config(path: &Path) -> Result<BenchSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(None, format!("cannot read {}: {e}", path.display())))?;
    parse_bench(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<BenchSpec> {
        parse_bench(text, Path::new("."))
    }

    #[test]
    fn empty_document_gives_defaults() {
        let s = parse("").unwrap();
        let b = &s.base;
        assert_eq!((b.steps, b.s_src, b.n_min), (50, 3.5, 1));
        assert_eq!(s.grid, vec![GridPoint { n_max: 41, s_tar: 7.5 }]);
        assert_eq!(s.n_avg, vec![1]);
        assert_eq!(s.methods, Method::ALL.to_vec());
    }

    #[test]
    fn sweep_grid() {
        let s = parse("# sweep\ngrid = 35:5.0, 37:6.0, 41:7.5\n").unwrap();
        assert_eq!(
            s.grid,
            vec![
                GridPoint { n_max: 35, s_tar: 5.0 },
                GridPoint { n_max: 37, s_tar: 6.0 },
                GridPoint { n_max: 41, s_tar: 7.5 }
            ]
        );
    }

    #[test]
    fn n_max_out_of_range_rejected() {
        match parse("T = 50\nn_max = 60\n") {
            Err(Error::Config { line: Some(2), msg }) => assert!(msg.contains("n_max"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        assert!(matches!(parse("colour = red"), Err(Error::Config { line: Some(1), .. })));
        assert!(matches!(parse("seed = 1\nseed = 2"), Err(Error::Config { line: Some(2), .. })));
        assert!(matches!(parse("seed = -1"), Err(Error::Config { line: Some(1), .. })));
        assert!(matches!(parse("just words"), Err(Error::Config { line: Some(1), .. })));
    }

    #[test]
    fn inline_task_and_snapshot_round_trip() {
        let text = "name = inline\nn_avg = 1, 4\n\n[source]\nweights = 1, 3\nmean.0 = 0, 0\nmean.1 = 1, 1\ncov.1 = 0.5, 2\n\n[target]\nweights = 0.5, 0.5\nmean.0 = 4, 0\nmean.1 = 5, 1\ncov.0 = 0.2\n";
        let s = parse(text).unwrap();
        assert_eq!(s.task.source().weights(), &[0.25, 0.75]);
        assert_eq!(s.task.source().covariances()[1][(1, 1)], 2.0);
        let snap = s.snapshot();
        let again = parse(&snap).unwrap();
        assert_eq!(again.snapshot(), snap);
        assert_eq!(again.task.source().weights(), s.task.source().weights());
    }

    #[test]
    fn mixture_errors() {
        assert!(parse("[source]\nweights = 1\nmean.0 = 0, 0\n").is_err(), "target missing");
        let text = "[source]\nweights = 1\nmean.0 = 0\nmean.1 = 3\n[target]\nweights = 1\nmean.0 = 1\n";
        assert!(matches!(parse(text), Err(Error::Config { line: Some(4), .. })));
        assert!(parse("task = nope").is_err());
    }

    #[test]
    fn comments_and_quotes() {
        let s = parse("name = \"a#b\" # trailing\nmethods = [flowedit, anchorflow]\n").unwrap();
        assert_eq!(s.name, "a#b");
        assert_eq!(s.methods, vec![Method::FlowEdit, Method::AnchorFlow]);
    }
}
