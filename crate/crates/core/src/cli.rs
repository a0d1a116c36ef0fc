//! Command-line front end. Every run produces one JSON report that embeds the
//! fully resolved configuration, so `--replay` on a report reproduces it
//! byte for byte. Wall-clock timing goes to stderr only.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::colour::{build_lattice, qbic_blowup_experiment, ColourError};
use crate::concentration::{
    covering_number, default_grid, estimate_concentration, ConcentrationConfig, ConcentrationError, CoverConfig, FiniteSpace, Method,
    ProbabilityMetricSpace, DEFAULT_GRID_STEPS,
};
use crate::histogram::{parse_histogram_record, GroundSpace, HistogramError, QuadraticForm};
use crate::index::{IndexError, VantagePolicy, VpConfig, VpTree, Workload};
use crate::metric::{metric_transform, Alphabet, Measure, MetricError, Point, TransformFn};
use crate::prefilter::{project_measure, transformed_approx, ApproxMeasure, Prefilter, PrefilterError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },
    #[error("row {row}: expected {expected} columns, found {found}")]
    Arity { row: usize, expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing required option --{0}")]
    Missing(&'static str),
    #[error("unknown measure {0:?}")]
    UnknownMeasure(String),
    #[error("incompatible options: {0}")]
    Incompatible(String),
    #[error("report is not a replayable report: {0}")]
    Replay(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Prefilter(#[from] PrefilterError),
    #[error(transparent)]
    Concentration(#[from] ConcentrationError),
    #[error(transparent)]
    Colour(#[from] ColourError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Ingest,
    BuildIndex,
    Query,
    PrefilterRun,
    Concentration,
    Cover,
    ColourExperiment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Vectors,
    Strings,
    Histograms,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Vectors => "vectors",
            Format::Strings => "strings",
            Format::Histograms => "histograms",
        })
    }
}

#[derive(Parser, Debug, Clone)]
#[command(name = "simgeom", version, about = "Metric-space indexing, prefiltering and concentration experiments")]
pub struct Args {
    #[arg(long, value_enum, required_unless_present = "replay")]
    pub command: Option<Command>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// vectors (delimited reals), strings (one per line) or histograms.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// euclidean, l1, hamming, edit, kantorovich or quadratic.
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Neighbours for query, pixels per image for colour-experiment.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub leaf_capacity: Option<usize>,
    #[arg(long)]
    pub branching: Option<usize>,
    /// Projection subset, 1-based, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub coords: Option<Vec<usize>>,
    /// Metric transform as family:parameter, e.g. power:0.5 or cap:2.
    #[arg(long)]
    pub transform: Option<String>,
    /// Index dump written by build-index and read by query.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Query points, in the dataset's format; defaults to the dataset itself.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// exact, ball or lipschitz.
    #[arg(long)]
    pub method: Option<String>,
    /// Re-run the configuration embedded in an earlier report.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

/// Resolved configuration; defaults are filled in before the run so the
/// report carries everything needed to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub measure: Option<String>,
    pub epsilon: Option<f64>,
    pub k: Option<usize>,
    pub seed: u64,
    pub spacing: Option<f64>,
    pub samples: Option<usize>,
    pub leaf_capacity: Option<usize>,
    pub branching: Option<usize>,
    pub coords: Option<Vec<usize>>,
    pub transform: Option<String>,
    pub index: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub method: Option<String>,
}

impl RunConfig {
    pub fn from_args(args: &Args) -> Result<Self, CliError> {
        let command = args.command.ok_or(CliError::Missing("command"))?;
        let mut c = RunConfig {
            command,
            input: args.input.clone(),
            output: args.output.clone(),
            format: args.format,
            measure: args.measure.clone(),
            epsilon: args.epsilon,
            k: args.k,
            seed: args.seed,
            spacing: args.spacing,
            samples: args.samples,
            leaf_capacity: args.leaf_capacity,
            branching: args.branching,
            coords: args.coords.clone(),
            transform: args.transform.clone(),
            index: args.index.clone(),
            queries: args.queries.clone(),
            method: args.method.clone(),
        };
        c.resolve();
        Ok(c)
    }

    fn resolve(&mut self) {
        if self.command != Command::ColourExperiment {
            if self.format.is_none() {
                self.format = Some(match self.measure.as_deref() {
                    Some("hamming" | "edit") => Format::Strings,
                    Some("kantorovich" | "quadratic") => Format::Histograms,
                    _ => Format::Vectors,
                });
            }
            if self.measure.is_none() {
                self.measure = Some(
                    match self.format {
                        Some(Format::Strings) => "edit",
                        Some(Format::Histograms) => "kantorovich",
                        _ => "euclidean",
                    }
                    .into(),
                );
            }
        }
        match self.command {
            Command::BuildIndex | Command::Query | Command::PrefilterRun => {
                let d = VpConfig::default();
                self.leaf_capacity.get_or_insert(d.leaf_capacity);
                self.branching.get_or_insert(d.branching);
            }
            Command::Concentration => {
                self.method.get_or_insert_with(|| "lipschitz".into());
            }
            Command::ColourExperiment => {
                self.spacing.get_or_insert(0.1);
                self.k.get_or_insert(10_000);
                self.epsilon.get_or_insert(0.1);
                self.samples.get_or_insert(10_000);
            }
            _ => {}
        }
        if self.command == Command::PrefilterRun && self.queries.is_none() {
            self.samples.get_or_insert(100);
        }
    }

    fn vp_config(&self) -> VpConfig {
        VpConfig {
            leaf_capacity: self.leaf_capacity.unwrap_or(8),
            branching: self.branching.unwrap_or(2),
            policy: VantagePolicy::MaxSpread,
            seed: self.seed,
        }
    }
}

/// Parsed dataset with its measure.
pub struct Dataset {
    pub format: Format,
    pub points: Vec<Point<f64>>,
    pub ground: Option<Arc<GroundSpace<f64>>>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

/// Parses a dataset file. Blank lines are skipped; data rows are numbered
/// from 1 in errors and from 0 as point ids.
pub fn ingest(path: &Path, format: Format) -> Result<Dataset, CliError> {
    parse_dataset(&read(path)?, format)
}

pub fn parse_dataset(text: &str, format: Format) -> Result<Dataset, CliError> {
    let rows: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty()).collect();
    if rows.is_empty() {
        return Err(CliError::EmptyDataset);
    }
    match format {
        Format::Vectors => {
            let mut points = Vec::with_capacity(rows.len());
            let mut arity = None;
            for (row, line) in rows {
                let fields: Vec<&str> = line.split(|c: char| c == ',' || c == ';' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
                let v = fields
                    .iter()
                    .enumerate()
                    .map(|(col, f)| match f.parse::<f64>() {
                        Ok(x) if x.is_finite() => Ok(x),
                        _ => Err(CliError::Parse { row, column: col + 1, message: format!("{f:?} is not a finite number") }),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let expected = *arity.get_or_insert(v.len());
                if v.len() != expected {
                    return Err(CliError::Arity { row, expected, found: v.len() });
                }
                points.push(Point::Coords(v));
            }
            Ok(Dataset { format, points, ground: None })
        }
        Format::Strings => Ok(Dataset { format, points: rows.iter().map(|(_, l)| Point::Symbols(l.to_string())).collect(), ground: None }),
        Format::Histograms => {
            let mut points = Vec::with_capacity(rows.len());
            let mut ground_id: Option<String> = None;
            for (row, line) in rows {
                let (id, h) = parse_histogram_record::<f64>(line).map_err(|e| CliError::Parse { row, column: 0, message: e.to_string() })?;
                match &ground_id {
                    None => ground_id = Some(id),
                    Some(g) if *g != id => return Err(CliError::Incompatible(format!("row {row}: ground space {id:?} differs from {g:?}"))),
                    _ => {}
                }
                points.push(Point::Histogram(h));
            }
            let ground = ground_from_id(ground_id.as_deref().expect("nonempty"))?;
            if let Some((row, _)) = points.iter().enumerate().find(|(_, p)| p.histogram().map(|h| h.len()) != Some(ground.len())) {
                return Err(CliError::Arity { row: row + 1, expected: ground.len(), found: points[row].histogram().map_or(0, |h| h.len()) });
            }
            Ok(Dataset { format, points, ground: Some(ground) })
        }
    }
}

/// Ground spaces are named `lattice:<spacing>` (the colour-triangle lattice).
pub fn ground_from_id(id: &str) -> Result<Arc<GroundSpace<f64>>, CliError> {
    let spacing = id
        .strip_prefix("lattice:")
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| CliError::Incompatible(format!("unknown ground space {id:?}; expected lattice:<spacing>")))?;
    Ok(build_lattice(spacing)?.ground().clone())
}

fn base_measure(name: &str, data: &Dataset) -> Result<Measure<f64>, CliError> {
    let arity = || data.points[0].coords().map(<[f64]>::len).ok_or_else(|| CliError::Incompatible(format!("{name} needs vector data")));
    let alphabet = || Alphabet::new(data.points.iter().filter_map(Point::symbols).flat_map(str::chars));
    let ground = || data.ground.clone().ok_or_else(|| CliError::Incompatible(format!("{name} needs histogram data")));
    Ok(match name {
        "euclidean" | "l2" => Measure::euclidean(arity()?),
        "l1" => Measure::l1(arity()?),
        "hamming" if data.format == Format::Strings => Measure::hamming().with_alphabet(alphabet()),
        "edit" if data.format == Format::Strings => Measure::edit().with_alphabet(alphabet()),
        "hamming" | "edit" => return Err(CliError::Incompatible(format!("{name} needs string data"))),
        "kantorovich" => Measure::kantorovich(ground()?),
        "quadratic" => Measure::quadratic(Arc::new(QuadraticForm::qbic(&*ground()?)?)),
        other => return Err(CliError::UnknownMeasure(other.into())),
    })
}

/// Largest distance among the first 200 points, for transform grids.
fn observed_scale(measure: &Measure<f64>, points: &[Point<f64>]) -> Result<f64, CliError> {
    let head = &points[..points.len().min(200)];
    let mut m = 0.0f64;
    for x in head {
        for y in head {
            m = m.max(measure.eval(x, y)?);
        }
    }
    Ok(m.max(1.0))
}

fn zero_based(coords: &[usize]) -> Result<Vec<usize>, CliError> {
    coords.iter().map(|&c| c.checked_sub(1).ok_or_else(|| CliError::Incompatible("--coords is 1-based".into()))).collect()
}

/// Measure for everything except prefilter-run: the base measure, then the
/// projection and the transform when given.
fn resolved_measure(config: &RunConfig, data: &Dataset) -> Result<Measure<f64>, CliError> {
    let mut m = base_measure(config.measure.as_deref().unwrap_or("euclidean"), data)?;
    if config.command != Command::PrefilterRun {
        if let Some(c) = &config.coords {
            m = m.project(&zero_based(c)?)?;
        }
        if let Some(t) = &config.transform {
            let scale = observed_scale(&m, &data.points)?;
            m = metric_transform(&m, TransformFn::parse(t)?, scale)?;
        }
    }
    Ok(m)
}

fn load(config: &RunConfig) -> Result<(Dataset, Workload<f64>), CliError> {
    let input = config.input.as_deref().ok_or(CliError::Missing("input"))?;
    let data = ingest(input, config.format.unwrap_or(Format::Vectors))?;
    let measure = resolved_measure(config, &data)?;
    for p in &data.points {
        measure.check_point(p)?;
    }
    let workload = Workload::new(measure, data.points.clone())?;
    Ok((data, workload))
}

fn load_queries(config: &RunConfig, data: &Dataset, workload: &Workload<f64>) -> Result<Vec<Point<f64>>, CliError> {
    match &config.queries {
        Some(p) => {
            let q = ingest(p, data.format)?;
            for x in &q.points {
                workload.measure().check_point(x)?;
            }
            Ok(q.points)
        }
        None => Ok(data.points.clone()),
    }
}

/// Executes a run and returns the report text (pretty JSON plus newline).
pub fn run(config: &RunConfig) -> Result<String, CliError> {
    let result = match config.command {
        Command::Ingest => run_ingest(config)?,
        Command::BuildIndex => run_build_index(config)?,
        Command::Query => run_query(config)?,
        Command::PrefilterRun => run_prefilter(config)?,
        Command::Concentration => run_concentration(config)?,
        Command::Cover => run_cover(config)?,
        Command::ColourExperiment => run_colour(config)?,
    };
    let report = json!({ "config": config, "result": result });
    Ok(serde_json::to_string_pretty(&report).expect("report serializes") + "\n")
}

/// Reads the configuration embedded in a report.
pub fn config_from_report(text: &str) -> Result<RunConfig, CliError> {
    let v: Value = serde_json::from_str(text).map_err(|e| CliError::Replay(e.to_string()))?;
    let c = v.get("config").ok_or_else(|| CliError::Replay("no config field".into()))?;
    serde_json::from_value(c.clone()).map_err(|e| CliError::Replay(e.to_string()))
}

pub fn replay(report_path: &Path) -> Result<(RunConfig, String), CliError> {
    let config = config_from_report(&read(report_path)?)?;
    let out = run(&config)?;
    Ok((config, out))
}

pub fn write_report(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Io { path: p.to_owned(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_ingest(config: &RunConfig) -> Result<Value, CliError> {
    let (data, w) = load(config)?;
    let mut v = json!({
        "format": data.format,
        "points": data.points.len(),
        "measure": w.measure().name(),
    });
    if let Some(a) = w.measure().arity() {
        v["arity"] = json!(a);
    }
    if let Some(g) = &data.ground {
        v["ground"] = json!(g.id());
    }
    Ok(v)
}

fn run_build_index(config: &RunConfig) -> Result<Value, CliError> {
    let (_, w) = load(config)?;
    let tree = VpTree::build(&w, config.vp_config())?;
    let path = config.index.as_deref().ok_or(CliError::Missing("index"))?;
    fs::write(path, tree.to_json()).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
    Ok(json!({
        "points": w.len(),
        "nodes": tree.nodes().len(),
        "height": tree.height(),
        "index": path,
    }))
}

fn run_query(config: &RunConfig) -> Result<Value, CliError> {
    let (data, w) = load(config)?;
    let tree = match &config.index {
        Some(p) => VpTree::from_json(&read(p)?, &w)?,
        None => VpTree::build(&w, config.vp_config())?,
    };
    let queries = load_queries(config, &data, &w)?;
    let mut rows = Vec::with_capacity(queries.len());
    match (config.k, config.epsilon) {
        (Some(k), None) => {
            for (i, q) in queries.iter().enumerate() {
                let (ids, stats) = tree.knn_query(q, k)?;
                let agrees = ids == w.linear_knn(q, k)?;
                rows.push(json!({ "query": i, "ids": ids, "stats": stats, "matches_linear_scan": agrees }));
            }
        }
        (None, Some(eps)) => {
            for (i, q) in queries.iter().enumerate() {
                let (ids, stats) = tree.range_query(q, eps)?;
                let agrees = ids == w.linear_range(q, eps)?;
                rows.push(json!({ "query": i, "ids": ids, "stats": stats, "matches_linear_scan": agrees }));
            }
        }
        _ => return Err(CliError::Incompatible("query needs exactly one of --epsilon (range) and --k (nearest neighbours)".into())),
    }
    Ok(json!({ "index_loaded": config.index.is_some(), "queries": rows }))
}

fn run_prefilter(config: &RunConfig) -> Result<Value, CliError> {
    let (data, w) = load(config)?;
    let eps = config.epsilon.ok_or(CliError::Missing("epsilon"))?;
    let approx: ApproxMeasure<f64> = match (&config.coords, &config.transform) {
        (Some(c), None) => project_measure(w.measure(), &zero_based(c)?)?,
        (None, Some(t)) => transformed_approx(w.measure(), TransformFn::parse(t)?, observed_scale(w.measure(), &data.points)?)?,
        _ => return Err(CliError::Incompatible("prefilter-run needs exactly one of --coords and --transform".into())),
    };
    let w = attach_sampler(w, &data);
    let p = Prefilter::new(w, approx, config.seed)?.with_index(config.vp_config())?;
    let profile = match &config.queries {
        Some(_) => p.profile(&load_queries(config, &data, p.workload())?, eps)?,
        None => p.false_hit_profile(eps, config.samples.unwrap_or(100), config.seed)?,
    };
    Ok(json!({
        "approximation": p.approx().measure().name(),
        "modulus": p.approx().modulus(),
        "audit": p.audit(),
        "profile": profile,
    }))
}

/// Query distribution: uniform on the bounding box for vectors, a uniformly
/// chosen dataset point otherwise.
fn attach_sampler(w: Workload<f64>, data: &Dataset) -> Workload<f64> {
    if data.format == Format::Vectors {
        let dim = data.points[0].coords().map_or(0, <[f64]>::len);
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in &data.points {
            for (k, &x) in p.coords().unwrap_or(&[]).iter().enumerate() {
                lo[k] = lo[k].min(x);
                hi[k] = hi[k].max(x);
            }
        }
        w.with_sampler(move |r| Point::Coords(lo.iter().zip(&hi).map(|(&a, &b)| if b > a { r.gen_range(a..b) } else { a }).collect()))
    } else {
        let pts = data.points.clone();
        w.with_sampler(move |r| pts[r.gen_range(0..pts.len())].clone())
    }
}

fn run_concentration(config: &RunConfig) -> Result<Value, CliError> {
    let (_, w) = load(config)?;
    let space = FiniteSpace::uniform(w.dataset().to_vec(), w.measure())?;
    let grid = match config.epsilon {
        Some(e) => vec![e],
        None => default_grid(space.diameter().max(f64::MIN_POSITIVE), DEFAULT_GRID_STEPS),
    };
    let name = config.method.as_deref().unwrap_or("lipschitz");
    let method = Method::parse(name).ok_or_else(|| CliError::Incompatible(format!("unknown method {name:?}")))?;
    let cfg = ConcentrationConfig { method, centres: config.samples, sample_size: space.len(), seed: config.seed };
    let est = estimate_concentration(&ProbabilityMetricSpace::Finite(space), &grid, &cfg)?;
    let note = if method.is_exact() { "exact values" } else { "lower bounds on the concentration function (restricted family)" };
    Ok(json!({ "estimate": est, "note": note }))
}

fn run_cover(config: &RunConfig) -> Result<Value, CliError> {
    let (_, w) = load(config)?;
    let eps = config.epsilon.ok_or(CliError::Missing("epsilon"))?;
    let space = FiniteSpace::uniform(w.dataset().to_vec(), w.measure())?;
    Ok(serde_json::to_value(covering_number(&space, eps, CoverConfig::default())?).expect("serializes"))
}

fn run_colour(config: &RunConfig) -> Result<Value, CliError> {
    let lattice = build_lattice(config.spacing.unwrap_or(0.1))?;
    let e = qbic_blowup_experiment(&lattice, config.k.unwrap_or(10_000), config.epsilon.unwrap_or(0.1), config.samples.unwrap_or(10_000), config.seed)?;
    Ok(serde_json::to_value(e).expect("serializes"))
}
