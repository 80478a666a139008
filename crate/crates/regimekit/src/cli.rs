//! Command-line driver.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self as stdio, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use regimekit_core::concepts::adjusted_rand_index;
use regimekit_core::data::{generate_syd, SeriesSet};
use regimekit_core::drift::Forecast;
use regimekit_core::kernels::KernelKind;
use regimekit_core::pipeline::{
    analyze, forecast_next, holdout_error, online_step, transition_table, Analysis, OnlineState,
};
use serde::{Deserialize, Serialize};

use crate::error::{ExitKind, IoError, RunError, Stage};
use crate::exec::Runner;
use crate::heatmap::write_heatmap;
use crate::io;
use crate::report::{InputSource, RunConfig, RunReport, SynthSpec};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "REGIMEKIT_OUT";
const FALLBACK_OUTPUT_DIR: &str = "regimekit-out";

#[derive(Debug, Parser)]
#[command(name = "regimekit", version, about = "Concept identification, tracking and forecasting for co-evolving time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic series set and its ground truth.
    Synth(SynthArgs),
    /// Select a window size and identify concepts in every window.
    Analyze(RunArgs),
    /// Analyse, then forecast the next window of every series.
    Forecast(RunArgs),
    /// Replay a CSV stream segment by segment.
    Online(OnlineArgs),
    /// Score a finished analysis against ground-truth labels.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub series: usize,
    #[arg(long, default_value_t = 10)]
    pub segments: usize,
    #[arg(long, default_value_t = 78)]
    pub segment_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flags mirroring [`RunConfig`]; each one given overrides the file.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV input, one column per series; without it the synthetic set is used.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub has_header: bool,
    /// gaussian, linear, polynomial or sigmoid.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub degree: Option<u32>,
    #[arg(long)]
    pub offset: Option<f64>,
    #[arg(long)]
    pub slope: Option<f64>,
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tau_gap: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tau_decay: Option<f64>,
    /// Comma-separated candidate window sizes.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Fixed window size (a one-element grid).
    #[arg(long, conflicts_with = "grid")]
    pub window: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Prototype count for the low-rank kernel.
    #[arg(long)]
    pub nystrom: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Withhold the final window and score the forecast against it.
    #[arg(long)]
    pub holdout: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 runs serially in canonical order.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OnlineArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// CSV stream, `-` for stdin.
    #[arg(long)]
    pub stream: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of an `analyze` or `forecast` run.
    #[arg(long)]
    pub run: PathBuf,
    /// Ground-truth CSV with columns series,segment,label.
    #[arg(long)]
    pub truth: PathBuf,
}

impl RunArgs {
    /// File configuration (or defaults) with flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig, RunError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| RunError::config("config", format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| RunError::config("config", format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(path) = &self.input {
            cfg.input = InputSource::Csv {
                path: path.clone(),
                has_header: self.has_header,
            };
        } else if self.has_header {
            if let InputSource::Csv { has_header, .. } = &mut cfg.input {
                *has_header = true;
            }
        }
        if let Some(name) = &self.kernel {
            cfg.kernel = name.parse::<KernelKind>().stage("config")?;
        }
        match &mut cfg.kernel {
            KernelKind::Polynomial { degree, offset } => {
                if let Some(d) = self.degree {
                    *degree = d;
                }
                if let Some(c) = self.offset {
                    *offset = c;
                }
            }
            KernelKind::Sigmoid { slope, offset } => {
                if let Some(a) = self.slope {
                    *slope = a;
                }
                if let Some(c) = self.offset {
                    *offset = c;
                }
            }
            _ => {}
        }
        if self.no_normalize {
            cfg.normalize = false;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(alpha, beta, gamma, k, tol, max_iter, tau_gap, tau_decay, seed);
        if self.rho.is_some() {
            cfg.rho = self.rho;
        }
        if self.epsilon.is_some() {
            cfg.epsilon = self.epsilon;
        }
        if self.nystrom.is_some() {
            cfg.nystrom = self.nystrom;
        }
        if let Some(g) = &self.grid {
            cfg.grid = Some(g.clone());
        }
        if let Some(w) = self.window {
            cfg.grid = Some(vec![w]);
        }
        if self.holdout {
            cfg.holdout = true;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        cfg.analysis().validate().stage("config")?;
        Ok(cfg)
    }
}

/// Output directory: flag or file, then the environment, then a default.
fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT_DIR))
}

fn make_dir(path: &Path) -> Result<(), RunError> {
    fs::create_dir_all(path)
        .map_err(|e| IoError::file(path, e))
        .stage("output")
}

pub fn load_input(cfg: &RunConfig) -> Result<SeriesSet, RunError> {
    match &cfg.input {
        InputSource::Csv { path, has_header } => io::load_csv(path, *has_header).stage("load"),
        InputSource::Synth(spec) => {
            generate_syd(spec.n_series, spec.n_segments, spec.segment_len, cfg.seed).stage("load")
        }
    }
}

/// Collects artifact paths relative to the output directory.
struct Artifacts {
    root: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn new(root: PathBuf) -> Self {
        Artifacts {
            root,
            written: Vec::new(),
        }
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        self.written.push(rel.to_string());
        self.root.join(rel)
    }
}

struct Timer {
    stages: BTreeMap<String, u64>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Timer {
            stages: BTreeMap::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.stages
            .insert(stage.to_string(), (now - self.last).as_millis() as u64);
        self.last = now;
    }
}

/// Runs a parsed command line, printing artifact paths on success.
pub fn run(cli: Cli) -> Result<(), RunError> {
    let written = match cli.command {
        Command::Synth(args) => cmd_synth(&args)?,
        Command::Analyze(args) => {
            let cfg = args.resolve()?;
            cmd_analyze(&cfg, args.threads)?.1
        }
        Command::Forecast(args) => {
            let cfg = args.resolve()?;
            cmd_forecast(&cfg, args.threads)?.1
        }
        Command::Online(args) => {
            let cfg = args.run.resolve()?;
            cmd_online(&cfg, &args.stream, args.run.has_header, &mut stdio::stdout().lock())?
        }
        Command::Eval(args) => cmd_eval(&args.run, &args.truth)?,
    };
    let stdout = stdio::stdout();
    let mut out = stdout.lock();
    for path in written {
        let _ = writeln!(out, "{}", path.display());
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>, RunError> {
    let series = generate_syd(args.series, args.segments, args.segment_len, args.seed).stage("synth")?;
    let dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT_DIR));
    make_dir(&dir)?;
    let series_path = dir.join("series.csv");
    let truth_path = dir.join("ground_truth.csv");
    io::write_series_csv(&series_path, &series).stage("synth")?;
    let truth = series.ground_truth().expect("synthetic data carries ground truth");
    io::write_ground_truth_csv(&truth_path, truth).stage("synth")?;
    let spec = SynthSpec {
        n_series: args.series,
        n_segments: args.segments,
        segment_len: args.segment_len,
    };
    let spec_path = dir.join("synth.json");
    io::write_json(&spec_path, &serde_json::json!({ "spec": spec, "seed": args.seed }))
        .stage("synth")?;
    Ok(vec![series_path, truth_path, spec_path])
}

fn write_analysis(
    analysis: &Analysis,
    artifacts: &mut Artifacts,
) -> Result<(), RunError> {
    let windows_dir = artifacts.root.join("windows");
    make_dir(&windows_dir)?;
    if let Some(scores) = &analysis.scores {
        io::write_scores_csv(&artifacts.path("scores.csv"), scores).stage("output")?;
    }
    io::write_json(&artifacts.path("catalog.json"), &analysis.catalog).stage("output")?;
    io::write_trajectories_csv(&artifacts.path("trajectories.csv"), &analysis.trajectories)
        .stage("output")?;
    for r in &analysis.windows {
        let p = r.window_index;
        let mapping = analysis
            .catalog
            .mapping(p)
            .ok_or_else(|| RunError::config("output", format!("window {p} missing from catalog")))?;
        io::write_matrix_csv(&artifacts.path(&format!("windows/z_{p:03}.csv")), &r.representation.z)
            .stage("output")?;
        io::write_labels_csv(&artifacts.path(&format!("windows/labels_{p:03}.csv")), &r.clustering, mapping)
            .stage("output")?;
        io::write_trace_csv(
            &artifacts.path(&format!("windows/trace_{p:03}.csv")),
            &r.representation.objective_trace,
        )
        .stage("output")?;
        write_heatmap(
            &artifacts.path(&format!("windows/heatmap_{p:03}.pgm")),
            &r.representation.z,
            &r.clustering.labels,
        )
        .stage("output")?;
    }
    Ok(())
}

fn runner(threads: Option<usize>) -> Result<Runner, RunError> {
    if threads == Some(0) {
        return Err(RunError::config("config", "--threads must be >= 1"));
    }
    Runner::new(threads).map_err(|e| RunError::config("config", e.to_string()))
}

fn finish(report: &mut RunReport, artifacts: &mut Artifacts, timer: Timer) -> Result<Vec<PathBuf>, RunError> {
    let report_path = artifacts.path("report.json");
    report.artifacts = artifacts.written.clone();
    report.timing_ms = timer.stages;
    io::write_json(&report_path, report).stage("output")?;
    Ok(artifacts.written.iter().map(|p| artifacts.root.join(p)).collect())
}

pub fn cmd_analyze(cfg: &RunConfig, threads: Option<usize>) -> Result<(RunReport, Vec<PathBuf>), RunError> {
    let exec = runner(threads)?;
    let mut timer = Timer::new();
    let series = load_input(cfg)?;
    timer.lap("load");
    let analysis = analyze(&series, &cfg.analysis(), &exec).stage("analyze")?;
    timer.lap("analyze");
    let dir = output_dir(cfg);
    make_dir(&dir)?;
    let mut artifacts = Artifacts::new(dir);
    write_analysis(&analysis, &mut artifacts)?;
    timer.lap("output");
    let mut report = RunReport::from_analysis("analyze", cfg, series.len(), &analysis);
    let paths = finish(&mut report, &mut artifacts, timer)?;
    Ok((report, paths))
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitionExport {
    window: usize,
    concepts: usize,
    lambda: Vec<Vec<f64>>,
    occupancy: Vec<Vec<usize>>,
    /// Per series: scores[r][m] and whether the uniform fallback applied.
    series: Vec<SeriesTransition>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesTransition {
    series: usize,
    current: usize,
    scores: Vec<Vec<f64>>,
    uniform_fallback: bool,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn cmd_forecast(cfg: &RunConfig, threads: Option<usize>) -> Result<(RunReport, Vec<PathBuf>), RunError> {
    let exec = runner(threads)?;
    let mut timer = Timer::new();
    let series = load_input(cfg)?;
    timer.lap("load");
    let analysis = analyze(&series, &cfg.analysis(), &exec).stage("analyze")?;
    timer.lap("analyze");
    let b = analysis.window_count();
    if b < 3 {
        return Err(RunError {
            stage: "forecast",
            kind: ExitKind::Data,
            message: format!("forecasting needs at least 3 windows, the series has {b}"),
        });
    }
    let p = if cfg.holdout { b - 1 } else { b };
    let forecasts = forecast_next(&series, &analysis, p, cfg.tau_decay).stage("forecast")?;
    let error = if cfg.holdout {
        Some(holdout_error(&series, analysis.w, p, &forecasts).stage("forecast")?)
    } else {
        None
    };
    let table = transition_table(&analysis.trajectories, p).stage("forecast")?;
    timer.lap("forecast");

    let dir = output_dir(cfg);
    make_dir(&dir)?;
    let mut artifacts = Artifacts::new(dir);
    write_analysis(&analysis, &mut artifacts)?;
    io::write_json(&artifacts.path("forecast.json"), &forecasts).stage("output")?;
    io::write_forecasts_csv(&artifacts.path("forecast.csv"), series.names(), &forecasts)
        .stage("output")?;
    let export = TransitionExport {
        window: p,
        concepts: table.lambda.nrows(),
        lambda: rows(&table.lambda),
        occupancy: table.occupancy[..p].to_vec(),
        series: analysis
            .trajectories
            .iter()
            .zip(&table.prob)
            .map(|(t, s)| SeriesTransition {
                series: t.series_index,
                current: t.labels[p - 1],
                scores: rows(&s.prob),
                uniform_fallback: s.fallback,
            })
            .collect(),
    };
    io::write_json(&artifacts.path("transitions.json"), &export).stage("output")?;
    timer.lap("output");
    let mut report = RunReport::from_analysis("forecast", cfg, series.len(), &analysis)
        .with_forecast(p + 1, &forecasts, error);
    let paths = finish(&mut report, &mut artifacts, timer)?;
    Ok((report, paths))
}

/// One line of online output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineRecord {
    pub window: usize,
    pub k_hat: usize,
    pub new_concepts: usize,
    pub catalog_size: usize,
    /// RMSE of the previous record's forecast against this segment.
    pub previous_forecast_rmse: Option<f64>,
    pub forecast_window: Option<usize>,
    pub predicted_concepts: Option<Vec<usize>>,
    pub profile_fallbacks: Option<usize>,
}

fn forecast_rmse(forecasts: &[Forecast], actual: &DMatrix<f64>) -> Result<f64, RunError> {
    let mut pred = Vec::new();
    let mut act = Vec::new();
    for f in forecasts {
        pred.extend_from_slice(&f.predicted_values);
        act.extend(actual.column(f.series_index).iter().copied());
    }
    regimekit_core::drift::evaluate_rmse(&pred, &act).stage("online")
}

/// Replays `stream` in segments of the configured window size (the grid
/// must name exactly one size), writing one JSON record per segment once
/// past the warm-up.
pub fn cmd_online<W: Write>(
    cfg: &RunConfig,
    stream: &Path,
    has_header: bool,
    out: &mut W,
) -> Result<Vec<PathBuf>, RunError> {
    let w = match cfg.grid.as_deref() {
        Some([w]) => *w,
        _ => return Err(RunError::config("config", "online mode needs a fixed --window")),
    };
    let reader: Box<dyn Read> = if stream == Path::new("-") {
        Box::new(stdio::stdin())
    } else {
        Box::new(BufReader::new(
            File::open(stream).map_err(|e| IoError::file(stream, e)).stage("load")?,
        ))
    };
    let mut segments = io::SegmentReader::new(reader, w, has_header).stage("load")?;
    let dir = output_dir(cfg);
    make_dir(&dir)?;
    let mut artifacts = Artifacts::new(dir);
    let log_path = artifacts.path("online.jsonl");
    let mut log = File::create(&log_path)
        .map_err(|e| IoError::file(&log_path, e))
        .stage("output")?;
    let mut state: Option<OnlineState> = None;
    let mut pending: Option<Vec<Forecast>> = None;
    while let Some(segment) = segments.next_segment().stage("stream")? {
        let st = match &mut state {
            Some(s) => s,
            None => state.insert(OnlineState::new(w, segment.ncols(), cfg.analysis()).stage("online")?),
        };
        let update = online_step(st, &segment).stage("online")?;
        let previous_forecast_rmse = match pending.take() {
            Some(f) => Some(forecast_rmse(&f, &segment)?),
            None => None,
        };
        let record = OnlineRecord {
            window: update.window_index,
            k_hat: update.k_hat,
            new_concepts: update.new_concepts,
            catalog_size: st.catalog.len(),
            previous_forecast_rmse,
            forecast_window: update.forecasts.as_ref().map(|_| update.window_index + 1),
            predicted_concepts: update
                .forecasts
                .as_ref()
                .map(|f| f.iter().map(|x| x.predicted_concept).collect()),
            profile_fallbacks: update
                .forecasts
                .as_ref()
                .map(|f| f.iter().filter(|x| x.fallback).count()),
        };
        pending = update.forecasts;
        if record.forecast_window.is_some() {
            let line = serde_json::to_string(&record).map_err(IoError::from).stage("output")?;
            writeln!(out, "{line}")
                .and_then(|_| writeln!(log, "{line}"))
                .map_err(|e| IoError::file(&log_path, e))
                .stage("output")?;
        }
    }
    let state = state.ok_or(IoError::Empty).stage("stream")?;
    io::write_json(&artifacts.path("catalog.json"), &state.catalog).stage("output")?;
    io::write_trajectories_csv(&artifacts.path("trajectories.csv"), &state.trajectories)
        .stage("output")?;
    if let Some(f) = pending {
        io::write_json(&artifacts.path("forecast.json"), &f).stage("output")?;
    }
    Ok(artifacts.written.iter().map(|p| artifacts.root.join(p)).collect())
}

/// Agreement of a run's labels with ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub window: usize,
    pub window_ari: Vec<f64>,
    pub min_ari: f64,
    pub catalog_size: usize,
    pub truth_labels: usize,
    pub forecast_rmse: Option<f64>,
    pub forecast_rmse_normalized: Option<f64>,
}

/// Per-window ARI of a run's labels against ground truth whose segments
/// have the run's window length.
pub fn cmd_eval(run_dir: &Path, truth_path: &Path) -> Result<Vec<PathBuf>, RunError> {
    let report_path = run_dir.join("report.json");
    let text = fs::read_to_string(&report_path)
        .map_err(|e| IoError::file(&report_path, e))
        .stage("eval")?;
    let report: RunReport = serde_json::from_str(&text).map_err(IoError::from).stage("eval")?;
    let w = report.window.w_star;
    let truth = io::read_ground_truth_csv(truth_path, w).stage("eval")?;
    let segments = truth.labels.first().map_or(0, Vec::len);
    let mut window_ari = Vec::new();
    for row in &report.windows {
        let p = row.window;
        if p > segments {
            return Err(RunError {
                stage: "eval",
                kind: ExitKind::Data,
                message: format!("ground truth has {segments} segments, run has window {p}"),
            });
        }
        let labels = io::read_labels_csv(&run_dir.join(format!("windows/labels_{p:03}.csv"))).stage("eval")?;
        let reference: Vec<usize> = truth.segment(p - 1).iter().map(|&l| l as usize).collect();
        window_ari.push(adjusted_rand_index(&labels, &reference).stage("eval")?);
    }
    let mut distinct: Vec<u8> = truth.labels.iter().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    let eval = EvalReport {
        window: w,
        min_ari: window_ari.iter().copied().fold(f64::INFINITY, f64::min),
        window_ari,
        catalog_size: report.catalog.size,
        truth_labels: distinct.len(),
        forecast_rmse: report.forecast.as_ref().and_then(|f| f.rmse),
        forecast_rmse_normalized: report.forecast.as_ref().and_then(|f| f.rmse_normalized),
    };
    let out = run_dir.join("eval.json");
    io::write_json(&out, &eval).stage("output")?;
    Ok(vec![out])
}
