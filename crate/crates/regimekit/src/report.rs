//! Run configuration and the JSON run report.

use std::collections::BTreeMap;
use std::path::PathBuf;

use regimekit_core::kernels::KernelKind;
use regimekit_core::pipeline::{Analysis, AnalysisConfig, ForecastError};
use regimekit_core::representation::SolverConfig;
use regimekit_core::drift;
use serde::{Deserialize, Serialize};

/// Synthetic input dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_series: usize,
    pub n_segments: usize,
    pub segment_len: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_series: 500,
            n_segments: 10,
            segment_len: 78,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "source")]
pub enum InputSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
    },
    Synth(SynthSpec),
}

impl Default for InputSource {
    fn default() -> Self {
        InputSource::Synth(SynthSpec::default())
    }
}

/// Everything needed to reproduce a run. The defaults analyse the standard
/// synthetic set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: InputSource,
    pub kernel: KernelKind,
    pub normalize: bool,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Block count of the initial solve.
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub tau_gap: f64,
    /// `None` derives the catalog threshold from the first window.
    pub rho: Option<f64>,
    pub tau_decay: f64,
    /// `None` scans the default grid.
    pub grid: Option<Vec<usize>>,
    pub epsilon: Option<f64>,
    pub nystrom: Option<usize>,
    pub seed: u64,
    /// Withhold the final window and score the forecast against it.
    pub holdout: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let a = AnalysisConfig::default();
        RunConfig {
            input: InputSource::default(),
            kernel: a.kernel,
            normalize: a.normalize,
            alpha: a.solver.alpha,
            beta: a.solver.beta,
            gamma: a.solver.gamma,
            k: a.solver.k,
            tol: a.solver.tol,
            max_iter: a.solver.max_iter,
            tau_gap: a.tau_gap,
            rho: a.rho,
            tau_decay: a.tau_decay,
            grid: a.grid,
            epsilon: a.epsilon,
            nystrom: a.nystrom,
            seed: a.seed,
            holdout: false,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            kernel: self.kernel,
            normalize: self.normalize,
            solver: SolverConfig {
                alpha: self.alpha,
                beta: self.beta,
                gamma: self.gamma,
                k: self.k,
                max_iter: self.max_iter,
                tol: self.tol,
            },
            tau_gap: self.tau_gap,
            rho: self.rho,
            tau_decay: self.tau_decay,
            grid: self.grid.clone(),
            epsilon: self.epsilon,
            nystrom: self.nystrom,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub w: usize,
    pub ws: f64,
    pub b: usize,
    pub max_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSelection {
    pub w_star: usize,
    pub b: usize,
    /// False when the size was given or no split of the scores existed.
    pub informative: bool,
    pub mdl_value: Option<f64>,
    pub high_group: Vec<usize>,
    pub low_group: Vec<usize>,
    pub scores: Vec<ScoreRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window: usize,
    pub k_hat: usize,
    pub initial_iterations: usize,
    pub initial_converged: bool,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: Option<f64>,
    pub cluster_sizes: Vec<usize>,
    pub degenerate_kernel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRow {
    pub id: usize,
    pub first_window: usize,
    /// Series-window assignments over the whole run.
    pub occupancy: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogSummary {
    pub size: usize,
    pub rho: Option<f64>,
    pub concepts: Vec<ConceptRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub series: usize,
    pub windows: usize,
    /// Series whose concept changed at least once.
    pub drifting_series: usize,
    /// Adjacent-window concept changes over all series.
    pub changes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCount {
    pub from: usize,
    pub to: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    /// Window being forecast.
    pub target_window: usize,
    pub history_windows: usize,
    pub rmse: Option<f64>,
    pub rmse_normalized: Option<f64>,
    /// Series forecast from the rescaled catalog profile.
    pub profile_fallbacks: usize,
    /// Predicted concept per series.
    pub predicted_concepts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: RunConfig,
    pub steps: usize,
    pub series: usize,
    pub window: WindowSelection,
    pub windows: Vec<WindowRow>,
    pub catalog: CatalogSummary,
    pub trajectories: TrajectorySummary,
    /// Most frequent concept changes between adjacent windows.
    pub transitions: Vec<TransitionCount>,
    pub forecast: Option<ForecastSummary>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    /// Wall-clock milliseconds per stage; not reproducible.
    pub timing_ms: BTreeMap<String, u64>,
}

impl RunReport {
    pub fn from_analysis(command: &str, config: &RunConfig, steps: usize, analysis: &Analysis) -> Self {
        let window = match (&analysis.plan, &analysis.scores) {
            (Some(plan), scores) => WindowSelection {
                w_star: plan.w_star,
                b: plan.b,
                informative: plan.informative,
                mdl_value: plan.informative.then_some(plan.mdl_value),
                high_group: plan.high_group.clone(),
                low_group: plan.low_group.clone(),
                scores: scores.iter().flat_map(|s| &s.entries).map(score_row).collect(),
            },
            (None, _) => WindowSelection {
                w_star: analysis.w,
                b: analysis.window_count(),
                informative: false,
                mdl_value: None,
                high_group: vec![analysis.w],
                low_group: Vec::new(),
                scores: Vec::new(),
            },
        };
        let windows = analysis
            .windows
            .iter()
            .map(|r| WindowRow {
                window: r.window_index,
                k_hat: r.k_hat(),
                initial_iterations: r.initial_iterations,
                initial_converged: r.initial_converged,
                iterations: r.representation.iterations,
                converged: r.representation.converged,
                final_objective: r.representation.objective_trace.last().copied(),
                cluster_sizes: r.clustering.sizes(),
                degenerate_kernel: r.degenerate_kernel,
            })
            .collect();
        let k = analysis.catalog.len();
        let occ = drift::occupancy(&analysis.trajectories, k);
        let catalog = CatalogSummary {
            size: k,
            rho: analysis.catalog.rho,
            concepts: analysis
                .catalog
                .profiles
                .iter()
                .map(|p| ConceptRow {
                    id: p.id,
                    first_window: p.first_window,
                    occupancy: occ.iter().map(|row| row[p.id]).sum(),
                })
                .collect(),
        };
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut drifting = 0;
        for t in &analysis.trajectories {
            let mut moved = false;
            for pair in t.labels.windows(2) {
                if pair[0] != pair[1] {
                    *counts.entry((pair[0], pair[1])).or_default() += 1;
                    moved = true;
                }
            }
            drifting += moved as usize;
        }
        let changes = counts.values().sum();
        let mut transitions: Vec<TransitionCount> = counts
            .into_iter()
            .map(|((from, to), count)| TransitionCount { from, to, count })
            .collect();
        transitions.sort_by(|a, b| b.count.cmp(&a.count).then((a.from, a.to).cmp(&(b.from, b.to))));
        transitions.truncate(10);
        RunReport {
            command: command.to_string(),
            config: config.clone(),
            steps,
            series: analysis.trajectories.len(),
            window,
            windows,
            catalog,
            trajectories: TrajectorySummary {
                series: analysis.trajectories.len(),
                windows: analysis.window_count(),
                drifting_series: drifting,
                changes,
            },
            transitions,
            forecast: None,
            artifacts: Vec::new(),
            timing_ms: BTreeMap::new(),
        }
    }

    pub fn with_forecast(
        mut self,
        target_window: usize,
        forecasts: &[drift::Forecast],
        error: Option<ForecastError>,
    ) -> Self {
        self.forecast = Some(ForecastSummary {
            target_window,
            history_windows: target_window - 1,
            rmse: error.map(|e| e.rmse),
            rmse_normalized: error.map(|e| e.rmse_normalized),
            profile_fallbacks: forecasts.iter().filter(|f| f.fallback).count(),
            predicted_concepts: forecasts.iter().map(|f| f.predicted_concept).collect(),
        });
        self
    }

    /// The report with timings cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        RunReport {
            timing_ms: BTreeMap::new(),
            ..self.clone()
        }
    }
}

fn score_row(e: &regimekit_core::segmentation::WindowScore) -> ScoreRow {
    ScoreRow {
        w: e.w,
        ws: e.ws,
        b: e.b,
        max_count: e.max_count(),
    }
}
