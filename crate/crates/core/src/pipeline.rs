//! End-to-end analysis: window-size planning, per-window concept
//! identification, catalog merging and next-window forecasting.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;

use crate::concepts::{
    estimate_k, merge_into_catalog, spectral_cluster, ConceptCatalog, ConceptEstimate,
    WindowClustering, DEFAULT_TAU_GAP,
};
use crate::data::{mean_std, znormalize_window, SeriesSet, Subseries};
use crate::drift::{
    build_trajectories, evaluate_rmse, forecast_values, Forecast, Trajectory, TransitionTable,
    DEFAULT_TAU_DECAY,
};
use crate::error::{Error, Result};
use crate::kernels::{gram, nystrom_approximate, select_prototypes, GramMatrix, KernelKind};
use crate::representation::{solve, RepresentationMatrix, SolverConfig};
use crate::segmentation::{default_grid, plan_windows, WindowPlan, WindowScoreSet};

/// Windows an online run absorbs before it starts forecasting.
pub const ONLINE_WARMUP: usize = 2;

/// Runs independent jobs `0..jobs` and returns their results in order.
pub trait Executor {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..jobs).map(f).collect()
    }
}

/// Settings of a full analysis.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AnalysisConfig {
    pub kernel: KernelKind,
    /// Z-normalise each series within each window before the kernel.
    pub normalize: bool,
    /// Solver weights; `k` is the block count of the initial solve.
    pub solver: SolverConfig,
    pub tau_gap: f64,
    /// Catalog threshold; `None` derives it from the first window.
    pub rho: Option<f64>,
    pub tau_decay: f64,
    /// Candidate window sizes; `None` uses [`default_grid`].
    pub grid: Option<Vec<usize>>,
    /// Stop scanning the grid once consecutive scores differ by less than
    /// this.
    pub epsilon: Option<f64>,
    /// Number of prototypes for the low-rank kernel; `None` is exact.
    pub nystrom: Option<usize>,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            kernel: KernelKind::Gaussian,
            normalize: true,
            solver: SolverConfig::default(),
            tau_gap: DEFAULT_TAU_GAP,
            rho: None,
            tau_decay: DEFAULT_TAU_DECAY,
            grid: None,
            epsilon: None,
            nystrom: None,
            seed: 0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.kernel.validate()?;
        if !(self.tau_gap > 0.0 && self.tau_gap < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_gap must lie in (0, 1), got {}",
                self.tau_gap
            )));
        }
        if !(self.tau_decay > 0.0 && self.tau_decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_decay must lie in (0, 1), got {}",
                self.tau_decay
            )));
        }
        if let Some(rho) = self.rho {
            if !(rho.is_finite() && rho >= 0.0) {
                return Err(Error::InvalidArgument(format!("rho must be >= 0, got {rho}")));
            }
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {eps}")));
            }
        }
        if self.nystrom == Some(0) {
            return Err(Error::EmptyPrototypes);
        }
        Ok(())
    }
}

/// Window `p` of size `w`, z-normalised per series when requested.
pub fn window_input(series: &SeriesSet, p: usize, w: usize, normalize: bool) -> Result<Subseries> {
    let sub = series.window(p, w)?;
    Ok(if normalize { znormalize_window(&sub) } else { sub })
}

/// Exact kernel, or the low-rank one when prototypes are configured.
/// Prototypes are the series nearest to `profiles`, topped up at random.
pub fn window_gram(sub: &Subseries, cfg: &AnalysisConfig, profiles: &[Vec<f64>]) -> Result<GramMatrix> {
    match cfg.nystrom {
        Some(m) if m < sub.width() => {
            let seed = cfg.seed ^ (sub.window_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let protos = select_prototypes(sub, profiles, m, seed)?;
            nystrom_approximate(sub, &protos, cfg.kernel)
        }
        _ => gram(sub, cfg.kernel),
    }
}

/// Representation at the configured block count and the concept count read
/// from it.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSolve {
    pub representation: RepresentationMatrix,
    pub estimate: ConceptEstimate,
    pub degenerate_kernel: bool,
}

pub fn initial_solve(sub: &Subseries, cfg: &AnalysisConfig, profiles: &[Vec<f64>]) -> Result<InitialSolve> {
    let g = window_gram(sub, cfg, profiles)?;
    let representation = solve(&g, &cfg.solver)?;
    let estimate = estimate_k(&representation.z, cfg.tau_gap)?;
    Ok(InitialSolve {
        representation,
        estimate,
        degenerate_kernel: g.degenerate,
    })
}

/// Everything computed for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub window_index: usize,
    pub estimate: ConceptEstimate,
    pub initial_iterations: usize,
    pub initial_converged: bool,
    /// Representation re-solved with the estimated concept count.
    pub representation: RepresentationMatrix,
    /// Clustering with centroids on the (normalised) window.
    pub clustering: WindowClustering,
    pub degenerate_kernel: bool,
}

impl WindowResult {
    pub fn k_hat(&self) -> usize {
        self.estimate.k_hat
    }
}

/// Solves, estimates the concept count, re-solves with it and clusters.
/// `sub` must already be normalised if normalisation is wanted.
pub fn identify_window(sub: &Subseries, cfg: &AnalysisConfig, profiles: &[Vec<f64>]) -> Result<WindowResult> {
    let g = window_gram(sub, cfg, profiles)?;
    let first = solve(&g, &cfg.solver)?;
    let estimate = estimate_k(&first.z, cfg.tau_gap)?;
    let k_hat = estimate.k_hat;
    let representation = if k_hat == cfg.solver.k {
        first.clone()
    } else {
        solve(&g, &cfg.solver.with_k(k_hat))?
    };
    let clustering = spectral_cluster(&representation.z, k_hat, cfg.seed, sub.window_index)?
        .with_centroids(sub)?;
    Ok(WindowResult {
        window_index: sub.window_index,
        estimate,
        initial_iterations: first.iterations,
        initial_converged: first.converged,
        representation,
        clustering,
        degenerate_kernel: g.degenerate,
    })
}

/// Result of analysing a series set at one window size.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub w: usize,
    /// Present when the window size was selected from a grid.
    pub plan: Option<WindowPlan>,
    pub scores: Option<WindowScoreSet>,
    pub windows: Vec<WindowResult>,
    pub catalog: ConceptCatalog,
    pub trajectories: Vec<Trajectory>,
}

impl Analysis {
    pub fn window_count(&self) -> usize {
        self.windows.len()
    }

    /// Number of concepts first seen at or before window `p`.
    pub fn concepts_known_at(&self, p: usize) -> usize {
        self.catalog
            .profiles
            .iter()
            .filter(|c| c.first_window <= p)
            .count()
    }
}

/// Selects the window size from the configured grid, then analyses at it.
pub fn analyze<E: Executor>(series: &SeriesSet, cfg: &AnalysisConfig, exec: &E) -> Result<Analysis> {
    cfg.validate()?;
    let grid = cfg.grid.clone().unwrap_or_else(|| default_grid(series.len()));
    let (scores, plan) = match grid.as_slice() {
        [] => return Err(Error::InvalidArgument("window grid is empty".into())),
        [only] => (
            None,
            WindowPlan {
                w_star: *only,
                b: series.window_count(*only),
                mdl_value: 0.0,
                high_group: alloc::vec![*only],
                low_group: Vec::new(),
                informative: false,
            },
        ),
        _ => {
            let (s, p) = plan_windows(series, &grid, cfg, cfg.epsilon, exec)?;
            (Some(s), p)
        }
    };
    let mut analysis = analyze_at(series, plan.w_star, cfg, exec)?;
    analysis.plan = Some(plan);
    analysis.scores = scores;
    Ok(analysis)
}

/// Identifies concepts in every full window of size `w`, merges them into
/// one catalog in window order and builds per-series trajectories.
pub fn analyze_at<E: Executor>(series: &SeriesSet, w: usize, cfg: &AnalysisConfig, exec: &E) -> Result<Analysis> {
    cfg.validate()?;
    if w < 2 {
        return Err(Error::InvalidArgument(format!("window size {w} is below 2")));
    }
    let b = series.window_count(w);
    if b == 0 {
        return Err(Error::WindowTooLarge {
            window: w,
            len: series.len(),
        });
    }
    let run = |p: usize, profiles: &[Vec<f64>]| {
        let sub = window_input(series, p, w, cfg.normalize)?;
        identify_window(&sub, cfg, profiles)
    };
    let windows: Vec<WindowResult> = if cfg.nystrom.is_some() {
        // Later windows take prototypes near the first window's concepts.
        let first = run(1, &[])?;
        let profiles = first.clustering.centroids.clone();
        let rest = exec.run(b - 1, |i| run(i + 2, &profiles));
        core::iter::once(Ok(first)).chain(rest).collect::<Result<_>>()?
    } else {
        exec.run(b, |i| run(i + 1, &[])).into_iter().collect::<Result<_>>()?
    };
    let mut catalog = ConceptCatalog::new(cfg.rho);
    for r in &windows {
        merge_into_catalog(&mut catalog, &r.clustering)?;
    }
    let clusterings: Vec<WindowClustering> = windows.iter().map(|r| r.clustering.clone()).collect();
    let trajectories = build_trajectories(&catalog, &clusterings)?;
    Ok(Analysis {
        w,
        plan: None,
        scores: None,
        windows,
        catalog,
        trajectories,
    })
}

/// Transition table at window `p` over the concepts seen in windows
/// `1..=p`.
pub fn transition_table(trajectories: &[Trajectory], p: usize) -> Result<TransitionTable> {
    let k = trajectories
        .iter()
        .flat_map(|t| t.labels.iter().take(p).copied())
        .max()
        .map_or(0, |m| m + 1);
    TransitionTable::build(trajectories, k, p)
}

/// Forecasts window `p + 1` of every series from trajectories and raw
/// windows `1..=p`. `history[l]` is the raw `w x N` block of window `l + 1`.
/// Only concepts first seen by window `p` take part.
pub fn forecast_from_history(
    trajectories: &[Trajectory],
    catalog: &ConceptCatalog,
    history: &[DMatrix<f64>],
    p: usize,
    tau_decay: f64,
) -> Result<Vec<Forecast>> {
    if p < 2 || history.len() < p {
        return Err(Error::InsufficientHistory {
            needed: 2,
            have: p.min(history.len()),
        });
    }
    let prefix: Vec<Trajectory> = trajectories
        .iter()
        .map(|t| {
            if t.labels.len() < p {
                return Err(Error::InsufficientHistory {
                    needed: p,
                    have: t.labels.len(),
                });
            }
            Ok(Trajectory {
                series_index: t.series_index,
                labels: t.labels[..p].to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    let table = transition_table(&prefix, p)?;
    let predicted = table.predictions(&prefix);
    let n = prefix.len();
    let mut out = Vec::with_capacity(n);
    for (i, t) in prefix.iter().enumerate() {
        let cols: Vec<Vec<f64>> = history[..p]
            .iter()
            .map(|block| {
                if block.ncols() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "history block has {} series, expected {n}",
                        block.ncols()
                    )));
                }
                Ok(block.column(i).iter().copied().collect())
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let profile = catalog
            .profile(predicted[i])
            .map(|c| c.centroid.as_slice())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown concept {}", predicted[i])))?;
        out.push(forecast_values(
            t.series_index,
            &t.labels,
            &refs,
            predicted[i],
            tau_decay,
            profile,
        )?);
    }
    Ok(out)
}

/// Forecasts window `p + 1` from an analysis, using windows `1..=p` only.
pub fn forecast_next(series: &SeriesSet, analysis: &Analysis, p: usize, tau_decay: f64) -> Result<Vec<Forecast>> {
    if p > analysis.window_count() {
        return Err(Error::InsufficientHistory {
            needed: p,
            have: analysis.window_count(),
        });
    }
    let history: Vec<DMatrix<f64>> = (1..=p)
        .map(|l| series.window(l, analysis.w).map(|s| s.values))
        .collect::<Result<_>>()?;
    forecast_from_history(&analysis.trajectories, &analysis.catalog, &history, p, tau_decay)
}

/// Forecast error against the actual next window.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForecastError {
    /// Pooled over all series and steps, in the data's own units.
    pub rmse: f64,
    /// Pooled after z-normalising each series with the mean and standard
    /// deviation of its history.
    pub rmse_normalized: f64,
}

/// Scores forecasts for window `p + 1` against the series.
pub fn holdout_error(series: &SeriesSet, w: usize, p: usize, forecasts: &[Forecast]) -> Result<ForecastError> {
    let actual = series.window(p + 1, w)?;
    let history = series.values().rows(0, p * w);
    let mut pred = Vec::new();
    let mut act = Vec::new();
    let mut pred_z = Vec::new();
    let mut act_z = Vec::new();
    for f in forecasts {
        let i = f.series_index;
        if i >= series.width() || f.predicted_values.len() != w {
            return Err(Error::DimensionMismatch(format!(
                "forecast for series {i} has {} values, expected {w}",
                f.predicted_values.len()
            )));
        }
        let past: Vec<f64> = history.column(i).iter().copied().collect();
        let (mean, sd) = mean_std(&past);
        let scale = if sd > 1e-12 { sd } else { 1.0 };
        for (x, y) in f.predicted_values.iter().zip(actual.values.column(i).iter()) {
            pred.push(*x);
            act.push(*y);
            pred_z.push((x - mean) / scale);
            act_z.push((y - mean) / scale);
        }
    }
    Ok(ForecastError {
        rmse: evaluate_rmse(&pred, &act)?,
        rmse_normalized: evaluate_rmse(&pred_z, &act_z)?,
    })
}

/// Incremental analysis over a stream of equal-length segments.
#[derive(Debug, Clone)]
pub struct OnlineState {
    pub cfg: AnalysisConfig,
    pub w: usize,
    pub n: usize,
    pub catalog: ConceptCatalog,
    pub trajectories: Vec<Trajectory>,
    /// Raw segments seen so far.
    pub history: Vec<DMatrix<f64>>,
    pub k_hats: Vec<usize>,
    prototype_profiles: Vec<Vec<f64>>,
}

/// Outcome of absorbing one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineUpdate {
    pub window_index: usize,
    pub k_hat: usize,
    /// Global concept of every series in the new window.
    pub concepts: Vec<usize>,
    pub new_concepts: usize,
    /// Forecasts for the following window, once past the warm-up.
    pub forecasts: Option<Vec<Forecast>>,
}

impl OnlineState {
    pub fn new(w: usize, n: usize, cfg: AnalysisConfig) -> Result<Self> {
        cfg.validate()?;
        if w < 2 {
            return Err(Error::InvalidArgument(format!("window size {w} is below 2")));
        }
        if n < 3 {
            return Err(Error::TooFewSeries(n));
        }
        Ok(OnlineState {
            catalog: ConceptCatalog::new(cfg.rho),
            cfg,
            w,
            n,
            trajectories: (0..n)
                .map(|i| Trajectory {
                    series_index: i,
                    labels: Vec::new(),
                })
                .collect(),
            history: Vec::new(),
            k_hats: Vec::new(),
            prototype_profiles: Vec::new(),
        })
    }

    pub fn windows_seen(&self) -> usize {
        self.history.len()
    }
}

/// Absorbs the next `w x N` segment: identifies its concepts, merges them
/// into the catalog and, after the warm-up, forecasts the next segment.
pub fn online_step(state: &mut OnlineState, segment: &DMatrix<f64>) -> Result<OnlineUpdate> {
    if segment.nrows() != state.w {
        return Err(Error::SegmentLength {
            expected: state.w,
            actual: segment.nrows(),
        });
    }
    if segment.ncols() != state.n {
        return Err(Error::DimensionMismatch(format!(
            "segment has {} series, expected {}",
            segment.ncols(),
            state.n
        )));
    }
    if let Some((idx, _)) = segment.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        return Err(Error::NonFinite {
            row: idx % state.w,
            col: idx / state.w,
        });
    }
    let p = state.history.len() + 1;
    let raw = Subseries::new(p, (p - 1) * state.w, segment.clone());
    let sub = if state.cfg.normalize {
        znormalize_window(&raw)
    } else {
        raw
    };
    let result = identify_window(&sub, &state.cfg, &state.prototype_profiles)?;
    if p == 1 && state.cfg.nystrom.is_some() {
        state.prototype_profiles = result.clustering.centroids.clone();
    }
    let before = state.catalog.len();
    let mapping = merge_into_catalog(&mut state.catalog, &result.clustering)?;
    let concepts: Vec<usize> = result.clustering.labels.iter().map(|&l| mapping[l]).collect();
    for (t, &c) in state.trajectories.iter_mut().zip(&concepts) {
        t.labels.push(c);
    }
    state.history.push(segment.clone());
    state.k_hats.push(result.k_hat());
    let forecasts = if p > ONLINE_WARMUP {
        Some(forecast_from_history(
            &state.trajectories,
            &state.catalog,
            &state.history,
            p,
            state.cfg.tau_decay,
        )?)
    } else {
        None
    };
    Ok(OnlineUpdate {
        window_index: p,
        k_hat: result.k_hat(),
        concepts,
        new_concepts: state.catalog.len() - before,
        forecasts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_syd;

    fn small_cfg() -> AnalysisConfig {
        AnalysisConfig {
            grid: Some(alloc::vec![10]),
            ..AnalysisConfig::default()
        }
    }

    #[test]
    fn serial_runs_in_order() {
        assert_eq!(Serial.run(4, |i| i * i), alloc::vec![0, 1, 4, 9]);
    }

    #[test]
    fn validation() {
        let mut cfg = AnalysisConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.tau_decay = 1.0;
        assert!(cfg.validate().is_err());
        let cfg = AnalysisConfig {
            nystrom: Some(0),
            ..AnalysisConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::EmptyPrototypes)));
    }

    #[test]
    fn small_analysis_is_consistent() {
        let series = generate_syd(12, 4, 10, 3).unwrap();
        let a = analyze(&series, &small_cfg(), &Serial).unwrap();
        assert_eq!(a.w, 10);
        assert_eq!(a.window_count(), 4);
        assert_eq!(a.trajectories.len(), 12);
        for t in &a.trajectories {
            assert_eq!(t.labels.len(), 4);
            assert!(t.labels.iter().all(|&c| c < a.catalog.len()));
        }
        let f = forecast_next(&series, &a, 3, 0.5).unwrap();
        assert_eq!(f.len(), 12);
        let err = holdout_error(&series, 10, 3, &f).unwrap();
        assert!(err.rmse.is_finite() && err.rmse_normalized.is_finite());
    }

    #[test]
    fn online_matches_batch() {
        let series = generate_syd(12, 4, 10, 5).unwrap();
        let cfg = small_cfg();
        let batch = analyze_at(&series, 10, &cfg, &Serial).unwrap();
        let mut state = OnlineState::new(10, 12, cfg).unwrap();
        for p in 1..=4 {
            let seg = series.window(p, 10).unwrap().values;
            let up = online_step(&mut state, &seg).unwrap();
            assert_eq!(up.forecasts.is_some(), p > ONLINE_WARMUP);
        }
        assert_eq!(state.trajectories, batch.trajectories);
        assert_eq!(state.catalog, batch.catalog);
        let bad = DMatrix::zeros(9, 12);
        assert!(matches!(
            online_step(&mut state, &bad),
            Err(Error::SegmentLength { expected: 10, actual: 9 })
        ));
    }
}
