//! Window-size selection from concept-consistency scores.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;

use crate::data::SeriesSet;
use crate::error::{Error, Result};
use crate::pipeline::{initial_solve, window_input, AnalysisConfig, Executor};

/// Concept-consistency of one candidate window size.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowScore {
    pub w: usize,
    /// `max_p C_p / w`.
    pub ws: f64,
    /// Estimated concept count `C_p` of every window.
    pub counts: Vec<usize>,
    /// Number of full windows.
    pub b: usize,
}

impl WindowScore {
    pub fn from_counts(w: usize, counts: Vec<usize>) -> Self {
        let max = counts.iter().copied().max().unwrap_or(0);
        WindowScore {
            w,
            ws: max as f64 / w as f64,
            b: counts.len(),
            counts,
        }
    }

    pub fn max_count(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowScoreSet {
    pub entries: Vec<WindowScore>,
    /// Candidates in scan order.
    pub candidate_grid: Vec<usize>,
}

impl WindowScoreSet {
    pub fn get(&self, w: usize) -> Option<&WindowScore> {
        self.entries.iter().find(|e| e.w == w)
    }

    /// Scores restricted to the given window sizes (missing sizes skipped).
    pub fn subset(&self, grid: &[usize]) -> WindowScoreSet {
        WindowScoreSet {
            entries: grid.iter().filter_map(|&w| self.get(w).cloned()).collect(),
            candidate_grid: grid.iter().copied().filter(|&w| self.get(w).is_some()).collect(),
        }
    }
}

/// Selected window size.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowPlan {
    pub w_star: usize,
    pub b: usize,
    /// Two-group code length at the chosen split.
    pub mdl_value: f64,
    /// Window sizes in the high-score group, by decreasing score.
    pub high_group: Vec<usize>,
    /// Window sizes in the low-score group, by decreasing score.
    pub low_group: Vec<usize>,
    /// False when no split was possible (one candidate, or all scores
    /// equal) and the choice fell back to a default.
    pub informative: bool,
}

/// Code length of one group: `log2(mean)` for the model plus
/// `log2(1 + |x - mean| / mean)` bits per member.
pub fn group_code_length(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let residuals: f64 = values
        .iter()
        .map(|x| (1.0 + (x - mean).abs() / mean).log2())
        .sum();
    mean.log2() + residuals
}

/// Splits the scores, sorted by decreasing value, into a high group and a
/// low group at the border of minimum total code length, and returns the
/// window size on the high side of that border.
///
/// The low group collects the window sizes whose score collapses because
/// concepts can no longer be told apart; the selected size is the most
/// consistent one that still resolves concepts. Ties in score are ordered
/// by window size so the result does not depend on candidate order.
pub fn mdl_select(scores: &WindowScoreSet) -> Result<WindowPlan> {
    let mut sorted: Vec<&WindowScore> = scores.entries.iter().collect();
    if sorted.is_empty() {
        return Err(Error::InvalidArgument("no window scores to select from".into()));
    }
    if let Some(bad) = sorted.iter().find(|e| !(e.ws > 0.0) || !e.ws.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "window {} has non-positive score {}",
            bad.w, bad.ws
        )));
    }
    sorted.sort_by(|a, b| b.ws.total_cmp(&a.ws).then(a.w.cmp(&b.w)));
    let all_equal = sorted.iter().all(|e| e.ws == sorted[0].ws);
    if sorted.len() == 1 || all_equal {
        let pick = sorted.iter().max_by_key(|e| e.w).expect("non-empty");
        return Ok(WindowPlan {
            w_star: pick.w,
            b: pick.b,
            mdl_value: group_code_length(&[pick.ws]),
            high_group: sorted.iter().map(|e| e.w).collect(),
            low_group: Vec::new(),
            informative: false,
        });
    }
    let values: Vec<f64> = sorted.iter().map(|e| e.ws).collect();
    let mut best: Option<(f64, usize)> = None;
    for split in 1..values.len() {
        let j = group_code_length(&values[..split]) + group_code_length(&values[split..]);
        if best.is_none_or(|(bj, _)| j < bj) {
            best = Some((j, split));
        }
    }
    let (mdl_value, split) = best.expect("at least one split");
    let border = sorted[split - 1];
    Ok(WindowPlan {
        w_star: border.w,
        b: border.b,
        mdl_value,
        high_group: sorted[..split].iter().map(|e| e.w).collect(),
        low_group: sorted[split..].iter().map(|e| e.w).collect(),
        informative: true,
    })
}

/// Candidate sizes: divisors of `t` in `[max(8, t/40), t/3]`, thinned to at
/// most 12 evenly spread values. A length with no such divisor gets 12
/// evenly spread sizes from the same range instead.
pub fn default_grid(t: usize) -> Vec<usize> {
    let lo = (t as f64 / 40.0).max(8.0);
    let hi = t as f64 / 3.0;
    let mut grid: Vec<usize> = (1..=t)
        .filter(|&w| t % w == 0 && w as f64 >= lo && w as f64 <= hi)
        .collect();
    if grid.is_empty() {
        let (a, b) = (lo.ceil() as usize, (hi.floor() as usize).max(2));
        if a > b {
            return alloc::vec![b.max(2).min(t)];
        }
        grid = (a..=b).collect();
    }
    spread(grid, 12)
}

fn spread(grid: Vec<usize>, cap: usize) -> Vec<usize> {
    if grid.len() <= cap {
        return grid;
    }
    let n = grid.len();
    let mut out: Vec<usize> = (0..cap)
        .map(|i| grid[((i * (n - 1)) as f64 / (cap - 1) as f64).round() as usize])
        .collect();
    out.dedup();
    out
}

fn check_window(series: &SeriesSet, w: usize) -> Result<()> {
    if w < 2 {
        return Err(Error::InvalidArgument(format!("window size {w} is below 2")));
    }
    if w > series.len() {
        return Err(Error::WindowTooLarge {
            window: w,
            len: series.len(),
        });
    }
    Ok(())
}

/// Concept counts of every full window of size `w` (from the initial
/// solve) and the resulting score.
pub fn score_window<E: Executor>(
    series: &SeriesSet,
    w: usize,
    cfg: &AnalysisConfig,
    exec: &E,
) -> Result<WindowScore> {
    check_window(series, w)?;
    let b = series.window_count(w);
    let counts = exec
        .run(b, |i| {
            let sub = window_input(series, i + 1, w, cfg.normalize)?;
            initial_solve(&sub, cfg, &[]).map(|s| s.estimate.k_hat)
        })
        .into_iter()
        .collect::<Result<Vec<usize>>>()?;
    Ok(WindowScore::from_counts(w, counts))
}

/// Scores the grid in order and selects a window size. With `epsilon`
/// set, scanning stops once two consecutive scores differ by less than it.
pub fn plan_windows<E: Executor>(
    series: &SeriesSet,
    grid: &[usize],
    cfg: &AnalysisConfig,
    epsilon: Option<f64>,
    exec: &E,
) -> Result<(WindowScoreSet, WindowPlan)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("window grid is empty".into()));
    }
    for &w in grid {
        check_window(series, w)?;
    }
    let mut entries: Vec<WindowScore> = Vec::new();
    match epsilon {
        Some(eps) => {
            for &w in grid {
                let score = score_window(series, w, cfg, exec)?;
                let stop = entries
                    .last()
                    .is_some_and(|prev| (score.ws - prev.ws).abs() < eps);
                entries.push(score);
                if stop {
                    break;
                }
            }
        }
        None => {
            // Flatten all (candidate, window) solves into one batch.
            let jobs: Vec<(usize, usize)> = grid
                .iter()
                .flat_map(|&w| (1..=series.window_count(w)).map(move |p| (w, p)))
                .collect();
            let counts = exec
                .run(jobs.len(), |j| {
                    let (w, p) = jobs[j];
                    let sub = window_input(series, p, w, cfg.normalize)?;
                    initial_solve(&sub, cfg, &[]).map(|s| s.estimate.k_hat)
                })
                .into_iter()
                .collect::<Result<Vec<usize>>>()?;
            let mut offset = 0;
            for &w in grid {
                let b = series.window_count(w);
                entries.push(WindowScore::from_counts(w, counts[offset..offset + b].to_vec()));
                offset += b;
            }
        }
    }
    let scores = WindowScoreSet {
        candidate_grid: entries.iter().map(|e| e.w).collect(),
        entries,
    };
    let plan = mdl_select(&scores)?;
    Ok((scores, plan))
}
