//! Concept trajectories, transition scores between consecutive windows and
//! value forecasts.
//!
//! Window indices in this module are 1-based, as in the trajectory
//! notation `W_1..W_b`; the stored vectors are 0-based.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;

use crate::concepts::{ConceptCatalog, WindowClustering};
use crate::data::mean_std;
use crate::error::{Error, Result};

/// Default recency decay of forecast weights.
pub const DEFAULT_TAU_DECAY: f64 = 0.5;

/// Global concept id of one series in every analysed window.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trajectory {
    pub series_index: usize,
    pub labels: Vec<usize>,
}

/// One trajectory per series from per-window clusterings (in any order)
/// and the catalog's local-to-global mapping.
pub fn build_trajectories(
    catalog: &ConceptCatalog,
    clusterings: &[WindowClustering],
) -> Result<Vec<Trajectory>> {
    let mut ordered: Vec<&WindowClustering> = clusterings.iter().collect();
    ordered.sort_by_key(|c| c.window_index);
    let n = ordered.first().map_or(0, |c| c.labels.len());
    let mut trajectories: Vec<Trajectory> = (0..n)
        .map(|i| Trajectory {
            series_index: i,
            labels: Vec::with_capacity(ordered.len()),
        })
        .collect();
    for c in ordered {
        let mapping = catalog
            .mapping(c.window_index)
            .ok_or(Error::MissingWindow(c.window_index))?;
        if c.labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "window {} labels {} series, expected {}",
                c.window_index,
                c.labels.len(),
                n
            )));
        }
        for (t, &local) in trajectories.iter_mut().zip(&c.labels) {
            t.labels.push(mapping[local]);
        }
    }
    Ok(trajectories)
}

/// `occupancy[l][c]`: number of series in concept `c` at window `l + 1`.
pub fn occupancy(trajectories: &[Trajectory], k: usize) -> Vec<Vec<usize>> {
    let b = trajectories.first().map_or(0, |t| t.labels.len());
    let mut table = vec![vec![0usize; k]; b];
    for t in trajectories {
        for (l, &c) in t.labels.iter().enumerate() {
            table[l][c] += 1;
        }
    }
    table
}

/// Share of adjacent `(r, m)` steps in the trajectory prefix up to window
/// `p`, relative to the prefix length `p`.
pub fn psi(labels: &[usize], p: usize, r: usize, m: usize) -> f64 {
    let p = p.min(labels.len());
    if p < 2 {
        return 0.0;
    }
    let count = labels[..p]
        .windows(2)
        .filter(|pair| pair[0] == r && pair[1] == m)
        .count();
    count as f64 / p as f64
}

/// Ecosystem-level agreement between the occupancy of `r` at one window and
/// of `m` at the next, summed over windows `1..p-1`; a window pair where
/// both counts are zero contributes 0.
pub fn lambda(occupancy: &[Vec<usize>], p: usize, r: usize, m: usize) -> f64 {
    let p = p.min(occupancy.len());
    let mut total = 0.0;
    for l in 0..p.saturating_sub(1) {
        let a = occupancy[l][r];
        let b = occupancy[l + 1][m];
        let hi = a.max(b);
        if hi > 0 {
            total += a.min(b) as f64 / hi as f64;
        }
    }
    total
}

/// `k x k` matrix of [`psi`] values for one series.
pub fn psi_matrix(labels: &[usize], p: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |r, m| psi(labels, p, r, m))
}

/// `k x k` matrix of [`lambda`] values.
pub fn lambda_matrix(occupancy: &[Vec<usize>], p: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |r, m| lambda(occupancy, p, r, m))
}

/// Transition scores of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionScores {
    /// `prob[(r, m)]`: score of moving from `r` to `m`. Rows need not sum
    /// to 1; only the ordering within a row is used.
    pub prob: DMatrix<f64>,
    /// Set when every `psi * lambda` product was zero and the uniform
    /// matrix `1 / k^2` was returned instead.
    pub fallback: bool,
}

/// `P(r -> m) = sum_z psi[r, z] lambda[z, m] / sum_{a, b} psi[a, b] lambda[a, b]`.
pub fn transition_scores(psi: &DMatrix<f64>, lambda: &DMatrix<f64>) -> TransitionScores {
    let k = psi.nrows();
    let denominator = psi.component_mul(lambda).sum();
    if denominator == 0.0 || k == 0 {
        let u = if k == 0 { 0.0 } else { 1.0 / (k * k) as f64 };
        return TransitionScores {
            prob: DMatrix::from_element(k, k, u),
            fallback: true,
        };
    }
    TransitionScores {
        prob: (psi * lambda) / denominator,
        fallback: false,
    }
}

/// Most likely next concept from `current`; ties go to the concept with the
/// larger occupancy at the current window, then the smaller id.
pub fn predict_next(scores: &TransitionScores, current: usize, current_occupancy: &[usize]) -> usize {
    let row = scores.prob.row(current);
    let mut best = 0;
    for m in 1..row.len() {
        let better = row[m] > row[best]
            || (row[m] == row[best] && current_occupancy[m] > current_occupancy[best]);
        if better {
            best = m;
        }
    }
    best
}

/// Per-series `psi`, shared `lambda`, scores and occupancy at window `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub window: usize,
    pub psi: Vec<DMatrix<f64>>,
    pub lambda: DMatrix<f64>,
    pub prob: Vec<TransitionScores>,
    pub occupancy: Vec<Vec<usize>>,
}

impl TransitionTable {
    /// Builds the table from trajectories over `k` concepts at window `p`.
    pub fn build(trajectories: &[Trajectory], k: usize, p: usize) -> Result<Self> {
        let b = trajectories.first().map_or(0, |t| t.labels.len());
        if p < 2 || p > b {
            return Err(Error::InsufficientHistory { needed: 2, have: p.min(b) });
        }
        let occupancy = occupancy(trajectories, k);
        let lambda = lambda_matrix(&occupancy, p, k);
        let psi: Vec<DMatrix<f64>> = trajectories
            .iter()
            .map(|t| psi_matrix(&t.labels, p, k))
            .collect();
        let prob = psi.iter().map(|s| transition_scores(s, &lambda)).collect();
        Ok(TransitionTable {
            window: p,
            psi,
            lambda,
            prob,
            occupancy,
        })
    }

    /// Predicted concept at window `p + 1` for every series.
    pub fn predictions(&self, trajectories: &[Trajectory]) -> Vec<usize> {
        let current_occ = &self.occupancy[self.window - 1];
        trajectories
            .iter()
            .zip(&self.prob)
            .map(|(t, s)| predict_next(s, t.labels[self.window - 1], current_occ))
            .collect()
    }
}

/// Value forecast of one series for the window after the history.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Forecast {
    pub series_index: usize,
    pub predicted_concept: usize,
    pub predicted_values: Vec<f64>,
    /// `(window, weight)` for every past window that contributed.
    pub weights: Vec<(usize, f64)>,
    /// Set when the series never exhibited the predicted concept and the
    /// rescaled catalog profile was used.
    pub fallback: bool,
}

/// Recency-weighted average of the series' past subseries in windows where
/// it exhibited `predicted`.
///
/// `history[l]` holds the series' values in window `l + 1`, for windows
/// `1..=p` with `p = history.len()`. Window `l` gets weight
/// `tau_decay^(p - l + 1)`, renormalised over qualifying windows. When no
/// past window qualifies, `profile` (the predicted concept's catalog
/// centroid) is rescaled to the mean and standard deviation of the most
/// recent window.
pub fn forecast_values(
    series_index: usize,
    labels: &[usize],
    history: &[&[f64]],
    predicted: usize,
    tau_decay: f64,
    profile: &[f64],
) -> Result<Forecast> {
    if !(tau_decay > 0.0 && tau_decay < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "decay must lie in (0, 1), got {tau_decay}"
        )));
    }
    let p = history.len();
    if p == 0 || labels.len() < p {
        return Err(Error::InsufficientHistory {
            needed: 1,
            have: p.min(labels.len()),
        });
    }
    let w = history[0].len();
    if let Some(bad) = history.iter().find(|h| h.len() != w) {
        return Err(Error::SegmentLength {
            expected: w,
            actual: bad.len(),
        });
    }

    let qualifying: Vec<usize> = (1..=p).filter(|&l| labels[l - 1] == predicted).collect();
    if qualifying.is_empty() {
        if profile.len() != w {
            return Err(Error::WindowLengthMismatch {
                expected: w,
                actual: profile.len(),
            });
        }
        let (mean, sd) = mean_std(history[p - 1]);
        let (pm, psd) = mean_std(profile);
        let values = profile
            .iter()
            .map(|x| if psd > 0.0 { mean + sd * (x - pm) / psd } else { mean })
            .collect();
        return Ok(Forecast {
            series_index,
            predicted_concept: predicted,
            predicted_values: values,
            weights: Vec::new(),
            fallback: true,
        });
    }

    let raw: Vec<f64> = qualifying
        .iter()
        .map(|&l| tau_decay.powi((p - l + 1) as i32))
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<(usize, f64)> = qualifying
        .iter()
        .zip(&raw)
        .map(|(&l, &r)| (l, r / total))
        .collect();
    let mut values = vec![0.0; w];
    for &(l, wt) in &weights {
        for (v, x) in values.iter_mut().zip(history[l - 1]) {
            *v += wt * x;
        }
    }
    Ok(Forecast {
        series_index,
        predicted_concept: predicted,
        predicted_values: values,
        weights,
        fallback: false,
    })
}

/// Root mean squared error.
pub fn evaluate_rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "predicted length {} vs actual length {}",
            predicted.len(),
            actual.len()
        )));
    }
    let sse: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sse / predicted.len() as f64).sqrt())
}
