//! Series containers, the synthetic benchmark generator and preprocessing.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Number of generator functions in the synthetic benchmark.
pub const SYD_GENERATORS: u8 = 5;

/// Per-series, per-segment generator index (1-based) of a synthetic set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruth {
    pub segment_len: usize,
    /// `labels[series][segment]`, each in `1..=5`.
    pub labels: Vec<Vec<u8>>,
}

impl GroundTruth {
    /// Labels of every series for one segment.
    pub fn segment(&self, segment: usize) -> Vec<u8> {
        self.labels.iter().map(|row| row[segment]).collect()
    }
}

/// `N` co-evolving series of common length `T`, stored as a `T x N` matrix
/// (one column per series).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSet {
    values: DMatrix<f64>,
    names: Vec<String>,
    ground_truth: Option<GroundTruth>,
}

impl SeriesSet {
    pub fn new(values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let (steps, series) = values.shape();
        if steps < 2 || series < 2 {
            return Err(Error::TooSmall { steps, series });
        }
        if names.len() != series {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} series",
                names.len(),
                series
            )));
        }
        for col in 0..series {
            for row in 0..steps {
                if !values[(row, col)].is_finite() {
                    return Err(Error::NonFinite { row, col });
                }
            }
        }
        Ok(SeriesSet {
            values,
            names,
            ground_truth: None,
        })
    }

    /// Builds a set with default names `s0, s1, ...`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|i| format!("s{i}")).collect();
        Self::new(values, names)
    }

    pub fn with_ground_truth(mut self, truth: GroundTruth) -> Self {
        self.ground_truth = Some(truth);
        self
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of series `N`.
    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    /// Keeps the listed series (in the given order), carrying ground truth.
    pub fn select_series(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.width()) {
            return Err(Error::InvalidArgument(format!("series index {bad} out of range")));
        }
        let values = self.values.select_columns(indices);
        let names = indices.iter().map(|&i| self.names[i].clone()).collect();
        let mut out = Self::new(values, names)?;
        out.ground_truth = self.ground_truth.as_ref().map(|gt| GroundTruth {
            segment_len: gt.segment_len,
            labels: indices.iter().map(|&i| gt.labels[i].clone()).collect(),
        });
        Ok(out)
    }

    /// Keeps time steps `start..end`.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "time range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        let values = self.values.rows(start, end - start).into_owned();
        Self::new(values, self.names.clone())
    }

    /// Number of full non-overlapping windows of size `w`.
    pub fn window_count(&self, w: usize) -> usize {
        if w == 0 {
            0
        } else {
            self.len() / w
        }
    }

    /// The `p`-th (1-based) window of size `w`.
    pub fn window(&self, p: usize, w: usize) -> Result<Subseries> {
        let b = self.window_count(w);
        if w == 0 || b == 0 {
            return Err(Error::WindowTooLarge {
                window: w,
                len: self.len(),
            });
        }
        if p == 0 || p > b {
            return Err(Error::InvalidArgument(format!("window {p} outside 1..={b}")));
        }
        let start = (p - 1) * w;
        Ok(Subseries {
            window_index: p,
            start,
            values: self.values.rows(start, w).into_owned(),
        })
    }

    /// All full windows of size `w`; a trailing remainder shorter than `w`
    /// is dropped.
    pub fn windows(&self, w: usize) -> Result<Vec<Subseries>> {
        let b = self.window_count(w);
        if b == 0 {
            return Err(Error::WindowTooLarge {
                window: w,
                len: self.len(),
            });
        }
        (1..=b).map(|p| self.window(p, w)).collect()
    }
}

/// One window of every series: `w x N`, starting at `(p - 1) * w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subseries {
    /// 1-based window index `p`.
    pub window_index: usize,
    pub start: usize,
    pub values: DMatrix<f64>,
}

impl Subseries {
    pub fn new(window_index: usize, start: usize, values: DMatrix<f64>) -> Self {
        Subseries {
            window_index,
            start,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// Generator `index` (1..=5) of the synthetic benchmark at offset `t`.
pub fn syd_generator(index: u8, t: f64) -> f64 {
    let drift = t / 100.0;
    let modulated = |t: f64| {
        (PI * t / 2.0 - 3.0).sin() * (PI * (t - 3.0) / 6.0).cos() * (PI * (t - 13.0)).cos()
    };
    match index {
        1 => (4.0 * PI * t / 5.0).cos() + (PI * (t - 50.0)).cos() + drift,
        2 => (PI * t / 3.0 - 3.0).sin() - (PI * t / 6.0).sin() + drift,
        3 => 1.0 - modulated(t) + drift,
        4 => modulated(t) + drift,
        5 => (3.0 * PI * t / 5.0).cos() + (2.0 * PI * t / 5.0 - t).sin() + drift,
        _ => panic!("generator index {index} outside 1..=5"),
    }
}

/// Synthetic co-evolving set: every series is `n_segments` blocks of
/// `segment_len` steps, each block one of the five generators picked
/// uniformly at random and evaluated at the within-block offset
/// `0..segment_len`.
pub fn generate_syd(
    n_series: usize,
    n_segments: usize,
    segment_len: usize,
    seed: u64,
) -> Result<SeriesSet> {
    if n_series == 0 || n_segments == 0 || segment_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic counts must be >= 1 (series={n_series}, segments={n_segments}, length={segment_len})"
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_SYD);
    let labels: Vec<Vec<u8>> = (0..n_series)
        .map(|_| {
            (0..n_segments)
                .map(|_| rng.random_range(1..=SYD_GENERATORS))
                .collect()
        })
        .collect();
    let blocks: Vec<Vec<f64>> = (1..=SYD_GENERATORS)
        .map(|g| (0..segment_len).map(|t| syd_generator(g, t as f64)).collect())
        .collect();
    let steps = n_segments * segment_len;
    let values = DMatrix::from_fn(steps, n_series, |row, col| {
        let segment = row / segment_len;
        let g = labels[col][segment] as usize;
        blocks[g - 1][row % segment_len]
    });
    let names = (0..n_series).map(|i| format!("syd{i}")).collect();
    let truth = GroundTruth {
        segment_len,
        labels,
    };
    // A single series (or single step) is a legal synthetic draw even though
    // the analysis pipeline needs more, so bypass the size check here.
    Ok(SeriesSet {
        values,
        names,
        ground_truth: Some(truth),
    })
}

/// Realized volatility `sqrt(sum r_t^2)` of log-returns `r_t = ln(c_t / c_{t-1})`
/// over consecutive non-overlapping groups of `period` returns. A trailing
/// group with fewer than `period` returns is dropped.
pub fn realized_volatility(closes: &[f64], period: usize) -> Result<Vec<f64>> {
    if period == 0 {
        return Err(Error::InvalidArgument("period must be >= 1".into()));
    }
    if let Some((index, &value)) = closes
        .iter()
        .enumerate()
        .find(|(_, c)| !(**c > 0.0) || !c.is_finite())
    {
        return Err(Error::NonPositivePrice { index, value });
    }
    let returns: Vec<f64> = closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    Ok(returns
        .chunks_exact(period)
        .map(|chunk| chunk.iter().map(|r| r * r).sum::<f64>().sqrt())
        .collect())
}

/// Centres every column to mean 0 and scales it to unit sample standard
/// deviation; columns whose deviation is below `1e-12` are only centred.
pub fn znormalize_window(sub: &Subseries) -> Subseries {
    let mut values = sub.values.clone();
    znormalize_columns(&mut values);
    Subseries {
        window_index: sub.window_index,
        start: sub.start,
        values,
    }
}

pub(crate) fn znormalize_columns(values: &mut DMatrix<f64>) {
    let rows = values.nrows();
    if rows == 0 {
        return;
    }
    for mut col in values.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / rows as f64;
        for x in col.iter_mut() {
            *x -= mean;
        }
        if rows < 2 {
            continue;
        }
        let var = col.iter().map(|x| x * x).sum::<f64>() / (rows - 1) as f64;
        let sd = var.sqrt();
        if sd >= 1e-12 {
            for x in col.iter_mut() {
                *x /= sd;
            }
        }
    }
}

/// Mean and sample standard deviation of a slice.
pub(crate) fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
