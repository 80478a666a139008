//! Concept counting, per-window spectral clustering and the global concept
//! catalog.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Subseries;
use crate::eigen::{symmetric_eigenvalues, Tridiagonal};
use crate::error::{Error, Result};
use crate::representation::laplacian;
use crate::rng;

/// Default eigengap threshold.
pub const DEFAULT_TAU_GAP: f64 = 0.2;
/// Number of k-means restarts per clustering.
pub const KMEANS_RESTARTS: usize = 20;

/// Estimated concept count with the spectrum it was read from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConceptEstimate {
    pub k_hat: usize,
    /// Laplacian eigenvalues, increasing.
    pub eigenvalues: Vec<f64>,
    /// `gaps[i] = exp(s[i + 1]) - exp(s[i])` where `s` is the spectrum
    /// divided by its largest eigenvalue (0-based, so `gaps[i]` is the gap
    /// after the `(i + 1)`-th eigenvalue).
    pub gaps: Vec<f64>,
}

/// Number of concepts in a representation matrix from the exponential
/// eigengap of its Laplacian.
///
/// The spectrum is first divided by its largest eigenvalue so the threshold
/// does not depend on the scale of `Z`. The estimate is the position of the
/// first gap exceeding `tau_gap`: the eigenvalues before it are the
/// near-zero ones, one per block. A spectrum without any such gap has no
/// block structure to read and yields a single concept; an all-zero `Z`
/// (every series isolated) yields `N - 1`.
pub fn estimate_k(z: &DMatrix<f64>, tau_gap: f64) -> Result<ConceptEstimate> {
    let n = z.nrows();
    if n < 3 {
        return Err(Error::TooFewSeries(n));
    }
    if !(tau_gap > 0.0 && tau_gap < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eigengap threshold must lie in (0, 1), got {tau_gap}"
        )));
    }
    let eigenvalues = symmetric_eigenvalues(&laplacian(z));
    Ok(estimate_from_spectrum(eigenvalues, tau_gap))
}

/// [`estimate_k`] on an already computed increasing spectrum.
pub fn estimate_from_spectrum(eigenvalues: Vec<f64>, tau_gap: f64) -> ConceptEstimate {
    let n = eigenvalues.len();
    let top = eigenvalues.last().copied().unwrap_or(0.0).max(0.0);
    if top <= 0.0 {
        return ConceptEstimate {
            k_hat: n.saturating_sub(1).max(1),
            gaps: vec![0.0; n.saturating_sub(1)],
            eigenvalues,
        };
    }
    let scaled: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0) / top).collect();
    let gaps: Vec<f64> = scaled.windows(2).map(|p| p[1].exp() - p[0].exp()).collect();
    let k_hat = gaps
        .iter()
        .position(|&g| g > tau_gap)
        .map(|i| i + 1)
        .unwrap_or(1);
    ConceptEstimate {
        k_hat,
        eigenvalues,
        gaps,
    }
}

/// Concept assignment of every series in one window.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowClustering {
    pub window_index: usize,
    /// Local cluster per series, `0..k`, numbered by first appearance.
    pub labels: Vec<usize>,
    pub k: usize,
    /// Mean member subseries per cluster (empty until attached).
    pub centroids: Vec<Vec<f64>>,
}

impl WindowClustering {
    /// Computes cluster centroids from the (normalised) window the labels
    /// were obtained on.
    pub fn with_centroids(mut self, sub: &Subseries) -> Result<Self> {
        if sub.width() != self.labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} series",
                self.labels.len(),
                sub.width()
            )));
        }
        let w = sub.len();
        let mut sums = vec![vec![0.0; w]; self.k];
        let mut counts = vec![0usize; self.k];
        for (i, &label) in self.labels.iter().enumerate() {
            counts[label] += 1;
            for (acc, x) in sums[label].iter_mut().zip(sub.values.column(i).iter()) {
                *acc += x;
            }
        }
        for (sum, &count) in sums.iter_mut().zip(&counts) {
            if count > 0 {
                for v in sum.iter_mut() {
                    *v /= count as f64;
                }
            }
        }
        self.centroids = sums;
        Ok(self)
    }

    /// Series count per local cluster.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Ng-Jordan-Weiss spectral clustering on the affinity `(Z + Z^T) / 2`.
///
/// Series with no affinity to any other series become singleton clusters;
/// the remaining `k - isolated` clusters come from k-means (k-means++
/// seeding, [`KMEANS_RESTARTS`] restarts, lowest inertia kept) on the
/// row-normalised eigenvectors of the normalised Laplacian.
pub fn spectral_cluster(
    z: &DMatrix<f64>,
    k: usize,
    seed: u64,
    window_index: usize,
) -> Result<WindowClustering> {
    let n = z.nrows();
    if k == 0 || k > n {
        return Err(Error::ClusterCount {
            requested: k,
            reason: format!("need 1 <= k <= {n}"),
        });
    }
    let affinity = (z + z.transpose()) * 0.5;
    let degrees: Vec<f64> = affinity.column_sum().iter().copied().collect();
    let connected: Vec<usize> = (0..n).filter(|&i| degrees[i] > 0.0).collect();
    let isolated = n - connected.len();

    let mut raw = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if degrees[i] <= 0.0 {
            raw[i] = next;
            next += 1;
        }
    }
    let remaining = k.checked_sub(isolated).unwrap_or(0);
    if k < isolated || (remaining == 0 && !connected.is_empty()) {
        return Err(Error::ClusterCount {
            requested: k,
            reason: format!("{isolated} isolated series each need their own cluster"),
        });
    }
    if remaining > connected.len() {
        return Err(Error::ClusterCount {
            requested: k,
            reason: format!("only {} connected series", connected.len()),
        });
    }

    if remaining > 0 {
        let m = connected.len();
        let inv_sqrt: Vec<f64> = connected.iter().map(|&i| 1.0 / degrees[i].sqrt()).collect();
        let norm_lap = DMatrix::from_fn(m, m, |a, b| {
            let off = affinity[(connected[a], connected[b])] * inv_sqrt[a] * inv_sqrt[b];
            if a == b {
                1.0 - off
            } else {
                -off
            }
        });
        let pairs = Tridiagonal::new(&norm_lap).lowest_pairs(remaining);
        let mut points: Vec<Vec<f64>> = (0..m)
            .map(|r| pairs.vectors.row(r).iter().copied().collect())
            .collect();
        for p in points.iter_mut() {
            let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in p.iter_mut() {
                    *x /= norm;
                }
            }
        }
        let mut rng = rng::stream(seed, rng::STREAM_KMEANS + window_index as u64);
        let assignment = kmeans(&points, remaining, KMEANS_RESTARTS, &mut rng)?;
        for (a, &i) in connected.iter().enumerate() {
            raw[i] = isolated + assignment[a];
        }
    }

    Ok(WindowClustering {
        window_index,
        labels: relabel_by_first_appearance(&raw),
        k,
        centroids: Vec::new(),
    })
}

fn relabel_by_first_appearance(raw: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    raw.iter()
        .map(|&r| {
            let next = map.len();
            *map.entry(r).or_insert(next)
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding; returns the assignment with the
/// lowest inertia over `restarts` runs. Every cluster is non-empty.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let n = points.len();
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| sq_dist(p, q) == 0.0) {
            distinct.push(p);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if k == 0 || distinct.len() < k {
        return Err(Error::ClusterCount {
            requested: k,
            reason: format!("only {} distinct points", distinct.len()),
        });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let (inertia, labels) = lloyd(points, seed_plus_plus(points, k, rng), n);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            if d2[chosen] == 0.0 {
                // Rounding pushed us past the end; take the farthest point.
                chosen = argmax(&d2);
            }
            chosen
        } else {
            argmax(&d2)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, n: usize) -> (f64, Vec<usize>) {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        // Refill empty clusters with the point farthest from its center.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = (f64::NEG_INFINITY, 0);
                for (i, p) in points.iter().enumerate() {
                    if counts[labels[i]] > 1 {
                        let d = sq_dist(p, &centers[labels[i]]);
                        if d > far.0 {
                            far = (d, i);
                        }
                    }
                }
                counts[labels[far.1]] -= 1;
                labels[far.1] = c;
                counts[c] = 1;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &l) in points.iter().zip(&labels) {
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for (c, sum) in sums.into_iter().enumerate() {
            centers[c] = sum.into_iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    (inertia, labels)
}

/// Adjusted Rand index between two labelings of the same items. Two
/// labelings that are both a single cluster (or both all singletons)
/// score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "labelings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// One global concept: the centroid of the local cluster that first
/// introduced it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConceptProfile {
    pub id: usize,
    pub first_window: usize,
    pub centroid: Vec<f64>,
}

/// Global concepts merged across windows. Any two profiles are more than
/// `rho` apart in squared Euclidean distance.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConceptCatalog {
    pub profiles: Vec<ConceptProfile>,
    /// Distinctness threshold; `None` until fixed by the first merge.
    pub rho: Option<f64>,
    /// Window index to global concept id of each local cluster.
    pub window_map: BTreeMap<usize, Vec<usize>>,
}

impl ConceptCatalog {
    /// Catalog with a fixed threshold, or `None` to derive it from the
    /// first merged window (half the median pairwise squared distance of
    /// its centroids).
    pub fn new(rho: Option<f64>) -> Self {
        ConceptCatalog {
            profiles: Vec::new(),
            rho,
            window_map: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn window_len(&self) -> Option<usize> {
        self.profiles.first().map(|p| p.centroid.len())
    }

    /// Global ids of the local clusters of a window.
    pub fn mapping(&self, window: usize) -> Option<&[usize]> {
        self.window_map.get(&window).map(Vec::as_slice)
    }

    pub fn profile(&self, id: usize) -> Option<&ConceptProfile> {
        self.profiles.get(id)
    }
}

/// Half the median pairwise squared distance; a single centroid uses half
/// its squared norm (its distance to the zero profile).
pub fn auto_rho(centroids: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..centroids.len() {
        for j in (i + 1)..centroids.len() {
            d.push(sq_dist(&centroids[i], &centroids[j]));
        }
    }
    if d.is_empty() {
        return 0.5 * centroids.first().map_or(0.0, |c| c.iter().map(|x| x * x).sum());
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    };
    0.5 * median
}

/// Maps each local cluster (in label order) to the nearest profile within
/// `rho`, spawning a new profile otherwise. Profiles spawned earlier in the
/// same window are candidates too, which keeps the catalog pairwise
/// separated. Returns the global id of each local cluster.
pub fn merge_into_catalog(
    catalog: &mut ConceptCatalog,
    clustering: &WindowClustering,
) -> Result<Vec<usize>> {
    if clustering.centroids.len() != clustering.k {
        return Err(Error::InvalidArgument(format!(
            "clustering of window {} has {} centroids for {} clusters",
            clustering.window_index,
            clustering.centroids.len(),
            clustering.k
        )));
    }
    let expected = catalog
        .window_len()
        .or_else(|| clustering.centroids.first().map(Vec::len))
        .unwrap_or(0);
    for c in &clustering.centroids {
        if c.len() != expected {
            return Err(Error::WindowLengthMismatch {
                expected,
                actual: c.len(),
            });
        }
    }
    let rho = *catalog
        .rho
        .get_or_insert_with(|| auto_rho(&clustering.centroids));
    let mut mapping = Vec::with_capacity(clustering.k);
    for centroid in &clustering.centroids {
        let mut best: Option<(f64, usize)> = None;
        for p in &catalog.profiles {
            let d = sq_dist(centroid, &p.centroid);
            if d <= rho && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, p.id));
            }
        }
        let id = match best {
            Some((_, id)) => id,
            None => {
                let id = catalog.profiles.len();
                catalog.profiles.push(ConceptProfile {
                    id,
                    first_window: clustering.window_index,
                    centroid: centroid.clone(),
                });
                id
            }
        };
        mapping.push(id);
    }
    catalog
        .window_map
        .insert(clustering.window_index, mapping.clone());
    Ok(mapping)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::representation::project_z;
    use rand::SeedableRng;

    fn block_z(sizes: &[usize]) -> DMatrix<f64> {
        let n: usize = sizes.iter().sum();
        let mut z = DMatrix::zeros(n, n);
        let mut start = 0;
        for &s in sizes {
            for i in start..start + s {
                for j in start..start + s {
                    if i != j {
                        z[(i, j)] = 1.0 / s as f64;
                    }
                }
            }
            start += s;
        }
        z
    }

    #[test]
    fn ideal_blocks() {
        let est = estimate_k(&block_z(&[4, 5, 6]), 0.2).unwrap();
        assert_eq!(est.k_hat, 3);
        // Brute-force oracle: count of (numerically) zero eigenvalues.
        let zeros = est.eigenvalues.iter().filter(|v| v.abs() < 1e-8).count();
        assert_eq!(zeros, 3);
        assert!(est.gaps.iter().all(|&g| g >= 0.0));
        assert!(matches!(
            estimate_k(&DMatrix::zeros(2, 2), 0.2),
            Err(Error::TooFewSeries(2))
        ));
    }

    #[test]
    fn estimate_edge_cases() {
        assert_eq!(estimate_k(&DMatrix::zeros(5, 5), 0.2).unwrap().k_hat, 4);
        assert_eq!(estimate_k(&block_z(&[6]), 0.2).unwrap().k_hat, 1);
        assert!(estimate_k(&block_z(&[3, 3]), 1.0).is_err());
    }

    #[test]
    fn noisy_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ok = 0;
        for _ in 0..20 {
            let mut z = block_z(&[10, 10, 10, 10]) * 10.0;
            z.apply(|x| *x += rng.random_range(0.0..0.05));
            if estimate_k(&project_z(&z), 0.2).unwrap().k_hat == 4 {
                ok += 1;
            }
        }
        assert!(ok >= 19, "{ok}");
    }

    #[test]
    fn clustering_separates_blocks() {
        let z = block_z(&[3, 4]);
        let c = spectral_cluster(&z, 2, 1, 1).unwrap();
        let truth = [0, 0, 0, 1, 1, 1, 1];
        assert_eq!(adjusted_rand_index(&c.labels, &truth).unwrap(), 1.0);
        let one = spectral_cluster(&z, 1, 1, 1).unwrap();
        assert!(one.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn isolated_series_are_singletons() {
        let mut z = DMatrix::zeros(6, 6);
        for (i, j) in [(0, 1), (1, 2), (0, 2), (4, 5)] {
            z[(i, j)] = 1.0;
            z[(j, i)] = 1.0;
        }
        let c = spectral_cluster(&z, 3, 0, 1).unwrap();
        assert_eq!(c.labels, vec![0, 0, 0, 1, 2, 2]);
        assert!(spectral_cluster(&z, 1, 0, 1).is_err());
        assert!(spectral_cluster(&z, 7, 0, 1).is_err());
    }

    #[test]
    fn ari_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap(), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((v - (-0.5)).abs() < 1e-12);
        assert!(adjusted_rand_index(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn catalog_bootstrap_and_idempotence() {
        let sub = Subseries::new(
            1,
            0,
            DMatrix::from_column_slice(2, 3, &[0.0, 1.0, 5.0, 5.0, -6.0, 2.0]),
        );
        let c = WindowClustering {
            window_index: 1,
            labels: vec![0, 1, 2],
            k: 3,
            centroids: Vec::new(),
        }
        .with_centroids(&sub)
        .unwrap();
        let mut cat = ConceptCatalog::new(None);
        assert_eq!(merge_into_catalog(&mut cat, &c).unwrap(), vec![0, 1, 2]);
        assert_eq!(cat.len(), 3);
        assert_eq!(merge_into_catalog(&mut cat, &c).unwrap(), vec![0, 1, 2]);
        assert_eq!(cat.len(), 3);

        let bad = WindowClustering {
            window_index: 2,
            labels: vec![0],
            k: 1,
            centroids: vec![vec![0.0; 3]],
        };
        assert!(matches!(
            merge_into_catalog(&mut cat, &bad),
            Err(Error::WindowLengthMismatch { expected: 2, actual: 3 })
        ));
    }
}
