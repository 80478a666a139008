//! Dense symmetric eigen-solvers.
//!
//! The block-diagonal solver needs the `k` lowest eigenpairs of an `N x N`
//! Laplacian on every iteration, and concept estimation needs the whole
//! spectrum once per window. Both are served by a Householder reduction to
//! tridiagonal form followed by Sturm-sequence bisection for eigenvalues and
//! inverse iteration for the requested eigenvectors, which keeps the cost of
//! the eigenvector stage at `O(N^2 k)` instead of `O(N^3)`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;

/// Eigenvalues in increasing order with the matching unit eigenvectors
/// stored column-wise.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Householder tridiagonal form `A = Q T Q^T`, with the reflectors kept
/// in place so `Q` can be applied to a few vectors without forming it.
/// Only the lower triangle of `A` is read.
pub struct Tridiagonal {
    n: usize,
    diag: Vec<f64>,
    off: Vec<f64>,
    /// Column `j` holds the tail of reflector `j` below its implicit unit
    /// leading entry (rows `j + 2..n`).
    reflectors: DMatrix<f64>,
    taus: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let mut work = a.clone();
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        let mut taus = vec![0.0; n.saturating_sub(1)];
        let mut p = vec![0.0; n];
        let mut v = vec![0.0; n];

        for j in 0..n.saturating_sub(2) {
            let m = n - j - 1;
            let col = work.column(j);
            let alpha = col[j + 1];
            let mut tail_sq = 0.0;
            for i in j + 2..n {
                tail_sq += col[i] * col[i];
            }
            if tail_sq == 0.0 {
                off[j] = alpha;
                taus[j] = 0.0;
                continue;
            }
            let norm = (alpha * alpha + tail_sq).sqrt();
            let beta = if alpha >= 0.0 { -norm } else { norm };
            let tau = (beta - alpha) / beta;
            let scale = 1.0 / (alpha - beta);
            v[0] = 1.0;
            for i in 1..m {
                v[i] = work[(j + 1 + i, j)] * scale;
            }
            off[j] = beta;
            taus[j] = tau;

            // p = tau * A22 v using the lower triangle of the trailing block.
            for x in p[..m].iter_mut() {
                *x = 0.0;
            }
            {
                let data = work.as_slice();
                for c in 0..m {
                    let start = (j + 1 + c) * n + j + 1;
                    let column = &data[start + c..start + m];
                    let vc = v[c];
                    let mut acc = column[0] * vc;
                    for ((a, vr), pr) in column[1..]
                        .iter()
                        .zip(&v[c + 1..m])
                        .zip(&mut p[c + 1..m])
                    {
                        acc += a * vr;
                        *pr += a * vc;
                    }
                    p[c] += acc;
                }
            }
            let mut pv = 0.0;
            for i in 0..m {
                p[i] *= tau;
                pv += p[i] * v[i];
            }
            let half = -0.5 * tau * pv;
            for i in 0..m {
                p[i] += half * v[i];
            }
            // A22 -= v p^T + p v^T (lower triangle only).
            {
                let data = work.as_mut_slice();
                for c in 0..m {
                    let (vc, pc) = (v[c], p[c]);
                    let start = (j + 1 + c) * n + j + 1;
                    let column = &mut data[start + c..start + m];
                    for ((a, vr), pr) in column.iter_mut().zip(&v[c..m]).zip(&p[c..m]) {
                        *a -= vr * pc + pr * vc;
                    }
                }
            }
            for i in 1..m {
                work[(j + 1 + i, j)] = v[i];
            }
        }
        for i in 0..n {
            diag[i] = work[(i, i)];
        }
        if n >= 2 {
            off[n - 2] = work[(n - 1, n - 2)];
        }
        Tridiagonal {
            n,
            diag,
            off,
            reflectors: work,
            taus,
        }
    }

    /// Infinity norm of `T` (equal to a norm bound on `A`).
    pub fn norm(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.n {
            let mut row = self.diag[i].abs();
            if i > 0 {
                row += self.off[i - 1].abs();
            }
            if i + 1 < self.n {
                row += self.off[i].abs();
            }
            best = best.max(row);
        }
        best
    }

    fn pivmin(&self) -> f64 {
        f64::MIN_POSITIVE.max(self.norm() * f64::EPSILON * f64::EPSILON)
    }

    /// Number of eigenvalues strictly below `x`.
    pub fn count_below(&self, x: f64) -> usize {
        if self.n == 0 {
            return 0;
        }
        self.count_below_piv(x, self.pivmin())
    }

    fn count_below_piv(&self, x: f64, pivmin: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.n {
            q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            let mut r = 0.0;
            if i > 0 {
                r += self.off[i - 1].abs();
            }
            if i + 1 < self.n {
                r += self.off[i].abs();
            }
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `index`-th smallest eigenvalue (0-based) by bisection.
    fn eigenvalue(&self, index: usize, lo: f64, hi: f64, pivmin: f64) -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        let tol = 2.0 * f64::EPSILON;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= tol * lo.abs().max(hi.abs()) + pivmin {
                break;
            }
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below_piv(mid, pivmin) > index {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// The `k` smallest eigenvalues, increasing.
    pub fn lowest_values(&self, k: usize) -> Vec<f64> {
        let k = k.min(self.n);
        if self.n == 0 || k == 0 {
            return Vec::new();
        }
        let (glo, ghi) = self.gershgorin();
        let scale = self.norm().max(f64::MIN_POSITIVE);
        let pivmin = f64::MIN_POSITIVE.max(scale * f64::EPSILON * f64::EPSILON);
        let pad = 2.0 * f64::EPSILON * scale + pivmin;
        let (lo, hi) = (glo - pad, ghi + pad);
        let mut values = Vec::with_capacity(k);
        let mut floor = lo;
        for i in 0..k {
            let value = self.eigenvalue(i, floor, hi, pivmin);
            values.push(value);
            floor = (value - pad).max(lo);
        }
        values
    }

    /// Solves `(T - shift I) x = b` in place by Gaussian elimination with
    /// partial pivoting; zero pivots are replaced by a tiny perturbation so
    /// inverse iteration on an exact eigenvalue stays finite.
    fn shifted_solve(&self, shift: f64, b: &mut [f64], tiny: f64) {
        let n = self.n;
        if n == 1 {
            let d = self.diag[0] - shift;
            b[0] /= if d.abs() < tiny { tiny } else { d };
            return;
        }
        let dl: &[f64] = &self.off;
        let mut d: Vec<f64> = self.diag.iter().map(|x| x - shift).collect();
        let mut du: Vec<f64> = self.off.clone();
        let mut du2 = vec![0.0; n];
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i].abs() < tiny {
                    d[i] = if d[i] < 0.0 { -tiny } else { tiny };
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] -= fact * b[i];
                du2[i] = 0.0;
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 1 < n - 1 {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du2[i];
                }
                du[i] = temp;
                let bt = b[i];
                b[i] = b[i + 1];
                b[i + 1] = bt - fact * b[i + 1];
            }
        }
        if d[n - 1].abs() < tiny {
            d[n - 1] = if d[n - 1] < 0.0 { -tiny } else { tiny };
        }
        b[n - 1] /= d[n - 1];
        b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
        }
    }

    /// Applies `Q` to a vector expressed in the tridiagonal basis.
    fn back_transform(&self, x: &mut [f64]) {
        let n = self.n;
        for j in (0..n.saturating_sub(2)).rev() {
            let tau = self.taus[j];
            if tau == 0.0 {
                continue;
            }
            let tail = &self.reflectors.as_slice()[j * n + j + 2..(j + 1) * n];
            let (head, rest) = x[j + 1..].split_first_mut().expect("non-empty");
            let dot = *head + tail.iter().zip(rest.iter()).map(|(a, b)| a * b).sum::<f64>();
            let s = tau * dot;
            *head -= s;
            for (xi, a) in rest.iter_mut().zip(tail) {
                *xi -= s * a;
            }
        }
    }

    /// The `k` smallest eigenpairs of `A`.
    pub fn lowest_pairs(&self, k: usize) -> EigenPairs {
        let n = self.n;
        let k = k.min(n);
        let values = self.lowest_values(k);
        let scale = self.norm();
        let tiny = (f64::EPSILON * scale).max(f64::MIN_POSITIVE.sqrt());
        let cluster_gap = 1e-3 * scale;
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut cluster_start = 0;
        let mut seed = 0x9e37_79b9_7f4a_7c15_u64;
        for (idx, &lambda) in values.iter().enumerate() {
            if idx > 0 && (lambda - values[idx - 1]).abs() > cluster_gap {
                cluster_start = idx;
            }
            let mut x: Vec<f64> = (0..n)
                .map(|_| {
                    seed ^= seed << 13;
                    seed ^= seed >> 7;
                    seed ^= seed << 17;
                    (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            normalize(&mut x);
            for _ in 0..4 {
                self.shifted_solve(lambda, &mut x, tiny);
                for prev in &basis[cluster_start..idx] {
                    orthogonalize(&mut x, prev);
                    orthogonalize(&mut x, prev);
                }
                if !normalize(&mut x) {
                    // Degenerate direction: restart from a coordinate vector.
                    for (i, xi) in x.iter_mut().enumerate() {
                        *xi = if i == idx % n { 1.0 } else { 0.0 };
                    }
                    for prev in &basis[cluster_start..idx] {
                        orthogonalize(&mut x, prev);
                    }
                    normalize(&mut x);
                }
            }
            basis.push(x);
        }
        let mut vectors = DMatrix::zeros(n, values.len());
        for (c, mut x) in basis.into_iter().enumerate() {
            self.back_transform(&mut x);
            normalize(&mut x);
            vectors.column_mut(c).copy_from_slice(&x);
        }
        EigenPairs { values, vectors }
    }
}

fn orthogonalize(x: &mut [f64], q: &[f64]) {
    let dot: f64 = x.iter().zip(q).map(|(a, b)| a * b).sum();
    for (xi, qi) in x.iter_mut().zip(q) {
        *xi -= dot * qi;
    }
}

fn normalize(x: &mut [f64]) -> bool {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return false;
    }
    for v in x.iter_mut() {
        *v /= norm;
    }
    true
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// All eigenvalues, increasing.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.n == 0 {
            return Vec::new();
        }
        tridiagonal_eigenvalues(self.diag.clone(), &self.off)
    }
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL with
/// Wilkinson-style shifts.
fn tridiagonal_eigenvalues(mut d: Vec<f64>, off: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut e = vec![0.0; n];
    e[..off.len()].copy_from_slice(off);
    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > 64 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| a.total_cmp(b));
    d
}

/// All eigenvalues of a symmetric matrix, increasing.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    Tridiagonal::new(a).eigenvalues()
}

/// The `k` smallest eigenpairs of a symmetric matrix. Only the lower
/// triangle of `a` is read.
pub fn lowest_eigenpairs(a: &DMatrix<f64>, k: usize) -> EigenPairs {
    let n = a.nrows();
    let k = k.min(n);
    if n == 0 || k == 0 {
        return EigenPairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(n, 0),
        };
    }
    Tridiagonal::new(a).lowest_pairs(k)
}

/// Full decomposition, increasing eigenvalues.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> EigenPairs {
    lowest_eigenpairs(a, a.nrows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&m + m.transpose()) * 0.5
    }

    fn reference_values(a: &DMatrix<f64>) -> Vec<f64> {
        let mut v: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        v
    }

    #[test]
    fn eigenvalues_match_reference() {
        for (n, seed) in [(1, 1), (2, 2), (3, 3), (7, 4), (40, 5), (101, 6)] {
            let a = random_symmetric(n, seed);
            let ours = symmetric_eigenvalues(&a);
            let theirs = reference_values(&a);
            for (x, y) in ours.iter().zip(&theirs) {
                assert!((x - y).abs() < 1e-10, "n={n}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn lowest_pairs_have_small_residuals() {
        let a = random_symmetric(60, 11);
        let pairs = lowest_eigenpairs(&a, 6);
        for (c, &lambda) in pairs.values.iter().enumerate() {
            let x = pairs.vectors.column(c);
            let r = &a * x - x * lambda;
            assert!(r.norm() < 1e-9, "residual {}", r.norm());
        }
        let gram = pairs.vectors.transpose() * &pairs.vectors;
        assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-10);
    }

    #[test]
    fn repeated_eigenvalues_get_orthonormal_vectors() {
        // Laplacian of three disconnected pairs: eigenvalue 0 three times.
        let mut l = DMatrix::zeros(6, 6);
        for b in 0..3 {
            let (i, j) = (2 * b, 2 * b + 1);
            l[(i, i)] = 1.0;
            l[(j, j)] = 1.0;
            l[(i, j)] = -1.0;
            l[(j, i)] = -1.0;
        }
        let pairs = lowest_eigenpairs(&l, 4);
        assert!(pairs.values[..3].iter().all(|v| v.abs() < 1e-12));
        assert!((pairs.values[3] - 2.0).abs() < 1e-12);
        let gram = pairs.vectors.transpose() * &pairs.vectors;
        assert!((gram - DMatrix::identity(4, 4)).amax() < 1e-10);
        let r = &l * &pairs.vectors;
        assert!(r.columns(0, 3).amax() < 1e-10);
    }

    #[test]
    fn zero_matrix() {
        let z = DMatrix::zeros(5, 5);
        let pairs = lowest_eigenpairs(&z, 3);
        assert!(pairs.values.iter().all(|v| v.abs() < 1e-12));
        let gram = pairs.vectors.transpose() * &pairs.vectors;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn full_decomposition_reconstructs() {
        let a = random_symmetric(25, 21);
        let e = symmetric_eigen(&a);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(e.values.clone()));
        let back = &e.vectors * d * e.vectors.transpose();
        assert!((back - a).amax() < 1e-10);
    }
}
