//! Block-diagonal kernel self-representation.
//!
//! Minimises
//!
//! ```text
//! 1/2 Tr(K + V^T K V) - alpha Tr(K V) + beta/2 |V - Z|^2 + gamma <Diag(Z 1) - Z, W>
//! ```
//!
//! over `Z` (symmetric, non-negative, zero diagonal), `V` and
//! `W` (`0 <= W <= I`, `Tr W = k`) by exact block coordinate descent:
//! `{W, V}` given `Z`, then `Z` given `{W, V}`.

use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;

use crate::eigen::Tridiagonal;
use crate::error::{Error, Result};
use crate::kernels::GramMatrix;

/// Weights and stopping rule of the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SolverConfig {
    /// Self-expression fidelity weight.
    pub alpha: f64,
    /// Coupling weight between `V` and `Z`.
    pub beta: f64,
    /// Block-diagonal regulariser weight.
    pub gamma: f64,
    /// Target number of blocks.
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the largest entrywise change of `Z` is at most `tol`.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 4.0,
            beta: 60.0,
            gamma: 0.8,
            k: 3,
            max_iter: 200,
            tol: 1e-5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.alpha) || !positive(self.beta) || !positive(self.gamma) {
            return Err(Error::InvalidArgument(alloc::format!(
                "alpha, beta and gamma must be positive (got {}, {}, {})",
                self.alpha,
                self.beta,
                self.gamma
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("block count k must be >= 1".into()));
        }
        if !positive(self.tol) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        Ok(())
    }

    pub fn with_k(self, k: usize) -> Self {
        SolverConfig { k, ..self }
    }
}

/// Solver output for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMatrix {
    /// Symmetric, non-negative, zero-diagonal coefficients.
    pub z: DMatrix<f64>,
    /// Objective after each completed iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl RepresentationMatrix {
    pub fn size(&self) -> usize {
        self.z.nrows()
    }

    /// Checks symmetry, non-negativity and the zero diagonal exactly.
    pub fn is_feasible(&self) -> bool {
        is_feasible(&self.z)
    }
}

/// Auxiliary variables at the end of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

pub fn is_feasible(z: &DMatrix<f64>) -> bool {
    let n = z.nrows();
    if z.ncols() != n {
        return false;
    }
    for j in 0..n {
        if z[(j, j)] != 0.0 {
            return false;
        }
        for i in 0..n {
            let v = z[(i, j)];
            if !(v >= 0.0) || v != z[(j, i)] {
                return false;
            }
        }
    }
    true
}

/// `Diag(Z 1) - Z`.
pub fn laplacian(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut l = -z;
    for (i, row_sum) in z.column_sum().iter().enumerate() {
        // Z is symmetric, so column sums equal row sums.
        l[(i, i)] += row_sum;
    }
    l
}

/// Sum of the `k` smallest Laplacian eigenvalues; zero exactly when `Z`
/// has at least `k` connected components.
pub fn block_diag_penalty(z: &DMatrix<f64>, k: usize) -> f64 {
    let t = Tridiagonal::new(&laplacian(z));
    t.lowest_values(k).iter().sum::<f64>().max(0.0)
}

/// `U U^T` for the eigenvectors `U` of the `k` smallest eigenvalues of the
/// Laplacian of `z`: a rank-`k` orthogonal projector minimising
/// `<L_Z, W>` over `0 <= W <= I, Tr W = k`.
pub fn update_w(z: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let pairs = Tridiagonal::new(&laplacian(z)).lowest_pairs(k);
    &pairs.vectors * pairs.vectors.transpose()
}

/// Minimiser of `<L, W>` over `0 <= W <= I, Tr W = k` that depends only on
/// `L`, not on a choice of eigenbasis. When the `k`-th and `(k+1)`-th
/// eigenvalues coincide, the rank-`k` projector is not unique; the weight
/// left over after the strictly lower eigenvalues is then spread evenly
/// over the whole tied eigenspace.
pub fn update_w_balanced(l: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = l.nrows();
    let k = k.min(n);
    let t = Tridiagonal::new(l);
    let values = t.lowest_values((k + 1).min(n));
    let tie = 1e-9 * t.norm().max(f64::MIN_POSITIVE.sqrt());
    if k == n || values[k] - values[k - 1] > tie {
        let pairs = t.lowest_pairs(k);
        return &pairs.vectors * pairs.vectors.transpose();
    }
    let below = t.count_below(values[k - 1] - tie);
    let through = t.count_below(values[k - 1] + tie).max(k + 1);
    let share = (k - below) as f64 / (through - below) as f64;
    if through == n {
        let pairs = t.lowest_pairs(below);
        let mut w = DMatrix::identity(n, n) * share;
        if below > 0 {
            w += &pairs.vectors * pairs.vectors.transpose() * (1.0 - share);
        }
        return w;
    }
    let mut pairs = t.lowest_pairs(through);
    for (c, mut col) in pairs.vectors.column_iter_mut().enumerate() {
        if c >= below {
            col *= share.sqrt();
        }
    }
    &pairs.vectors * pairs.vectors.transpose()
}

/// `V = (K + beta I)^-1 (alpha K + beta Z)`.
pub fn update_v(gram: &GramMatrix, z: &DMatrix<f64>, alpha: f64, beta: f64) -> Result<DMatrix<f64>> {
    check_finite(&gram.k)?;
    check_finite(z)?;
    let n = gram.size();
    let system = &gram.k + DMatrix::identity(n, n) * beta;
    let chol = system.cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(&(&gram.k * alpha + z * beta)))
}

/// Nearest feasible matrix to `a` in Frobenius norm: zero the diagonal,
/// symmetrise, clip at zero.
pub fn project_z(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut z = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (0.5 * (a[(i, j)] + a[(j, i)])).max(0.0);
            z[(i, j)] = v;
            z[(j, i)] = v;
        }
    }
    z
}

/// `Z = project_z(V - gamma/beta (diag(W) 1^T - W))`.
pub fn update_z(v: &DMatrix<f64>, w: &DMatrix<f64>, beta: f64, gamma: f64) -> DMatrix<f64> {
    let n = v.nrows();
    let ratio = gamma / beta;
    let a = DMatrix::from_fn(n, n, |i, j| v[(i, j)] - ratio * (w[(i, i)] - w[(i, j)]));
    project_z(&a)
}

/// Objective value, evaluated term by term.
pub fn objective_value(
    gram: &GramMatrix,
    z: &DMatrix<f64>,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> f64 {
    let k = &gram.k;
    let kv = k * v;
    let fit = 0.5 * (k.trace() + v.dot(&kv)) - cfg.alpha * kv.trace();
    let coupling = 0.5 * cfg.beta * (v - z).norm_squared();
    fit + coupling + cfg.gamma * laplacian(z).dot(w)
}

/// Runs the alternating scheme from `Z = V = 0`.
pub fn solve(gram: &GramMatrix, cfg: &SolverConfig) -> Result<RepresentationMatrix> {
    solve_with_state(gram, cfg).map(|(rep, _)| rep)
}

/// Like [`solve`], also returning the final `V` and `W`.
pub fn solve_with_state(
    gram: &GramMatrix,
    cfg: &SolverConfig,
) -> Result<(RepresentationMatrix, SolverState)> {
    cfg.validate()?;
    check_finite(&gram.k)?;
    let n = gram.size();
    let k = cfg.k.min(n);
    let mut z = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    let mut w = update_w_balanced(&z, k);
    let mut trace = Vec::new();
    if cfg.max_iter == 0 {
        let rep = RepresentationMatrix {
            z,
            objective_trace: trace,
            iterations: 0,
            converged: false,
        };
        return Ok((rep, SolverState { v, w }));
    }

    let system = &gram.k + DMatrix::identity(n, n) * cfg.beta;
    let inverse = system
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?
        .inverse();
    let inverse = (&inverse + inverse.transpose()) * 0.5;
    let fit_part = &inverse * &gram.k * cfg.alpha;
    let trace_k = gram.k.trace();

    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..cfg.max_iter {
        iterations = iter + 1;
        w = update_w_balanced(&laplacian(&z), k);
        v = apply_inverse(&inverse, &fit_part, &z, cfg.beta);
        check_finite(&v).map_err(|_| Error::NumericalFailure { iteration: iterations })?;
        let z_next = update_z(&v, &w, cfg.beta, cfg.gamma);
        check_finite(&z_next).map_err(|_| Error::NumericalFailure { iteration: iterations })?;

        trace.push(fast_objective(gram, trace_k, &z, &z_next, &v, &w, cfg));
        let change = (&z_next - &z).amax();
        z = z_next;
        if change <= cfg.tol {
            converged = true;
            break;
        }
    }
    let rep = RepresentationMatrix {
        z,
        objective_trace: trace,
        iterations,
        converged,
    };
    Ok((rep, SolverState { v, w }))
}

/// `alpha M^-1 K + beta M^-1 Z`, using the sparsity of `Z` when it pays.
fn apply_inverse(
    inverse: &DMatrix<f64>,
    fit_part: &DMatrix<f64>,
    z: &DMatrix<f64>,
    beta: f64,
) -> DMatrix<f64> {
    let n = z.nrows();
    let nonzero = z.iter().filter(|&&x| x != 0.0).count();
    if nonzero * 4 >= n * n {
        return fit_part + inverse * z * beta;
    }
    let mut out = fit_part.clone();
    for j in 0..n {
        let zc = z.column(j);
        let mut oc = out.column_mut(j);
        let oc = oc.as_mut_slice();
        for (i, &zij) in zc.iter().enumerate() {
            if zij != 0.0 {
                let s = beta * zij;
                let ic = &inverse.as_slice()[i * n..(i + 1) * n];
                for (o, m) in oc.iter_mut().zip(ic) {
                    *o += s * m;
                }
            }
        }
    }
    out
}

/// Objective for `(z_next, v, w)` when `v` solves the `V` step for `z_prev`,
/// using `K V = alpha K + beta Z_prev - beta V` to avoid an `N^3` product.
fn fast_objective(
    gram: &GramMatrix,
    trace_k: f64,
    z_prev: &DMatrix<f64>,
    z_next: &DMatrix<f64>,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> f64 {
    let (alpha, beta) = (cfg.alpha, cfg.beta);
    let v_kv = alpha * v.dot(&gram.k) + beta * v.dot(z_prev) - beta * v.norm_squared();
    let tr_kv = alpha * trace_k - beta * v.trace();
    let fit = 0.5 * (trace_k + v_kv) - alpha * tr_kv;
    let coupling = 0.5 * beta * (v - z_next).norm_squared();
    let degrees = z_next.column_sum();
    let diag_term: f64 = degrees.iter().enumerate().map(|(i, d)| d * w[(i, i)]).sum();
    fit + coupling + cfg.gamma * (diag_term - z_next.dot(w))
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    match m.iter().position(|x| !x.is_finite()) {
        Some(pos) => Err(Error::NonFinite {
            row: pos % n.max(1),
            col: pos / n.max(1),
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::symmetric_eigenvalues;
    use crate::kernels::KernelKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_feasible(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        project_z(&DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..1.0)))
    }

    fn block_z(sizes: &[usize]) -> DMatrix<f64> {
        let n: usize = sizes.iter().sum();
        let mut z = DMatrix::zeros(n, n);
        let mut start = 0;
        for &s in sizes {
            for i in start..start + s {
                for j in start..start + s {
                    if i != j {
                        z[(i, j)] = 1.0;
                    }
                }
            }
            start += s;
        }
        z
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(laplacian(&DMatrix::zeros(4, 4)), DMatrix::zeros(4, 4));
        let l = laplacian(&block_z(&[2, 2]));
        let ev = symmetric_eigenvalues(&l);
        assert_eq!(ev.iter().filter(|v| v.abs() < 1e-12).count(), 2);
        let z = random_feasible(9, 1);
        let l = laplacian(&z);
        assert!(l.column_sum().amax() < 1e-10);
    }

    #[test]
    fn penalty_examples() {
        assert!(block_diag_penalty(&block_z(&[3, 4, 5]), 3) <= 1e-8);
        let n = 6;
        let full = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 / (n - 1) as f64 });
        assert!(block_diag_penalty(&full, 2) > 1e-3);
        let z = random_feasible(8, 2);
        assert!((block_diag_penalty(&z, 8) - laplacian(&z).trace()).abs() < 1e-8);
    }

    #[test]
    fn w_is_projector_with_penalty_identity() {
        let z = random_feasible(10, 3);
        let w = update_w(&z, 2);
        assert!((&w * &w - &w).amax() < 1e-10);
        assert!((w.trace() - 2.0).abs() < 1e-8);
        let ev = symmetric_eigenvalues(&laplacian(&z));
        assert!((laplacian(&z).dot(&w) - (ev[0] + ev[1])).abs() < 1e-6);

        let w0 = update_w(&DMatrix::zeros(5, 5), 2);
        assert!((&w0 * &w0 - &w0).amax() < 1e-10);
        assert!((w0.trace() - 2.0).abs() < 1e-8);

        let wb = update_w(&block_z(&[3, 3]), 2);
        assert!(laplacian(&block_z(&[3, 3])).dot(&wb).abs() < 1e-8);
    }

    #[test]
    fn balanced_w_on_ties() {
        let w = update_w_balanced(&DMatrix::zeros(5, 5), 2);
        assert!((w - DMatrix::identity(5, 5) * 0.4).amax() < 1e-14);

        // Three components, k = 2: weight 2/3 on each indicator direction.
        let z = block_z(&[2, 3, 4]);
        let l = laplacian(&z);
        let w = update_w_balanced(&l, 2);
        assert!((w.trace() - 2.0).abs() < 1e-8);
        assert!(l.dot(&w).abs() < 1e-8);
        let ev = symmetric_eigenvalues(&w);
        assert!(ev[0] > -1e-10 && ev[ev.len() - 1] < 1.0 + 1e-10);
        let ones_first = 1.0 / 2.0 * 2.0 / 3.0;
        assert!((w[(0, 1)] - ones_first).abs() < 1e-10);

        let z = random_feasible(10, 4);
        let a = update_w_balanced(&laplacian(&z), 3);
        assert!((a - update_w(&z, 3)).amax() < 1e-9);
    }

    #[test]
    fn v_examples() {
        let gram = GramMatrix::from_matrix(DMatrix::identity(3, 3), KernelKind::Linear).unwrap();
        let v = update_v(&gram, &DMatrix::zeros(3, 3), 4.0, 60.0).unwrap();
        assert!((v - DMatrix::identity(3, 3) * (4.0 / 61.0)).amax() < 1e-15);
        let v = update_v(&gram, &DMatrix::zeros(3, 3), 0.0, 60.0).unwrap();
        assert_eq!(v, DMatrix::zeros(3, 3));
    }

    #[test]
    fn projection_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[5.0, 2.0, -1.0, 5.0]);
        assert_eq!(project_z(&a), DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        let z = random_feasible(6, 5);
        assert_eq!(project_z(&z), z);
    }

    #[test]
    fn z_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let w = update_w(&random_feasible(5, 7), 2);
        assert_eq!(update_z(&v, &w, 60.0, 0.0), project_z(&v));
        let i = DMatrix::identity(5, 5);
        let mut a = v.clone();
        for r in 0..5 {
            for c in 0..5 {
                a[(r, c)] -= 0.8 / 60.0 * (i[(r, r)] - i[(r, c)]);
            }
        }
        assert_eq!(update_z(&v, &i, 60.0, 0.8), project_z(&a));
        let zero = DMatrix::zeros(4, 4);
        assert_eq!(update_z(&zero, &zero, 60.0, 0.8), zero);
    }

    #[test]
    fn objective_examples() {
        let gram = GramMatrix::from_matrix(DMatrix::identity(4, 4), KernelKind::Linear).unwrap();
        let zero = DMatrix::zeros(4, 4);
        let cfg = SolverConfig::default();
        assert!((objective_value(&gram, &zero, &zero, &zero, &cfg) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn fast_objective_agrees_with_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = DMatrix::from_fn(6, 12, |_, _| rng.random_range(-1.0..1.0));
        let gram = GramMatrix::from_matrix(s.transpose() * &s, KernelKind::Linear).unwrap();
        let cfg = SolverConfig::default();
        let z_prev = random_feasible(12, 9);
        let v = update_v(&gram, &z_prev, cfg.alpha, cfg.beta).unwrap();
        let w = update_w(&z_prev, 3);
        let z_next = update_z(&v, &w, cfg.beta, cfg.gamma);
        let fast = fast_objective(&gram, gram.k.trace(), &z_prev, &z_next, &v, &w, &cfg);
        let direct = objective_value(&gram, &z_next, &v, &w, &cfg);
        assert!((fast - direct).abs() < 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn sparse_and_dense_products_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let inv = DMatrix::from_fn(7, 7, |_, _| rng.random_range(-1.0..1.0));
        let fit = DMatrix::from_fn(7, 7, |_, _| rng.random_range(-1.0..1.0));
        let mut z = DMatrix::zeros(7, 7);
        z[(1, 2)] = 0.3;
        z[(2, 1)] = 0.3;
        let sparse = apply_inverse(&inv, &fit, &z, 60.0);
        let dense = &fit + &inv * &z * 60.0;
        assert!((sparse - dense).amax() < 1e-12);
    }

    #[test]
    fn zero_iterations() {
        let gram = GramMatrix::from_matrix(DMatrix::identity(4, 4), KernelKind::Linear).unwrap();
        let cfg = SolverConfig {
            max_iter: 0,
            ..SolverConfig::default()
        };
        let rep = solve(&gram, &cfg).unwrap();
        assert_eq!(rep.z, DMatrix::zeros(4, 4));
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { tol: 0.0, ..Default::default() }.validate().is_err());
    }
}
