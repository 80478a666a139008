use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regimekit_core::concepts::{
    adjusted_rand_index, estimate_k, merge_into_catalog, ConceptCatalog, WindowClustering,
};
use regimekit_core::data::{generate_syd, realized_volatility, znormalize_window, Subseries};
use regimekit_core::drift::{
    forecast_values, lambda, psi, transition_scores, lambda_matrix, occupancy, psi_matrix,
    predict_next, evaluate_rmse, Trajectory,
};
use regimekit_core::kernels::{gram, nystrom_approximate, KernelKind};
use regimekit_core::representation::{
    block_diag_penalty, is_feasible, laplacian, project_z, solve, update_w, SolverConfig,
};
use regimekit_core::segmentation::{mdl_select, WindowScore, WindowScoreSet};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Symmetric zero-diagonal matrix with dense random weights inside each
/// block and zeros across blocks.
fn block_matrix(sizes: &[usize], seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = sizes.iter().sum();
    let mut z = DMatrix::zeros(n, n);
    let mut start = 0;
    for &s in sizes {
        for i in start..start + s {
            for j in (i + 1)..start + s {
                let v = rng.random_range(0.5..1.0);
                z[(i, j)] = v;
                z[(j, i)] = v;
            }
        }
        start += s;
    }
    z
}

fn reference_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn balanced_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn syd_truth_shape(n in 1usize..30, segs in 1usize..6, len in 1usize..12, seed in any::<u64>()) {
        let s = generate_syd(n, segs, len, seed).unwrap();
        let gt = s.ground_truth().unwrap();
        prop_assert_eq!(gt.labels.len(), n);
        prop_assert!(gt.labels.iter().all(|row| row.len() == segs));
        prop_assert!(gt.labels.iter().flatten().all(|&l| (1..=5).contains(&l)));
    }

    #[test]
    fn volatility_is_non_negative(closes in prop::collection::vec(0.01f64..100.0, 2..60), period in 1usize..6) {
        let v = realized_volatility(&closes, period).unwrap();
        prop_assert!(v.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn znormalize_is_idempotent(rows in 2usize..12, cols in 1usize..6, seed in any::<u64>()) {
        let sub = Subseries::new(1, 0, random_matrix(rows, cols, seed) * 7.0);
        let once = znormalize_window(&sub);
        let twice = znormalize_window(&once);
        prop_assert!((once.values - twice.values).amax() <= 1e-10);
    }

    #[test]
    fn gram_is_permutation_equivariant(rows in 2usize..10, cols in 2usize..12, seed in any::<u64>(), kind in 0usize..4) {
        let kind = [
            KernelKind::Gaussian,
            KernelKind::Linear,
            KernelKind::Polynomial { degree: 2, offset: 1.0 },
            KernelKind::Sigmoid { slope: 0.01, offset: 0.0 },
        ][kind];
        let values = random_matrix(rows, cols, seed);
        let mut perm: Vec<usize> = (0..cols).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % cols);
        let permuted = DMatrix::from_fn(rows, cols, |r, c| values[(r, perm[c])]);
        let g = gram(&Subseries::new(1, 0, values), kind).unwrap();
        let gp = gram(&Subseries::new(1, 0, permuted), kind).unwrap();
        for i in 0..cols {
            for j in 0..cols {
                prop_assert_eq!(gp.k[(i, j)], g.k[(perm[i], perm[j])]);
            }
        }
    }

    #[test]
    fn nystrom_with_every_series_is_exact(rows in 3usize..10, cols in 3usize..15, seed in any::<u64>()) {
        let sub = Subseries::new(1, 0, random_matrix(rows, cols, seed));
        let all: Vec<usize> = (0..cols).collect();
        let exact = gram(&sub, KernelKind::Gaussian).unwrap();
        let approx = nystrom_approximate(&sub, &all, KernelKind::Gaussian).unwrap();
        prop_assert!((&approx.k - &exact.k).norm() / exact.k.norm() <= 1e-6);
    }

    #[test]
    fn projection_is_feasible(n in 1usize..15, seed in any::<u64>()) {
        let z = project_z(&(random_matrix(n, n, seed) * 3.0));
        prop_assert!(is_feasible(&z));
    }

    #[test]
    fn block_matrices_have_k_zero_eigenvalues(k in 2usize..7, extra in 0usize..40, seed in any::<u64>()) {
        let n = 4 * k + extra;
        let z = block_matrix(&balanced_sizes(n, k), seed);
        let ev = reference_eigenvalues(&laplacian(&z));
        prop_assert_eq!(ev.iter().filter(|&&v| v < 1e-8).count(), k);
        prop_assert!(ev[k] > 1e-4);
        prop_assert!(block_diag_penalty(&z, k) <= 1e-8);
    }

    #[test]
    fn w_attains_the_lowest_eigenvalue_sum(n in 3usize..16, k in 1usize..4, seed in any::<u64>()) {
        let z = project_z(&random_matrix(n, n, seed));
        let l = laplacian(&z);
        let w = update_w(&z, k);
        let expected: f64 = reference_eigenvalues(&l)[..k].iter().sum();
        prop_assert!((l.dot(&w) - expected).abs() <= 1e-6);
    }

    #[test]
    fn ideal_blocks_give_their_count(k in 2usize..7, n in 20usize..101, seed in any::<u64>()) {
        let z = block_matrix(&balanced_sizes(n, k), seed);
        prop_assert_eq!(estimate_k(&z, 0.2).unwrap().k_hat, k);
    }

    #[test]
    fn ari_ignores_label_names(labels in prop::collection::vec(0usize..4, 3..30), shift in 1usize..4) {
        let renamed: Vec<usize> = labels.iter().map(|l| (l + shift) % 4 + 10).collect();
        prop_assert!((adjusted_rand_index(&labels, &renamed).unwrap() - 1.0).abs() < 1e-12
            || labels.iter().all(|&l| l == labels[0]));
    }

    #[test]
    fn catalog_profiles_stay_separated(seed in any::<u64>(), windows in 1usize..6, rho in prop::option::of(0.1f64..4.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut catalog = ConceptCatalog::new(rho);
        for p in 1..=windows {
            let k = rng.random_range(1..5);
            let centroids: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let clustering = WindowClustering { window_index: p, labels: (0..k).collect(), k, centroids };
            merge_into_catalog(&mut catalog, &clustering).unwrap();
            let r = catalog.rho.unwrap();
            for a in &catalog.profiles {
                for b in &catalog.profiles {
                    if a.id < b.id {
                        let d: f64 = a.centroid.iter().zip(&b.centroid).map(|(x, y)| (x - y) * (x - y)).sum();
                        prop_assert!(d > r);
                    }
                }
            }
        }
    }

    #[test]
    fn mdl_ignores_candidate_order(ws in prop::collection::vec(0.001f64..1.0, 1..10), seed in any::<u64>()) {
        let entries: Vec<WindowScore> = ws
            .iter()
            .enumerate()
            .map(|(i, &s)| WindowScore { w: 10 * (i + 1), ws: s, counts: vec![1], b: 1 })
            .collect();
        let mut shuffled = entries.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = mdl_select(&WindowScoreSet { candidate_grid: vec![], entries }).unwrap();
        let b = mdl_select(&WindowScoreSet { candidate_grid: vec![], entries: shuffled }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn drift_scores_are_bounded(n in 1usize..12, b in 2usize..7, k in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajs: Vec<Trajectory> = (0..n)
            .map(|i| Trajectory { series_index: i, labels: (0..b).map(|_| rng.random_range(0..k)).collect() })
            .collect();
        let occ = occupancy(&trajs, k);
        for p in 1..=b {
            for r in 0..k {
                for m in 0..k {
                    prop_assert!((0.0..=1.0).contains(&psi(&trajs[0].labels, p, r, m)));
                    // Each window pair contributes a term in [0, 1].
                    prop_assert!((0.0..=(p.saturating_sub(1)) as f64).contains(&lambda(&occ, p, r, m)));
                }
            }
            let lam = lambda_matrix(&occ, p, k);
            for t in &trajs {
                let ps = psi_matrix(&t.labels, p, k);
                let s = transition_scores(&ps, &lam);
                prop_assert!(s.prob.iter().all(|v| v.is_finite() && *v >= 0.0));
                // Dropping the shared denominator keeps the prediction.
                let raw = &ps * &lam;
                let current = t.labels[p - 1];
                if !s.fallback {
                    let unscaled = regimekit_core::drift::TransitionScores { prob: raw, fallback: false };
                    prop_assert_eq!(
                        predict_next(&s, current, &occ[p - 1]),
                        predict_next(&unscaled, current, &occ[p - 1])
                    );
                }
            }
        }
    }

    #[test]
    fn forecast_weights_are_normalised_and_recent_heavy(labels in prop::collection::vec(0usize..3, 1..8), tau in 0.05f64..0.95) {
        let p = labels.len();
        let history: Vec<Vec<f64>> = (0..p).map(|l| vec![l as f64; 4]).collect();
        let refs: Vec<&[f64]> = history.iter().map(Vec::as_slice).collect();
        let target = labels[p - 1];
        let f = forecast_values(0, &labels, &refs, target, tau, &[0.0; 4]).unwrap();
        let total: f64 = f.weights.iter().map(|w| w.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(f.weights.iter().all(|w| w.1 > 0.0));
        prop_assert!(f.weights.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    }

    #[test]
    fn rmse_matches_loop(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..50)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let mut sse = 0.0;
        for i in 0..a.len() {
            sse += (a[i] - b[i]).powi(2);
        }
        let expected = (sse / a.len() as f64).sqrt();
        prop_assert!((evaluate_rmse(&a, &b).unwrap() - expected).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solve_output_is_feasible_and_monotone(rows in 4usize..12, cols in 4usize..16, seed in any::<u64>(), k in 1usize..4) {
        let sub = Subseries::new(1, 0, random_matrix(rows, cols, seed));
        let g = gram(&sub, KernelKind::Gaussian).unwrap();
        let rep = solve(&g, &SolverConfig::default().with_k(k)).unwrap();
        prop_assert!(rep.is_feasible());
        prop_assert!(rep.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    }

    #[test]
    fn solve_is_permutation_equivariant(rows in 4usize..10, cols in 4usize..14, seed in any::<u64>()) {
        let sub = Subseries::new(1, 0, random_matrix(rows, cols, seed));
        let g = gram(&sub, KernelKind::Gaussian).unwrap();
        let mut perm: Vec<usize> = (0..cols).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for i in (1..cols).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let cfg = SolverConfig::default();
        let z = solve(&g, &cfg).unwrap().z;
        let zp = solve(&g.permuted(&perm), &cfg).unwrap().z;
        for i in 0..cols {
            for j in 0..cols {
                prop_assert!((zp[(i, j)] - z[(perm[i], perm[j])]).abs() <= 1e-6);
            }
        }
    }
}
