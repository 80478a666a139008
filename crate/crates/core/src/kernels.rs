//! Gram matrices over a window's subseries and their Nyström approximation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use nalgebra::DMatrix;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::seq::index::sample;

use crate::data::Subseries;
use crate::error::{Error, Result};
use crate::rng;

/// Kernel family with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "lowercase"))]
pub enum KernelKind {
    /// `exp(-|Si - Sj|^2 / d_max^2)` with `d_max` the largest pairwise
    /// distance in the window.
    Gaussian,
    /// `Si . Sj`
    Linear,
    /// `(Si . Sj + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `tanh(slope * Si . Sj + offset)`
    Sigmoid { slope: f64, offset: f64 },
}

impl Default for KernelKind {
    fn default() -> Self {
        KernelKind::Gaussian
    }
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Linear => "linear",
            KernelKind::Polynomial { .. } => "polynomial",
            KernelKind::Sigmoid { .. } => "sigmoid",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelKind::Polynomial { degree, offset } => {
                if degree == 0 || !offset.is_finite() {
                    return Err(Error::InvalidArgument(
                        "polynomial kernel needs degree >= 1 and a finite offset".into(),
                    ));
                }
            }
            KernelKind::Sigmoid { slope, offset } => {
                if !slope.is_finite() || !offset.is_finite() {
                    return Err(Error::InvalidArgument(
                        "sigmoid kernel needs finite slope and offset".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Kernel value from an inner product (non-Gaussian families).
    fn from_dot(&self, dot: f64) -> f64 {
        match *self {
            KernelKind::Linear => dot,
            KernelKind::Polynomial { degree, offset } => (dot + offset).powi(degree as i32),
            KernelKind::Sigmoid { slope, offset } => (slope * dot + offset).tanh(),
            KernelKind::Gaussian => unreachable!("gaussian kernel is distance based"),
        }
    }
}

/// Parses a family name with default parameters (`degree = 2, offset = 1`
/// for polynomial, `slope = 0.01, offset = 0` for sigmoid).
impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "rbf" => Ok(KernelKind::Gaussian),
            "linear" => Ok(KernelKind::Linear),
            "polynomial" | "poly" => Ok(KernelKind::Polynomial {
                degree: 2,
                offset: 1.0,
            }),
            "sigmoid" => Ok(KernelKind::Sigmoid {
                slope: 0.01,
                offset: 0.0,
            }),
            _ => Err(Error::UnknownKernel(s.to_string())),
        }
    }
}

/// A kernel Gram matrix over the series of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub k: DMatrix<f64>,
    pub kind: KernelKind,
    /// Largest pairwise distance (Gaussian family only).
    pub d_max: Option<f64>,
    /// Set when every subseries in the window is identical, so the Gaussian
    /// bandwidth is zero and the all-ones limit is returned.
    pub degenerate: bool,
}

impl GramMatrix {
    /// Wraps an explicit kernel matrix, checking it is square, finite and
    /// symmetric.
    pub fn from_matrix(k: DMatrix<f64>, kind: KernelKind) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n {
            return Err(Error::DimensionMismatch(alloc::format!(
                "gram matrix is {}x{}",
                n,
                k.ncols()
            )));
        }
        for j in 0..n {
            for i in 0..n {
                if !k[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if (k[(i, j)] - k[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(String::from("gram matrix is not symmetric")));
                }
            }
        }
        Ok(GramMatrix {
            k,
            kind,
            d_max: None,
            degenerate: false,
        })
    }

    pub fn size(&self) -> usize {
        self.k.nrows()
    }

    /// `P^T K P` for the permutation mapping new index `i` to old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.size();
        GramMatrix {
            k: DMatrix::from_fn(n, n, |i, j| self.k[(perm[i], perm[j])]),
            ..self.clone()
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn columns(values: &DMatrix<f64>) -> Vec<&[f64]> {
    let rows = values.nrows();
    let data = values.as_slice();
    (0..values.ncols())
        .map(|c| &data[c * rows..(c + 1) * rows])
        .collect()
}

/// Gaussian Gram matrix with the bandwidth set to the window's largest
/// pairwise distance.
pub fn gram_gaussian(sub: &Subseries) -> Result<GramMatrix> {
    let n = sub.width();
    if n < 2 {
        return Err(Error::TooSmall {
            steps: sub.len(),
            series: n,
        });
    }
    let cols = columns(&sub.values);
    let mut dist = DMatrix::zeros(n, n);
    let mut d_max_sq: f64 = 0.0;
    for j in 0..n {
        for i in (j + 1)..n {
            let d = squared_distance(cols[i], cols[j]);
            dist[(i, j)] = d;
            dist[(j, i)] = d;
            d_max_sq = d_max_sq.max(d);
        }
    }
    if d_max_sq == 0.0 {
        return Ok(GramMatrix {
            k: DMatrix::from_element(n, n, 1.0),
            kind: KernelKind::Gaussian,
            d_max: Some(0.0),
            degenerate: true,
        });
    }
    let k = dist.map(|d| (-d / d_max_sq).exp());
    Ok(GramMatrix {
        k,
        kind: KernelKind::Gaussian,
        d_max: Some(d_max_sq.sqrt()),
        degenerate: false,
    })
}

/// Linear, polynomial or sigmoid Gram matrix. Gaussian requests are
/// forwarded to [`gram_gaussian`].
pub fn gram_alternative(sub: &Subseries, kind: KernelKind) -> Result<GramMatrix> {
    kind.validate()?;
    if kind == KernelKind::Gaussian {
        return gram_gaussian(sub);
    }
    let n = sub.width();
    let cols = columns(&sub.values);
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = kind.from_dot(dot(cols[i], cols[j]));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        k,
        kind,
        d_max: None,
        degenerate: false,
    })
}

/// Gram matrix of any family.
pub fn gram(sub: &Subseries, kind: KernelKind) -> Result<GramMatrix> {
    match kind {
        KernelKind::Gaussian => gram_gaussian(sub),
        other => gram_alternative(sub, other),
    }
}

/// Low-rank reconstruction `C (W + ridge I)^-1 C^T` from the kernel columns
/// `C` of the prototype series and their block `W`. The ridge is
/// `1e-8 * trace(W) / m`. For the Gaussian family the bandwidth is the
/// largest distance among the computed series/prototype pairs, which equals
/// the exact bandwidth when every series is a prototype.
pub fn nystrom_approximate(
    sub: &Subseries,
    prototypes: &[usize],
    kind: KernelKind,
) -> Result<GramMatrix> {
    kind.validate()?;
    let n = sub.width();
    let m = prototypes.len();
    if m == 0 {
        return Err(Error::EmptyPrototypes);
    }
    let mut seen = alloc::vec![false; n];
    for &p in prototypes {
        if p >= n {
            return Err(Error::InvalidArgument(alloc::format!(
                "prototype index {p} out of range for {n} series"
            )));
        }
        if core::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument(alloc::format!(
                "prototype index {p} repeated"
            )));
        }
    }

    let cols = columns(&sub.values);
    let mut c = DMatrix::zeros(n, m);
    let mut degenerate = false;
    let mut d_max = None;
    match kind {
        KernelKind::Gaussian => {
            let mut d_max_sq: f64 = 0.0;
            for (a, &p) in prototypes.iter().enumerate() {
                for i in 0..n {
                    let d = squared_distance(cols[i], cols[p]);
                    c[(i, a)] = d;
                    d_max_sq = d_max_sq.max(d);
                }
            }
            if d_max_sq == 0.0 {
                degenerate = true;
                c.fill(1.0);
            } else {
                c.apply(|d| *d = (-*d / d_max_sq).exp());
            }
            d_max = Some(d_max_sq.sqrt());
        }
        other => {
            for (a, &p) in prototypes.iter().enumerate() {
                for i in 0..n {
                    c[(i, a)] = other.from_dot(dot(cols[i], cols[p]));
                }
            }
        }
    }

    let mut block = DMatrix::from_fn(m, m, |a, b| c[(prototypes[a], b)]);
    let ridge = 1e-8 * block.trace() / m as f64;
    for a in 0..m {
        block[(a, a)] += ridge;
    }
    let ct = c.transpose();
    let solved = match block.clone().cholesky() {
        Some(chol) => chol.solve(&ct),
        None => block
            .lu()
            .solve(&ct)
            .ok_or(Error::NumericalFailure { iteration: 0 })?,
    };
    let approx = &c * solved;
    let k = (&approx + approx.transpose()) * 0.5;
    Ok(GramMatrix {
        k,
        kind,
        d_max,
        degenerate,
    })
}

/// `m` distinct series indices drawn uniformly, sorted.
pub fn random_prototypes(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(alloc::format!(
            "cannot draw {m} prototypes from {n} series"
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_PROTOTYPES);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// For each profile, the series (column of `sub`) closest to it in
/// Euclidean distance; duplicates are skipped, so the result may be shorter
/// than `profiles`.
pub fn prototypes_near(sub: &Subseries, profiles: &[Vec<f64>]) -> Result<Vec<usize>> {
    let cols = columns(&sub.values);
    let mut out: Vec<usize> = Vec::with_capacity(profiles.len());
    for profile in profiles {
        if profile.len() != sub.len() {
            return Err(Error::WindowLengthMismatch {
                expected: sub.len(),
                actual: profile.len(),
            });
        }
        let mut best = (f64::INFINITY, 0usize);
        for (i, col) in cols.iter().enumerate() {
            let d = squared_distance(col, profile);
            if d < best.0 {
                best = (d, i);
            }
        }
        if !out.contains(&best.1) {
            out.push(best.1);
        }
    }
    Ok(out)
}

/// Catalog-guided prototypes topped up with uniformly drawn series to `m`.
pub fn select_prototypes(
    sub: &Subseries,
    profiles: &[Vec<f64>],
    m: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = sub.width();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(alloc::format!(
            "cannot select {m} prototypes from {n} series"
        )));
    }
    let mut chosen = prototypes_near(sub, profiles)?;
    chosen.truncate(m);
    if chosen.len() < m {
        for i in random_prototypes(n, n, seed)?.into_iter().rev() {
            if chosen.len() == m {
                break;
            }
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_sub(rows: usize, cols: usize, seed: u64) -> Subseries {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Subseries::new(1, 0, DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn gaussian_identical_pair() {
        let sub = Subseries::new(1, 0, DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]));
        let g = gram_gaussian(&sub).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.k, DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn gaussian_matches_double_loop() {
        let sub = random_sub(5, 3, 11);
        let g = gram_gaussian(&sub).unwrap();
        let s = &sub.values;
        let mut d = [[0.0; 3]; 3];
        let mut dmax = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for t in 0..5 {
                    acc += (s[(t, i)] - s[(t, j)]).powi(2);
                }
                d[i][j] = acc;
                dmax = dmax.max(acc);
            }
        }
        let mut hit_max = false;
        for i in 0..3 {
            for j in 0..3 {
                let expect = std::primitive::f64::exp(-d[i][j] / dmax);
                assert!((g.k[(i, j)] - expect).abs() < 1e-12);
                if d[i][j] == dmax {
                    assert!((g.k[(i, j)] - std::primitive::f64::exp(-1.0)).abs() < 1e-12);
                    hit_max = true;
                }
            }
            assert_eq!(g.k[(i, i)], 1.0);
        }
        assert!(hit_max);
    }

    #[test]
    fn linear_of_orthonormal_columns_is_identity() {
        let s = 0.5f64.sqrt();
        let sub = Subseries::new(1, 0, DMatrix::from_column_slice(2, 2, &[s, s, s, -s]));
        let g = gram_alternative(&sub, KernelKind::Linear).unwrap();
        assert!((g.k - DMatrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn polynomial_degree_one_is_linear() {
        let sub = random_sub(6, 4, 2);
        let lin = gram_alternative(&sub, KernelKind::Linear).unwrap();
        let poly = gram_alternative(
            &sub,
            KernelKind::Polynomial {
                degree: 1,
                offset: 0.0,
            },
        )
        .unwrap();
        assert_eq!(lin.k, poly.k);
    }

    #[test]
    fn sigmoid_matches_tanh() {
        let sub = random_sub(7, 5, 3);
        let kind = KernelKind::Sigmoid {
            slope: 0.3,
            offset: -0.2,
        };
        let g = gram_alternative(&sub, kind).unwrap();
        let s = &sub.values;
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for t in 0..7 {
                    acc += s[(t, i)] * s[(t, j)];
                }
                assert!((g.k[(i, j)] - std::primitive::f64::tanh(0.3 * acc - 0.2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unknown_family() {
        assert!(matches!("cosine".parse::<KernelKind>(), Err(Error::UnknownKernel(_))));
        assert_eq!("RBF".parse::<KernelKind>().unwrap(), KernelKind::Gaussian);
    }

    #[test]
    fn nystrom_exact_and_rank_one() {
        let sub = random_sub(8, 12, 4);
        let exact = gram_gaussian(&sub).unwrap();
        let all: Vec<usize> = (0..12).collect();
        let approx = nystrom_approximate(&sub, &all, KernelKind::Gaussian).unwrap();
        let rel = (&approx.k - &exact.k).norm() / exact.k.norm();
        assert!(rel <= 1e-6, "relative error {rel}");

        let one = nystrom_approximate(&sub, &[3], KernelKind::Gaussian).unwrap();
        let sv = one.k.clone().singular_values();
        assert!(sv[1] <= 1e-10 * sv[0]);

        assert!(matches!(
            nystrom_approximate(&sub, &[], KernelKind::Gaussian),
            Err(Error::EmptyPrototypes)
        ));
        assert!(nystrom_approximate(&sub, &[1, 1], KernelKind::Gaussian).is_err());
    }

    #[test]
    fn prototype_selection() {
        let sub = random_sub(4, 10, 9);
        let p = random_prototypes(10, 4, 1).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        let profile: Vec<f64> = sub.values.column(6).iter().copied().collect();
        let chosen = select_prototypes(&sub, &[profile.clone(), profile], 3, 1).unwrap();
        assert_eq!(chosen[0], 6);
        assert_eq!(chosen.len(), 3);
        let mut d = chosen.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 3);
    }
}
