//! Active subspaces: the gradient outer-product matrix `C = E[grad f grad f^T]`,
//! its eigendecomposition, bootstrap error estimates and the split of the
//! parameter space into active and inactive coordinates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("invalid sample-count arguments: {0}")]
    InvalidHeuristic(String),
    #[error("need at least {needed} gradient samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("gradient {index} has length {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("gradient {index} is not finite")]
    NonFinite { index: usize },
    #[error("subspace dimension {k} must satisfy 1 <= k <= {n}")]
    InvalidDimension { k: usize, n: usize },
    #[error("bootstrap needs at least 30 replicates, got {0}")]
    TooFewReplicates(usize),
}

/// `ceil(alpha * ell * ln n)` gradient samples.
pub fn heuristic_sample_count(alpha_factor: f64, ell: usize, n: f64) -> Result<usize, SubspaceError> {
    if !(2.0..=10.0).contains(&alpha_factor) {
        return Err(SubspaceError::InvalidHeuristic(format!(
            "sampling factor {alpha_factor} outside [2, 10]"
        )));
    }
    if ell < 1 || ell as f64 > n {
        return Err(SubspaceError::InvalidHeuristic(format!(
            "eigenvalue count {ell} outside [1, {n}]"
        )));
    }
    let raw = alpha_factor * ell as f64 * n.ln();
    // absorb roundoff when the product is an integer in exact arithmetic
    let nearest = raw.round();
    let count = if (raw - nearest).abs() <= 1e-9 * raw.max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    Ok(count as usize)
}

/// Eigenpairs of the sample gradient outer-product matrix.
/// Relative size below which an eigenvalue is treated as zero.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Descending, clipped at zero.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub eigenvectors: DMatrix<f64>,
    /// Set when every eigenvalue is below `1e-30`.
    pub degenerate: bool,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Ratios `lambda_k / lambda_{k+1}` for `k = 1..n-1`; infinite when the
    /// denominator vanishes and the numerator does not. Eigenvalues below
    /// [`RANK_TOL`] times the largest count as zero, so roundoff in a
    /// rank-deficient matrix does not produce spurious gaps.
    pub fn gap_ratios(&self) -> Vec<f64> {
        let floor = RANK_TOL * self.eigenvalues.first().copied().unwrap_or(0.0);
        let cut = |v: f64| if v > floor { v } else { 0.0 };
        self.eigenvalues
            .windows(2)
            .map(|w| [cut(w[0]), cut(w[1])])
            .map(|w| {
                if w[1] > 0.0 {
                    w[0] / w[1]
                } else if w[0] > 0.0 {
                    f64::INFINITY
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// The `k` with the largest gap ratio, smallest on ties.
    pub fn suggested_dimension(&self) -> usize {
        let ratios = self.gap_ratios();
        let mut best = 0;
        for (i, r) in ratios.iter().enumerate() {
            if *r > ratios[best] {
                best = i;
            }
        }
        best + 1
    }
}

/// `(1/N) sum grad grad^T`.
pub fn gradient_matrix(gradients: &[Vec<f64>]) -> Result<DMatrix<f64>, SubspaceError> {
    let n = gradients.first().map(Vec::len).ok_or(SubspaceError::InsufficientSamples {
        needed: 1,
        got: 0,
    })?;
    let mut c = DMatrix::zeros(n, n);
    for (index, g) in gradients.iter().enumerate() {
        if g.len() != n {
            return Err(SubspaceError::DimensionMismatch {
                index,
                expected: n,
                got: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(SubspaceError::NonFinite { index });
        }
        let v = DVector::from_column_slice(g);
        c.ger(1.0, &v, &v, 1.0);
    }
    Ok(c / gradients.len() as f64)
}

/// Symmetric eigendecomposition sorted descending, with each eigenvector's
/// largest-magnitude entry made positive.
pub fn decompose(c: &DMatrix<f64>) -> Spectrum {
    let n = c.nrows();
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
            .0;
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
        values.push(eig.eigenvalues[src].max(0.0));
    }
    let degenerate = values.iter().all(|v| *v < 1e-30);
    if degenerate {
        log::warn!("gradient outer-product matrix is numerically zero");
    }
    Spectrum {
        eigenvalues: values,
        eigenvectors: vectors,
        degenerate,
    }
}

pub fn estimate_c(gradients: &[Vec<f64>]) -> Result<Spectrum, SubspaceError> {
    let n = gradients.first().map_or(0, Vec::len);
    if gradients.len() < n.max(1) {
        return Err(SubspaceError::InsufficientSamples {
            needed: n.max(1),
            got: gradients.len(),
        });
    }
    Ok(decompose(&gradient_matrix(gradients)?))
}

/// `|| P_a - P_b ||_2` for the orthogonal projectors onto the spans of the
/// first `k` columns of two orthonormal bases, computed as the largest
/// singular value of `A_1^T B_2`.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize) -> f64 {
    let n = a.nrows();
    if k == 0 || k >= n {
        return 0.0;
    }
    let cross = a.columns(0, k).transpose() * b.columns(k, n - k);
    cross.singular_values().max()
}

/// Bootstrap envelopes of the spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    /// 2.5 and 97.5 percentiles per eigenvalue.
    pub eigenvalue_intervals: Vec<[f64; 2]>,
    /// Mean subspace distance for `k = 1..n-1` (index `k - 1`).
    pub subspace_errors: Vec<f64>,
    pub replicates: usize,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resamples the gradients with replacement `n_boot` times; replicate `r`
/// draws from stream `r` of a ChaCha generator seeded with `seed`, so results
/// do not depend on scheduling.
pub fn bootstrap_errors(
    gradients: &[Vec<f64>],
    reference: &Spectrum,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapSummary, SubspaceError> {
    if n_boot < 30 {
        return Err(SubspaceError::TooFewReplicates(n_boot));
    }
    let n = reference.dim();
    gradient_matrix(gradients)?;
    let count = gradients.len();
    let replicates: Vec<(Vec<f64>, Vec<f64>)> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut c = DMatrix::zeros(n, n);
            for _ in 0..count {
                let g = &gradients[rng.random_range(0..count)];
                let v = DVector::from_column_slice(g);
                c.ger(1.0, &v, &v, 1.0);
            }
            let spec = decompose(&(c / count as f64));
            let dists = (1..n)
                .map(|k| subspace_distance(&reference.eigenvectors, &spec.eigenvectors, k))
                .collect();
            (spec.eigenvalues, dists)
        })
        .collect();

    let eigenvalue_intervals = (0..n)
        .map(|i| {
            let mut vals: Vec<f64> = replicates.iter().map(|(ev, _)| ev[i]).collect();
            vals.sort_by(f64::total_cmp);
            [percentile(&vals, 0.025), percentile(&vals, 0.975)]
        })
        .collect();
    let subspace_errors = (0..n.saturating_sub(1))
        .map(|k| replicates.iter().map(|(_, d)| d[k]).sum::<f64>() / n_boot as f64)
        .collect();
    Ok(BootstrapSummary {
        eigenvalue_intervals,
        subspace_errors,
        replicates: n_boot,
    })
}

/// Orthonormal basis split `W = (W1 W2)` with `W1` spanning the active directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSubspace {
    pub k: usize,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
}

impl ActiveSubspace {
    /// `k = n` is allowed and leaves an empty inactive block.
    pub fn from_basis(w: &DMatrix<f64>, k: usize) -> Result<Self, SubspaceError> {
        let n = w.ncols();
        if k < 1 || k > n {
            return Err(SubspaceError::InvalidDimension { k, n });
        }
        Ok(ActiveSubspace {
            k,
            w1: w.columns(0, k).into_owned(),
            w2: w.columns(k, n - k).into_owned(),
        })
    }

    pub fn dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn inactive_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn project_active(&self, x: &[f64]) -> Vec<f64> {
        (self.w1.tr_mul(&DVector::from_column_slice(x))).as_slice().to_vec()
    }

    pub fn project_inactive(&self, x: &[f64]) -> Vec<f64> {
        (self.w2.tr_mul(&DVector::from_column_slice(x))).as_slice().to_vec()
    }

    /// `W1 y + W2 z`.
    pub fn reconstruct(&self, y: &[f64], z: &[f64]) -> Vec<f64> {
        let mut x = &self.w1 * DVector::from_column_slice(y);
        if self.inactive_dim() > 0 {
            x += &self.w2 * DVector::from_column_slice(z);
        }
        x.as_slice().to_vec()
    }
}

/// Split of the spectrum's eigenvectors at `1 <= k < n`.
pub fn split(spectrum: &Spectrum, k: usize) -> Result<ActiveSubspace, SubspaceError> {
    let n = spectrum.dim();
    if k < 1 || k >= n {
        return Err(SubspaceError::InvalidDimension { k, n: n.saturating_sub(1) });
    }
    ActiveSubspace::from_basis(&spectrum.eigenvectors, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heuristic_counts() {
        assert_eq!(heuristic_sample_count(10.0, 8, 8.0).unwrap(), 167);
        assert_eq!(heuristic_sample_count(2.0, 1, std::f64::consts::E).unwrap(), 2);
        assert_eq!(heuristic_sample_count(10.0, 2, 8.0).unwrap(), 42);
        assert!(heuristic_sample_count(11.0, 2, 8.0).is_err());
        assert!(heuristic_sample_count(5.0, 9, 8.0).is_err());
    }

    #[test]
    fn identical_gradients_give_rank_one() {
        let g = vec![0.3, -0.4, 1.2, 0.0];
        let spec = estimate_c(&vec![g.clone(); 6]).unwrap();
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        assert!((spec.eigenvalues[0] - norm2).abs() < 1e-12 * norm2);
        assert!(spec.eigenvalues[1..].iter().all(|v| *v < 1e-14));
        // pivot entry 1.2 is positive so w1 = g / |g| with that sign
        for (w, gi) in spec.eigenvectors.column(0).iter().zip(&g) {
            assert!((w - gi / norm2.sqrt()).abs() < 1e-12);
        }
        let boot = bootstrap_errors(&vec![g; 6], &spec, 30, 1).unwrap();
        assert!(boot.subspace_errors[0] < 1e-12);
    }

    #[test]
    fn sign_convention_and_orthonormality() {
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 1.0]);
        let a = decompose(&c);
        let b = decompose(&c);
        assert_eq!(a, b);
        let wtw = a.eigenvectors.transpose() * &a.eigenvectors;
        assert!((wtw - DMatrix::identity(3, 3)).amax() < 1e-12);
        for col in a.eigenvectors.column_iter() {
            let pivot = col.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
        assert!(a.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn identity_split_and_projection() {
        let spec = Spectrum {
            eigenvalues: vec![3.0, 2.0, 1.0, 0.5],
            eigenvectors: DMatrix::identity(4, 4),
            degenerate: false,
        };
        let s = split(&spec, 2).unwrap();
        assert_eq!(s.w1, DMatrix::identity(4, 4).columns(0, 2).into_owned());
        let x = [0.1, -0.7, 0.3, 0.9];
        assert_eq!(s.project_active(&x), vec![0.1, -0.7]);
        assert_eq!(s.project_inactive(&x), vec![0.3, 0.9]);
        assert_eq!(split(&spec, 3).unwrap().inactive_dim(), 1);
        assert!(split(&spec, 4).is_err() && split(&spec, 0).is_err());
        assert_eq!(s.project_active(&[0.0; 4]), vec![0.0, 0.0]);
    }

    #[test]
    fn distance_of_orthogonal_subspaces_is_one() {
        let a = DMatrix::<f64>::identity(3, 3);
        let b = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((subspace_distance(&a, &b, 1) - 1.0).abs() < 1e-12);
        assert!(subspace_distance(&a, &b, 2) < 1e-12);
    }

    #[test]
    fn largest_gap_picks_dimension() {
        let spec = Spectrum {
            eigenvalues: vec![10.0, 9.0, 0.01, 0.005],
            eigenvectors: DMatrix::identity(4, 4),
            degenerate: false,
        };
        assert_eq!(spec.suggested_dimension(), 2);
    }
}
