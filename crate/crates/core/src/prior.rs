//! Uniform prior on the normalized box `[-1, 1]^8`, its affine map to physical
//! parameters, and Gaussian kernel density estimates of projected samples.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::PlasticParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("coordinate {index} = {value} lies outside the prior box")]
    OutOfBox { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid prior interval {index}: [{min}, {max}]")]
    InvalidInterval { index: usize, min: f64, max: f64 },
    #[error("kernel density estimate needs at least one sample")]
    NoSamples,
}

/// Physical `(min, max)` interval per plasticity parameter, ordered as
/// [`PlasticParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorBox {
    pub bounds: Vec<[f64; 2]>,
}

impl Default for PriorBox {
    fn default() -> Self {
        PriorBox {
            bounds: vec![
                [1.8e6, 2.4e6],
                [0.5, 0.6],
                [0.2, 0.3],
                [1.6e-3, 1.9e-3],
                [0.75, 1.05],
                [0.3, 0.45],
                [0.01, 0.011],
                [0.67, 0.74],
            ],
        }
    }
}

pub const UNITS: [&str; 8] = ["Pa", "-", "-", "-", "-", "-", "-", "-"];

/// Whether every coordinate of `x` lies in `[-1, 1]`.
pub fn in_unit_box(x: &[f64]) -> bool {
    x.iter().all(|v| (-1.0..=1.0).contains(v))
}

impl PriorBox {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        if self.bounds.len() != PlasticParams::DIM {
            return Err(PriorError::DimensionMismatch {
                expected: PlasticParams::DIM,
                got: self.bounds.len(),
            });
        }
        for (index, &[min, max]) in self.bounds.iter().enumerate() {
            if !(min.is_finite() && max.is_finite() && min < max) {
                return Err(PriorError::InvalidInterval { index, min, max });
            }
        }
        Ok(())
    }

    pub fn to_physical_vec(&self, x_norm: &[f64]) -> Result<Vec<f64>, PriorError> {
        self.check_dim(x_norm.len())?;
        x_norm
            .iter()
            .zip(&self.bounds)
            .enumerate()
            .map(|(index, (&x, &[lo, hi]))| {
                if (-1.0..=1.0).contains(&x) {
                    Ok(lo + 0.5 * (x + 1.0) * (hi - lo))
                } else {
                    Err(PriorError::OutOfBox { index, value: x })
                }
            })
            .collect()
    }

    pub fn to_normalized_vec(&self, phys: &[f64]) -> Result<Vec<f64>, PriorError> {
        self.check_dim(phys.len())?;
        phys.iter()
            .zip(&self.bounds)
            .enumerate()
            .map(|(index, (&v, &[lo, hi]))| {
                if (lo..=hi).contains(&v) {
                    Ok(2.0 * (v - lo) / (hi - lo) - 1.0)
                } else {
                    Err(PriorError::OutOfBox { index, value: v })
                }
            })
            .collect()
    }

    pub fn to_physical(&self, x_norm: &[f64]) -> Result<PlasticParams, PriorError> {
        let v = self.to_physical_vec(x_norm)?;
        let mut a = [0.0; 8];
        a.copy_from_slice(&v);
        Ok(PlasticParams::from_array(a))
    }

    pub fn to_normalized(&self, pp: &PlasticParams) -> Result<Vec<f64>, PriorError> {
        self.to_normalized_vec(&pp.to_array())
    }

    /// Affine map without the box check, for moments of normalized samples.
    pub fn scale_to_physical(&self, index: usize, x: f64) -> f64 {
        let [lo, hi] = self.bounds[index];
        lo + 0.5 * (x + 1.0) * (hi - lo)
    }

    /// Half-width of interval `index`, the factor mapping normalized spreads
    /// to physical ones.
    pub fn half_width(&self, index: usize) -> f64 {
        let [lo, hi] = self.bounds[index];
        0.5 * (hi - lo)
    }

    fn check_dim(&self, got: usize) -> Result<(), PriorError> {
        if got != self.dim() {
            return Err(PriorError::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

/// `count` i.i.d. points uniform on `[-1, 1]^dim`.
pub fn sample_prior<R: Rng + ?Sized>(rng: &mut R, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect())
        .collect()
}

/// Kernels beyond this many bandwidths (in the scaled norm) are dropped.
const KDE_CUTOFF: f64 = 7.0;
const MAX_GRID_CELLS: usize = 1 << 22;

/// Gaussian product-kernel density estimate.
///
/// Points are bucketed on a regular grid whose cells span `KDE_CUTOFF`
/// bandwidths, so an evaluation only visits the `3^k` neighbouring cells.
/// The dropped kernel mass is below `exp(-KDE_CUTOFF^2 / 2)` per point.
#[derive(Debug, Clone)]
pub struct KdeEstimate {
    dim: usize,
    n: usize,
    bandwidth: Vec<f64>,
    /// Points sorted by grid cell, row-major `n x dim`.
    points: Vec<f64>,
    origin: Vec<f64>,
    cell_width: Vec<f64>,
    cells_per_dim: Vec<usize>,
    /// Offsets into `points` (in rows) per flattened cell, length `cells + 1`.
    cell_start: Vec<usize>,
    norm: f64,
}

impl KdeEstimate {
    /// Fits with Scott's rule, `h_d = n^(-1/(k+4)) std_d`.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self, PriorError> {
        Self::fit_scaled(samples, 1.0)
    }

    /// Scott's rule bandwidths multiplied by `factor`.
    pub fn fit_scaled(samples: &[Vec<f64>], factor: f64) -> Result<Self, PriorError> {
        let n = samples.len();
        if n == 0 {
            return Err(PriorError::NoSamples);
        }
        let dim = samples[0].len();
        let scott = (n as f64).powf(-1.0 / (dim as f64 + 4.0));
        let mut bandwidth = Vec::with_capacity(dim);
        for d in 0..dim {
            let mean = samples.iter().map(|s| s[d]).sum::<f64>() / n as f64;
            let var = if n > 1 {
                samples.iter().map(|s| (s[d] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            let sd = var.sqrt();
            let h = factor * scott * if sd > 0.0 { sd } else { 1.0 };
            bandwidth.push(h);
        }
        Self::with_bandwidth(samples, bandwidth)
    }

    pub fn with_bandwidth(samples: &[Vec<f64>], bandwidth: Vec<f64>) -> Result<Self, PriorError> {
        let n = samples.len();
        if n == 0 {
            return Err(PriorError::NoSamples);
        }
        let dim = bandwidth.len();
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(PriorError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if n < 100 {
            log::warn!("kernel density estimate built from only {n} samples");
        }
        assert!(bandwidth.iter().all(|h| *h > 0.0 && h.is_finite()), "bandwidths must be positive");

        let mut origin = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        for s in samples {
            for d in 0..dim {
                origin[d] = origin[d].min(s[d]);
                upper[d] = upper[d].max(s[d]);
            }
        }
        let mut cell_width: Vec<f64> = bandwidth.iter().map(|h| KDE_CUTOFF * h).collect();
        let mut cells_per_dim: Vec<usize>;
        loop {
            cells_per_dim = (0..dim)
                .map(|d| ((upper[d] - origin[d]) / cell_width[d]).floor() as usize + 1)
                .collect();
            let total = cells_per_dim.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c));
            match total {
                Some(t) if t <= MAX_GRID_CELLS => break,
                _ => cell_width.iter_mut().for_each(|w| *w *= 2.0),
            }
        }
        let total: usize = cells_per_dim.iter().product();

        let cell_of = |s: &[f64]| -> usize {
            let mut idx = 0;
            for d in 0..dim {
                let c = (((s[d] - origin[d]) / cell_width[d]).floor() as usize).min(cells_per_dim[d] - 1);
                idx = idx * cells_per_dim[d] + c;
            }
            idx
        };
        let mut keyed: Vec<(usize, usize)> =
            samples.iter().enumerate().map(|(i, s)| (cell_of(s), i)).collect();
        keyed.sort_unstable();
        let mut cell_start = vec![0usize; total + 1];
        for &(c, _) in &keyed {
            cell_start[c + 1] += 1;
        }
        for c in 0..total {
            cell_start[c + 1] += cell_start[c];
        }
        let mut points = Vec::with_capacity(n * dim);
        for &(_, i) in &keyed {
            points.extend_from_slice(&samples[i]);
        }
        let norm = 1.0
            / (n as f64
                * (2.0 * std::f64::consts::PI).powf(dim as f64 / 2.0)
                * bandwidth.iter().product::<f64>());
        Ok(KdeEstimate {
            dim,
            n,
            bandwidth,
            points,
            origin,
            cell_width,
            cells_per_dim,
            cell_start,
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64, PriorError> {
        if y.len() != self.dim {
            return Err(PriorError::DimensionMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        Ok(self.density(y))
    }

    fn density(&self, y: &[f64]) -> f64 {
        let dim = self.dim;
        // neighbouring cell range per dimension, empty if y is far outside
        let mut lo = vec![0usize; dim];
        let mut hi = vec![0usize; dim];
        for d in 0..dim {
            let c = ((y[d] - self.origin[d]) / self.cell_width[d]).floor();
            let cmax = self.cells_per_dim[d] as f64 - 1.0;
            if !(c >= -1.0 && c <= cmax + 1.0) {
                return 0.0;
            }
            lo[d] = (c - 1.0).max(0.0) as usize;
            hi[d] = (c + 1.0).min(cmax) as usize;
        }
        let inv_h: Vec<f64> = self.bandwidth.iter().map(|h| 1.0 / h).collect();
        let r2max = KDE_CUTOFF * KDE_CUTOFF;
        let mut sum = 0.0;
        let mut cur = lo.clone();
        loop {
            let mut flat = 0;
            for (n, c) in self.cells_per_dim.iter().zip(&cur) {
                flat = flat * n + c;
            }
            let (a, b) = (self.cell_start[flat], self.cell_start[flat + 1]);
            for row in self.points[a * dim..b * dim].chunks_exact(dim) {
                let mut r2 = 0.0;
                for d in 0..dim {
                    let u = (y[d] - row[d]) * inv_h[d];
                    r2 += u * u;
                }
                if r2 < r2max {
                    sum += (-0.5 * r2).exp();
                }
            }
            // odometer over the neighbour block
            let mut d = dim;
            loop {
                if d == 0 {
                    return sum * self.norm;
                }
                d -= 1;
                if cur[d] < hi[d] {
                    cur[d] += 1;
                    break;
                }
                cur[d] = lo[d];
            }
        }
    }
}
