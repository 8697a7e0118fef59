//! Quadratic response surface `g(y)` over the active variables, fitted by
//! least squares on `(W1^T x_i, f(x_i))` pairs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("need at least {needed} samples for a {k}-dimensional quadratic, got {got}")]
    InsufficientSamples { k: usize, needed: usize, got: usize },
    #[error("expected input of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample {0} has a non-finite value")]
    NonFinite(usize),
    #[error("coefficient count {got} does not match 1 + k + k(k+1)/2 = {expected}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("least-squares solve failed: {0}")]
    Solve(String),
}

/// `g(y) = c_0 + sum_i c_i y_i + sum_{i <= j} c_ij y_i y_j`, coefficients in
/// that order with the quadratic terms row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSurface {
    pub k: usize,
    pub coefficients: Vec<f64>,
}

pub fn coefficient_count(k: usize) -> usize {
    1 + k + k * (k + 1) / 2
}

impl QuadraticSurface {
    pub fn new(k: usize, coefficients: Vec<f64>) -> Result<Self, SurrogateError> {
        let expected = coefficient_count(k);
        if coefficients.len() != expected {
            return Err(SurrogateError::CoefficientCount {
                expected,
                got: coefficients.len(),
            });
        }
        Ok(QuadraticSurface { k, coefficients })
    }

    pub fn zeros(k: usize) -> Self {
        QuadraticSurface {
            k,
            coefficients: vec![0.0; coefficient_count(k)],
        }
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64, SurrogateError> {
        if y.len() != self.k {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.k,
                got: y.len(),
            });
        }
        Ok(self.eval_unchecked(y))
    }

    /// Evaluation without the length check, for hot loops.
    pub fn eval_unchecked(&self, y: &[f64]) -> f64 {
        let c = &self.coefficients;
        let k = self.k;
        let mut g = c[0];
        for i in 0..k {
            g += c[1 + i] * y[i];
        }
        let mut idx = 1 + k;
        for i in 0..k {
            let mut row = 0.0;
            for yj in &y[i..k] {
                row += c[idx] * yj;
                idx += 1;
            }
            g += y[i] * row;
        }
        g
    }
}

fn basis_row(t: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.extend_from_slice(t);
    for i in 0..t.len() {
        for j in i..t.len() {
            out.push(t[i] * t[j]);
        }
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub surface: QuadraticSurface,
    /// Coefficient of determination on the training pairs.
    pub r2: f64,
    /// All targets equal; `r2` is then 1 by convention.
    pub constant_target: bool,
    /// The design matrix had numerically dependent columns and the
    /// minimum-norm solution was used.
    pub rank_deficient: bool,
    pub n_samples: usize,
}

/// Least-squares fit through an SVD of the design matrix built on centered
/// and scaled inputs; coefficients are mapped back to raw `y`.
pub fn fit(y: &[Vec<f64>], f: &[f64], k: usize) -> Result<SurrogateFit, SurrogateError> {
    let needed = coefficient_count(k);
    if y.len() != f.len() {
        return Err(SurrogateError::DimensionMismatch {
            expected: y.len(),
            got: f.len(),
        });
    }
    if y.len() < needed {
        return Err(SurrogateError::InsufficientSamples {
            k,
            needed,
            got: y.len(),
        });
    }
    for (i, (yi, fi)) in y.iter().zip(f).enumerate() {
        if yi.len() != k {
            return Err(SurrogateError::DimensionMismatch {
                expected: k,
                got: yi.len(),
            });
        }
        if !fi.is_finite() || yi.iter().any(|v| !v.is_finite()) {
            return Err(SurrogateError::NonFinite(i));
        }
    }
    let m = y.len();
    let mean: Vec<f64> = (0..k).map(|d| y.iter().map(|p| p[d]).sum::<f64>() / m as f64).collect();
    let scale: Vec<f64> = (0..k)
        .map(|d| {
            let var = y.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / m as f64;
            if var > 0.0 { var.sqrt() } else { 1.0 }
        })
        .collect();

    let mut design = DMatrix::zeros(m, needed);
    let mut row = Vec::with_capacity(needed);
    let mut t = vec![0.0; k];
    for (r, p) in y.iter().enumerate() {
        for d in 0..k {
            t[d] = (p[d] - mean[d]) / scale[d];
        }
        basis_row(&t, &mut row);
        for (c, v) in row.iter().enumerate() {
            design[(r, c)] = *v;
        }
    }
    let rhs = DVector::from_column_slice(f);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * 1e-12 * m.max(needed) as f64;
    let rank_deficient = svd.singular_values.iter().any(|s| *s <= cutoff);
    let scaled = svd
        .solve(&rhs, cutoff)
        .map_err(|e| SurrogateError::Solve(e.to_string()))?;

    // expand g(t) with t_i = (y_i - m_i) / s_i into raw monomials
    let mut coeffs = vec![0.0; needed];
    coeffs[0] = scaled[0];
    for i in 0..k {
        let a = scaled[1 + i] / scale[i];
        coeffs[1 + i] += a;
        coeffs[0] -= a * mean[i];
    }
    let mut idx = 1 + k;
    for i in 0..k {
        for j in i..k {
            let b = scaled[idx] / (scale[i] * scale[j]);
            coeffs[idx] += b;
            coeffs[1 + i] -= b * mean[j];
            coeffs[1 + j] -= b * mean[i];
            coeffs[0] += b * mean[i] * mean[j];
            idx += 1;
        }
    }
    let surface = QuadraticSurface { k, coefficients: coeffs };

    let constant_target = f.iter().all(|v| *v == f[0]);
    let r2 = if constant_target {
        1.0
    } else {
        let fbar = f.iter().sum::<f64>() / m as f64;
        let ss_tot: f64 = f.iter().map(|v| (v - fbar).powi(2)).sum();
        let fitted = &design * &scaled;
        let ss_res: f64 = fitted.iter().zip(f).map(|(g, v)| (v - g).powi(2)).sum();
        1.0 - ss_res / ss_tot
    };
    if rank_deficient {
        log::warn!("surrogate design matrix is rank deficient; using the minimum-norm fit");
    }
    Ok(SurrogateFit {
        surface,
        r2,
        constant_target,
        rank_deficient,
        n_samples: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..5 {
                pts.push(vec![-1.0 + 0.4 * i as f64, 0.3 - 0.35 * j as f64]);
            }
        }
        pts
    }

    #[test]
    fn exact_quadratic_is_recovered() {
        let truth = QuadraticSurface::new(2, vec![0.7, -1.2, 0.4, 2.0, -0.6, 1.5]).unwrap();
        let y = grid2();
        let f: Vec<f64> = y.iter().map(|p| truth.eval(p).unwrap()).collect();
        let fit = fit(&y, &f, 2).unwrap();
        assert!((fit.r2 - 1.0).abs() < 1e-10);
        assert!(!fit.rank_deficient && !fit.constant_target);
        for (a, b) in fit.surface.coefficients.iter().zip(&truth.coefficients) {
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
        for (p, v) in y.iter().zip(&f) {
            assert!((fit.surface.eval(p).unwrap() - v).abs() < 1e-8);
        }
    }

    #[test]
    fn squared_norm_at_ones_is_two() {
        let y = grid2();
        let f: Vec<f64> = y.iter().map(|p| p[0] * p[0] + p[1] * p[1]).collect();
        let s = fit(&y, &f, 2).unwrap().surface;
        assert!((s.eval(&[1.0, 1.0]).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn constant_target_is_flagged() {
        let y = grid2();
        let fit = fit(&y, &vec![3.25; y.len()], 2).unwrap();
        assert!(fit.constant_target);
        assert_eq!(fit.r2, 1.0);
        assert!((fit.surface.eval(&[0.2, -0.1]).unwrap() - 3.25).abs() < 1e-10);
    }

    #[test]
    fn trivial_surfaces_and_errors() {
        assert_eq!(QuadraticSurface::zeros(3).eval(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let mut s = QuadraticSurface::zeros(2);
        s.coefficients[0] = 4.5;
        assert_eq!(s.eval(&[9.0, -7.0]).unwrap(), 4.5);
        assert!(s.eval(&[1.0]).is_err());
        assert!(QuadraticSurface::new(2, vec![0.0; 5]).is_err());
        assert!(matches!(
            fit(&grid2()[..5], &[0.0; 5], 2),
            Err(SurrogateError::InsufficientSamples { needed: 6, .. })
        ));
    }

    #[test]
    fn collinear_inputs_use_minimum_norm() {
        let y: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.1, i as f64 * 0.2]).collect();
        let f: Vec<f64> = y.iter().map(|p| 1.0 + p[0]).collect();
        let fit = fit(&y, &f, 2).unwrap();
        assert!(fit.rank_deficient);
        assert!((fit.r2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn r2_is_affine_invariant() {
        let y = grid2();
        let f: Vec<f64> = y.iter().map(|p| (3.0 * p[0]).sin() + p[1].powi(3)).collect();
        let g: Vec<f64> = f.iter().map(|v| 1e4 * v - 17.0).collect();
        let a = fit(&y, &f, 2).unwrap().r2;
        let b = fit(&y, &g, 2).unwrap().r2;
        assert!(a < 0.999 && (a - b).abs() < 1e-10);
    }
}
