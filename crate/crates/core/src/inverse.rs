//! Bayesian data model: observations, diagonal Gaussian noise, the data
//! misfit `f(x) = 1/2 |d - G(x)|^2_Gamma` and its finite-difference gradient
//! `grad f = J^T Gamma^-1 (G(x) - d)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::{PriorBox, PriorError};
use crate::triax::{QoIResponse, TriaxError, TriaxialTest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error(transparent)]
    Triax(#[from] TriaxError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InverseError {
    #[error("misfit evaluation failed at x = {x:?}: {source}")]
    MisfitEvaluation { x: Vec<f64>, source: ForwardError },
    #[error("forward evaluation failed at stencil point {index} (x = {x:?}): {source}")]
    Stencil {
        index: usize,
        x: Vec<f64>,
        source: ForwardError,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("noise standard deviations must be strictly positive")]
    NonPositiveNoise,
}

/// A quantity-of-interest map evaluated on normalized parameters.
pub trait ForwardModel: Sync {
    fn n_params(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn evaluate(&self, x_norm: &[f64]) -> Result<Vec<f64>, ForwardError>;
}

/// Triaxial test composed with the prior's affine parameter map.
#[derive(Debug, Clone)]
pub struct TriaxForward {
    pub test: TriaxialTest,
    pub prior: PriorBox,
    pub stations: Vec<f64>,
}

impl TriaxForward {
    pub fn response(&self, x_norm: &[f64]) -> Result<QoIResponse, ForwardError> {
        let pp = self.prior.to_physical(x_norm)?;
        Ok(self.test.qoi(&pp, &self.stations)?)
    }
}

impl ForwardModel for TriaxForward {
    fn n_params(&self) -> usize {
        self.prior.dim()
    }

    fn n_outputs(&self) -> usize {
        2 * self.stations.len()
    }

    fn evaluate(&self, x_norm: &[f64]) -> Result<Vec<f64>, ForwardError> {
        Ok(self.response(x_norm)?.to_vector())
    }
}

/// Observed volumetric strains and shear stresses at the axial strain stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub stations: Vec<f64>,
    pub vol_strain: Vec<f64>,
    pub shear_stress: Vec<f64>,
}

impl Dataset {
    pub fn from_vector(stations: Vec<f64>, d: &[f64]) -> Result<Self, InverseError> {
        let n = stations.len();
        if d.len() != 2 * n {
            return Err(InverseError::DimensionMismatch {
                expected: 2 * n,
                got: d.len(),
            });
        }
        Ok(Dataset {
            stations,
            vol_strain: d[..n].to_vec(),
            shear_stress: d[n..].to_vec(),
        })
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.vol_strain.clone();
        v.extend_from_slice(&self.shear_stress);
        v
    }

    pub fn len(&self) -> usize {
        self.vol_strain.len() + self.shear_stress.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Relative noise level and per-block floors used to build [`NoiseModel`]s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSettings {
    pub relative: f64,
    pub floor_vol_strain: f64,
    pub floor_shear_stress: f64,
    /// Same standard deviation for every observation, overriding the
    /// relative rule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub absolute: Option<f64>,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        NoiseSettings {
            relative: 0.02,
            floor_vol_strain: 1e-5,
            floor_shear_stress: 1e3,
            absolute: None,
        }
    }
}

/// Per-observation standard deviations of the diagonal noise covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: Vec<f64>,
}

impl NoiseModel {
    pub fn new(sigma: Vec<f64>) -> Result<Self, InverseError> {
        if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(InverseError::NonPositiveNoise);
        }
        Ok(NoiseModel { sigma })
    }

    /// `sigma_i = max(relative |v_i|, floor)` per block of `reference`.
    pub fn relative_to(reference: &Dataset, settings: &NoiseSettings) -> Result<Self, InverseError> {
        if let Some(a) = settings.absolute {
            return Self::new(vec![a; reference.len()]);
        }
        let eps = reference
            .vol_strain
            .iter()
            .map(|v| (settings.relative * v.abs()).max(settings.floor_vol_strain));
        let sig = reference
            .shear_stress
            .iter()
            .map(|v| (settings.relative * v.abs()).max(settings.floor_shear_stress));
        Self::new(eps.chain(sig).collect())
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, InverseError> {
        Self::new(self.sigma.iter().map(|s| s * factor).collect())
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

/// `1/2 sum ((d_i - g_i) / sigma_i)^2` for already evaluated outputs.
pub fn misfit_from_outputs(d: &[f64], g: &[f64], noise: &NoiseModel) -> Result<f64, InverseError> {
    if d.len() != g.len() || d.len() != noise.len() {
        return Err(InverseError::DimensionMismatch {
            expected: d.len(),
            got: g.len().min(noise.len()),
        });
    }
    Ok(0.5
        * d.iter()
            .zip(g)
            .zip(&noise.sigma)
            .map(|((d, g), s)| ((d - g) / s).powi(2))
            .sum::<f64>())
}

pub fn misfit<F: ForwardModel + ?Sized>(
    x_norm: &[f64],
    dataset: &Dataset,
    noise: &NoiseModel,
    forward: &F,
) -> Result<f64, InverseError> {
    let g = forward
        .evaluate(x_norm)
        .map_err(|source| InverseError::MisfitEvaluation {
            x: x_norm.to_vec(),
            source,
        })?;
    misfit_from_outputs(&dataset.to_vector(), &g, noise)
}

/// Central-difference Jacobian of a forward model.
#[derive(Debug, Clone, PartialEq)]
pub struct FdJacobian {
    /// Row-major `n_outputs x n_params`.
    pub values: Vec<f64>,
    pub n_outputs: usize,
    pub n_params: usize,
    /// `G(x)` when the center point was requested.
    pub center: Option<Vec<f64>>,
    /// Coordinates whose stencil was clamped to the box faces.
    pub clamped: Vec<bool>,
    pub evaluations: usize,
}

impl FdJacobian {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_params + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_outputs).map(|r| self.get(r, col)).collect()
    }
}

/// Column `j` is `(G(x+) - G(x-)) / (x+_j - x-_j)` with `x+- = x +- h e_j`
/// clamped to `[-1, 1]`. Uses `2 n` evaluations, plus one at `x` when
/// `with_center` is set; the stencil runs as a parallel map.
pub fn fd_jacobian<F: ForwardModel + ?Sized>(
    x_norm: &[f64],
    h: f64,
    forward: &F,
    with_center: bool,
) -> Result<FdJacobian, InverseError> {
    let n = forward.n_params();
    if x_norm.len() != n {
        return Err(InverseError::DimensionMismatch {
            expected: n,
            got: x_norm.len(),
        });
    }
    let mut stencil: Vec<Vec<f64>> = Vec::with_capacity(2 * n + 1);
    let mut widths = Vec::with_capacity(n);
    let mut clamped = Vec::with_capacity(n);
    for j in 0..n {
        let plus = (x_norm[j] + h).min(1.0);
        let minus = (x_norm[j] - h).max(-1.0);
        clamped.push(plus != x_norm[j] + h || minus != x_norm[j] - h);
        widths.push(plus - minus);
        let mut xp = x_norm.to_vec();
        xp[j] = plus;
        let mut xm = x_norm.to_vec();
        xm[j] = minus;
        stencil.push(xp);
        stencil.push(xm);
    }
    if with_center {
        stencil.push(x_norm.to_vec());
    }
    let outputs: Vec<Vec<f64>> = stencil
        .par_iter()
        .enumerate()
        .map(|(index, x)| {
            forward.evaluate(x).map_err(|source| InverseError::Stencil {
                index,
                x: x.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;

    let m = forward.n_outputs();
    let mut values = vec![0.0; m * n];
    for j in 0..n {
        let gp = &outputs[2 * j];
        let gm = &outputs[2 * j + 1];
        for r in 0..m {
            values[r * n + j] = (gp[r] - gm[r]) / widths[j];
        }
    }
    let evaluations = outputs.len();
    let center = if with_center { outputs.into_iter().last() } else { None };
    Ok(FdJacobian {
        values,
        n_outputs: m,
        n_params: n,
        center,
        clamped,
        evaluations,
    })
}

/// One gradient sample of the misfit in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisfitGradientSample {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    /// Whether any finite-difference stencil was clamped at a box face.
    pub clamped: bool,
}

pub fn misfit_gradient<F: ForwardModel + ?Sized>(
    x_norm: &[f64],
    dataset: &Dataset,
    noise: &NoiseModel,
    forward: &F,
    h: f64,
) -> Result<MisfitGradientSample, InverseError> {
    let jac = fd_jacobian(x_norm, h, forward, true)?;
    let g = jac.center.as_deref().expect("center requested");
    let d = dataset.to_vector();
    let f = misfit_from_outputs(&d, g, noise)?;
    let weighted: Vec<f64> = g
        .iter()
        .zip(&d)
        .zip(&noise.sigma)
        .map(|((g, d), s)| (g - d) / (s * s))
        .collect();
    let grad = (0..jac.n_params)
        .map(|j| (0..jac.n_outputs).map(|r| jac.get(r, j) * weighted[r]).sum())
        .collect();
    Ok(MisfitGradientSample {
        x: x_norm.to_vec(),
        f,
        grad,
        clamped: jac.clamped.iter().any(|c| *c),
    })
}

/// Cheap analytic forward models with known structure.
pub mod synthetic {
    use super::{ForwardError, ForwardModel};

    /// `G(x) = A x` with `A` row-major `m x n`.
    #[derive(Debug, Clone)]
    pub struct LinearForward {
        pub a: Vec<f64>,
        pub m: usize,
        pub n: usize,
    }

    impl ForwardModel for LinearForward {
        fn n_params(&self) -> usize {
            self.n
        }
        fn n_outputs(&self) -> usize {
            self.m
        }
        fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
            Ok((0..self.m)
                .map(|r| (0..self.n).map(|c| self.a[r * self.n + c] * x[c]).sum())
                .collect())
        }
    }

    /// A forward map whose first output block depends only on `w1^T x` and
    /// whose second block is one tenth of the same profile in `w2^T x`.
    ///
    /// With data taken at the origin and unit noise, the misfit is
    /// `h(w1^T x) + 0.01 h(w2^T x)` with `h(t) = 1/2 sum_i (phi_i(t) - phi_i(0))^2`
    /// and `phi_i(t) = t + kappa_i t^2`.
    #[derive(Debug, Clone)]
    pub struct PlantedRidge {
        pub w1: Vec<f64>,
        pub w2: Vec<f64>,
        pub curvature: Vec<f64>,
    }

    impl PlantedRidge {
        /// Two fixed orthonormal directions in `R^8` and 23 profile terms.
        pub fn standard() -> Self {
            Self::with_outputs(23)
        }

        /// As [`PlantedRidge::standard`] with `count` terms per block.
        pub fn with_outputs(count: usize) -> Self {
            let w1 = normalize(&[0.6, 0.35, -0.2, 0.45, 0.1, -0.3, 0.4, 0.12]);
            let raw2 = [-0.25, 0.5, 0.4, 0.05, -0.45, 0.2, 0.15, -0.5];
            let dot: f64 = raw2.iter().zip(&w1).map(|(a, b)| a * b).sum();
            let w2 = normalize(&raw2.iter().zip(&w1).map(|(a, b)| a - dot * b).collect::<Vec<_>>());
            let curvature = (0..count)
                .map(|i| 0.02 + 0.08 * i as f64 / (count.max(2) - 1) as f64)
                .collect();
            PlantedRidge { w1, w2, curvature }
        }

        pub fn ridge_value(&self, t: f64) -> f64 {
            0.5 * self.curvature.iter().map(|k| (t + k * t * t).powi(2)).sum::<f64>()
        }
    }

    pub(crate) fn normalize(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter().map(|a| a / n).collect()
    }

    impl ForwardModel for PlantedRidge {
        fn n_params(&self) -> usize {
            self.w1.len()
        }
        fn n_outputs(&self) -> usize {
            2 * self.curvature.len()
        }
        fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
            let u: f64 = self.w1.iter().zip(x).map(|(a, b)| a * b).sum();
            let v: f64 = self.w2.iter().zip(x).map(|(a, b)| a * b).sum();
            let first = self.curvature.iter().map(|k| u + k * u * u);
            let second = self.curvature.iter().map(|k| 0.1 * (v + k * v * v));
            Ok(first.chain(second).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::synthetic::*;
    use super::*;

    struct Constant(usize, usize);
    impl ForwardModel for Constant {
        fn n_params(&self) -> usize {
            self.0
        }
        fn n_outputs(&self) -> usize {
            self.1
        }
        fn evaluate(&self, _: &[f64]) -> Result<Vec<f64>, ForwardError> {
            Ok(vec![3.5; self.1])
        }
    }

    struct Identity1;
    impl ForwardModel for Identity1 {
        fn n_params(&self) -> usize {
            1
        }
        fn n_outputs(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
            Ok(vec![x[0]])
        }
    }

    struct Failing;
    impl ForwardModel for Failing {
        fn n_params(&self) -> usize {
            2
        }
        fn n_outputs(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
            if x[1] > 0.1 {
                Err(ForwardError::Other("boom".into()))
            } else {
                Ok(vec![x[0]])
            }
        }
    }

    fn ds(d: Vec<f64>) -> Dataset {
        let n = d.len() / 2;
        Dataset::from_vector((1..=n).map(|i| -(i as f64)).collect(), &d).unwrap()
    }

    #[test]
    fn single_observation_misfit() {
        let noise = NoiseModel::new(vec![0.02]).unwrap();
        let f = misfit_from_outputs(&[1.0], &[0.98], &noise).unwrap();
        assert!((f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exact_data_has_zero_misfit_and_gradient() {
        let fwd = PlantedRidge::standard();
        let x = [0.1, -0.2, 0.3, 0.0, 0.5, -0.4, 0.2, 0.1];
        let data = ds(fwd.evaluate(&x).unwrap());
        let noise = NoiseModel::new(vec![0.5; 46]).unwrap();
        assert_eq!(misfit(&x, &data, &noise, &fwd).unwrap(), 0.0);
        let s = misfit_gradient(&x, &data, &noise, &fwd, 1e-4).unwrap();
        assert_eq!(s.f, 0.0);
        assert!(s.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn doubling_noise_quarters_misfit() {
        let fwd = PlantedRidge::standard();
        let data = ds(vec![0.3; 46]);
        let noise = NoiseModel::new((0..46).map(|i| 0.1 + 0.01 * i as f64).collect()).unwrap();
        let x = [0.2; 8];
        let f1 = misfit(&x, &data, &noise, &fwd).unwrap();
        let f2 = misfit(&x, &data, &noise.scaled(2.0).unwrap(), &fwd).unwrap();
        assert!((f1 - 4.0 * f2).abs() <= 1e-12 * f1);
    }

    #[test]
    fn linear_forward_jacobian_is_exact() {
        let a: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let fwd = LinearForward { a: a.clone(), m: 3, n: 8 };
        let jac = fd_jacobian(&[0.1, 0.2, -0.3, 0.4, -0.5, 0.6, 0.0, -0.9], 1e-4, &fwd, false).unwrap();
        assert_eq!(jac.evaluations, 16);
        for (got, want) in jac.values.iter().zip(&a) {
            assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0));
        }
        let jac = fd_jacobian(&[0.0; 8], 1e-4, &fwd, true).unwrap();
        assert_eq!(jac.evaluations, 17);
    }

    #[test]
    fn constant_forward_has_zero_jacobian() {
        let jac = fd_jacobian(&[0.0; 4], 1e-4, &Constant(4, 5), false).unwrap();
        assert!(jac.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn boundary_stencil_is_clamped_and_flagged() {
        let a: Vec<f64> = (0..16).map(|i| i as f64 - 7.5).collect();
        let fwd = LinearForward { a: a.clone(), m: 2, n: 8 };
        let mut x = [0.0; 8];
        x[2] = 1.0;
        x[5] = -0.99995;
        let jac = fd_jacobian(&x, 1e-4, &fwd, false).unwrap();
        assert!(jac.clamped[2] && jac.clamped[5] && !jac.clamped[0]);
        for (got, want) in jac.values.iter().zip(&a) {
            assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0));
        }
    }

    #[test]
    fn one_dimensional_gradient_is_x() {
        let data = Dataset::from_vector(vec![-1.0], &[0.0, 0.0]).unwrap();
        // two observations, the second identically zero
        struct Two;
        impl ForwardModel for Two {
            fn n_params(&self) -> usize {
                1
            }
            fn n_outputs(&self) -> usize {
                2
            }
            fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
                Ok(vec![x[0], 0.0])
            }
        }
        let noise = NoiseModel::new(vec![1.0, 1.0]).unwrap();
        let s = misfit_gradient(&[0.37], &data, &noise, &Two, 1e-4).unwrap();
        assert!((s.grad[0] - 0.37).abs() < 1e-10);
        assert!((s.f - 0.5 * 0.37 * 0.37).abs() < 1e-14);
        let _ = Identity1;
    }

    #[test]
    fn stencil_failure_identifies_the_point() {
        let err = fd_jacobian(&[0.0, 0.1], 0.05, &Failing, false).unwrap_err();
        match err {
            InverseError::Stencil { index, x, .. } => {
                assert_eq!(index, 2);
                assert!(x[1] > 0.1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let data = Dataset::from_vector(vec![-1.0], &[0.0, 0.0]).unwrap();
        let noise = NoiseModel::new(vec![1.0]).unwrap();
        assert!(matches!(
            misfit(&[0.0, 0.5], &data, &noise, &Failing),
            Err(InverseError::MisfitEvaluation { .. })
        ));
    }

    #[test]
    fn relative_noise_applies_floors() {
        let d = Dataset {
            stations: vec![-0.01, -0.02],
            vol_strain: vec![0.0, -0.01],
            shear_stress: vec![10.0, 4e6],
        };
        let n = NoiseModel::relative_to(&d, &NoiseSettings::default()).unwrap();
        assert_eq!(n.sigma, vec![1e-5, 2e-4, 1e3, 8e4]);
    }
}
