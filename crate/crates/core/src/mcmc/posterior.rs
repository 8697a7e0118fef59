//! Full-space posterior samples `x = W1 y + W2 z` and their statistics.

use super::active::McmcError;
use crate::prior::{in_unit_box, PriorBox};
use crate::subspace::ActiveSubspace;

/// Posterior samples in normalized coordinates with physical summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSampleSet {
    pub samples: Vec<Vec<f64>>,
    pub mean_normalized: Vec<f64>,
    pub mean_physical: Vec<f64>,
    /// Sample standard deviation, zero for a single sample.
    pub std_physical: Vec<f64>,
}

impl PosteriorSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Combines every active sample with each of its inactive samples.
pub fn reconstruct(
    ys: &[Vec<f64>],
    zs: &[Vec<Vec<f64>>],
    sub: &ActiveSubspace,
    prior: &PriorBox,
) -> Result<PosteriorSampleSet, McmcError> {
    if ys.len() != zs.len() {
        return Err(McmcError::DimensionMismatch {
            expected: ys.len(),
            got: zs.len(),
        });
    }
    let mut samples = Vec::new();
    for (y, zy) in ys.iter().zip(zs) {
        for z in zy {
            let x = sub.reconstruct(y, z);
            if !in_unit_box(&x) {
                return Err(McmcError::OutOfBox { index: samples.len() });
            }
            samples.push(x);
        }
    }
    let n = sub.dim();
    let count = samples.len();
    let physical: Vec<Vec<f64>> = samples
        .iter()
        .map(|x| (0..n).map(|i| prior.scale_to_physical(i, x[i])).collect())
        .collect();
    let mean = |rows: &[Vec<f64>], i: usize| rows.iter().map(|r| r[i]).sum::<f64>() / count.max(1) as f64;
    let mean_normalized: Vec<f64> = (0..n).map(|i| mean(&samples, i)).collect();
    let mean_physical: Vec<f64> = (0..n).map(|i| mean(&physical, i)).collect();
    let std_physical = (0..n)
        .map(|i| {
            if count < 2 {
                0.0
            } else {
                let ss: f64 = physical.iter().map(|r| (r[i] - mean_physical[i]).powi(2)).sum();
                (ss / (count - 1) as f64).sqrt()
            }
        })
        .collect();
    Ok(PosteriorSampleSet {
        samples,
        mean_normalized,
        mean_physical,
        std_physical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn full_dimension_maps_directly() {
        let sub = ActiveSubspace::from_basis(&DMatrix::identity(8, 8), 8).unwrap();
        let y = vec![0.5, -0.5, 0.0, 0.25, 0.0, 0.0, 1.0, -1.0];
        let set = reconstruct(std::slice::from_ref(&y), &[vec![vec![]]], &sub, &PriorBox::default()).unwrap();
        assert_eq!(set.samples, vec![y]);
        assert!(set.std_physical.iter().all(|s| *s == 0.0));
        assert!((set.mean_physical[0] - 2.25e6).abs() < 1e-6);
    }

    #[test]
    fn all_combinations_are_assembled() {
        let sub = ActiveSubspace::from_basis(&DMatrix::identity(8, 8), 2).unwrap();
        let ys = vec![vec![0.1, 0.2], vec![-0.1, 0.0]];
        let zs = vec![vec![vec![0.0; 6], vec![0.5; 6]], vec![vec![-0.5; 6], vec![0.1; 6]]];
        let set = reconstruct(&ys, &zs, &sub, &PriorBox::default()).unwrap();
        assert_eq!(set.len(), 4);
        assert!(set.mean_normalized[0].abs() < 1e-15);
        let bad = vec![vec![vec![2.0; 6]], vec![vec![0.0; 6]]];
        assert!(matches!(reconstruct(&ys, &bad, &sub, &PriorBox::default()), Err(McmcError::OutOfBox { index: 0 })));
    }
}
