//! Inactive-variable sampling: for a fixed active sample `y`, a random walk
//! in `z` targeting the uniform prior restricted to `W1 y + W2 z` in the box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::active::McmcError;
use super::diagnostics::{ess, thin_effective};
use crate::prior::in_unit_box;
use crate::subspace::ActiveSubspace;

/// Random retries from uniform box points before giving up on a start.
pub const START_RETRIES: usize = 100;
const PROJECTION_ITERS: usize = 2000;
const SHRINK: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InactiveConfig {
    /// Proposal covariance `proposal_scale * I`.
    pub proposal_scale: f64,
    /// Effective samples kept per active sample.
    pub n_z_ess: usize,
    /// First chain length; doubled until the ESS target is met.
    pub initial_steps: usize,
    pub max_steps: usize,
    /// Leading fraction of each chain discarded before diagnostics.
    pub burn_in_fraction: f64,
    pub seed: u64,
}

impl Default for InactiveConfig {
    fn default() -> Self {
        InactiveConfig {
            proposal_scale: 0.4,
            n_z_ess: 10,
            initial_steps: 200,
            max_steps: 1 << 20,
            burn_in_fraction: 0.1,
            seed: 0,
        }
    }
}

impl InactiveConfig {
    pub fn preset_2d(seed: u64) -> Self {
        InactiveConfig {
            proposal_scale: 0.4,
            seed,
            ..Default::default()
        }
    }

    pub fn preset_5d(seed: u64) -> Self {
        InactiveConfig {
            proposal_scale: 0.8,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), McmcError> {
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(McmcError::InvalidConfig("inactive proposal_scale must be positive".into()));
        }
        if self.n_z_ess == 0 || self.initial_steps < 10 || self.max_steps < self.initial_steps {
            return Err(McmcError::InvalidConfig(
                "inactive chain needs n_z_ess >= 1 and 10 <= initial_steps <= max_steps".into(),
            ));
        }
        if !(0.0..0.9).contains(&self.burn_in_fraction) {
            return Err(McmcError::InvalidConfig("burn_in_fraction must lie in [0, 0.9)".into()));
        }
        Ok(())
    }
}

fn clamp_box(x: &mut [f64], bound: f64) {
    for v in x.iter_mut() {
        *v = v.clamp(-bound, bound);
    }
}

/// Alternates projections between the box and the affine set `W1^T x = y`
/// starting from inactive coordinates `z`.
fn project_to_feasible(y: &[f64], sub: &ActiveSubspace, mut z: Vec<f64>) -> Option<Vec<f64>> {
    for _ in 0..PROJECTION_ITERS {
        let mut x = sub.reconstruct(y, &z);
        if in_unit_box(&x) {
            return Some(z);
        }
        clamp_box(&mut x, SHRINK);
        z = sub.project_inactive(&x);
    }
    None
}

/// An inactive start with `W1 y + W2 z` inside the box: first from the
/// clamped active reconstruction, then from random box points.
pub fn feasible_start<R: Rng + ?Sized>(
    y: &[f64],
    sub: &ActiveSubspace,
    rng: &mut R,
) -> Result<Vec<f64>, McmcError> {
    let mut x0 = sub.reconstruct(y, &vec![0.0; sub.inactive_dim()]);
    clamp_box(&mut x0, 1.0);
    if let Some(z) = project_to_feasible(y, sub, sub.project_inactive(&x0)) {
        return Ok(z);
    }
    for _ in 0..START_RETRIES {
        let u: Vec<f64> = (0..sub.dim()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        if let Some(z) = project_to_feasible(y, sub, sub.project_inactive(&u)) {
            return Ok(z);
        }
    }
    Err(McmcError::NoFeasibleStart { y: y.to_vec() })
}

/// Extends a chain by `steps` box-indicator Metropolis steps, appending
/// every state to `out`. Returns the number of accepted proposals.
pub fn extend_inactive_chain<R: Rng + ?Sized>(
    y: &[f64],
    sub: &ActiveSubspace,
    z: &mut [f64],
    proposal_scale: f64,
    steps: usize,
    rng: &mut R,
    out: &mut Vec<f64>,
) -> usize {
    let sd = proposal_scale.sqrt();
    let mut accepted = 0;
    let mut proposal = vec![0.0; z.len()];
    for _ in 0..steps {
        for (p, c) in proposal.iter_mut().zip(z.iter()) {
            let xi: f64 = rng.sample(StandardNormal);
            *p = c + sd * xi;
        }
        if in_unit_box(&sub.reconstruct(y, &proposal)) {
            z.copy_from_slice(&proposal);
            accepted += 1;
        }
        out.extend_from_slice(z);
    }
    accepted
}

/// Thinned inactive samples for one active sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InactiveChain {
    pub z: Vec<Vec<f64>>,
    pub steps: usize,
    pub acceptance_rate: f64,
    pub min_ess: f64,
    /// Whether `min_ess` reached `n_z_ess` before `max_steps`.
    pub converged: bool,
}

/// Runs an inactive chain, doubling its length until every component has
/// `n_z_ess` effective samples, then keeps `n_z_ess` equally spaced states.
pub fn mh_inactive<R: Rng + ?Sized>(
    y: &[f64],
    sub: &ActiveSubspace,
    cfg: &InactiveConfig,
    rng: &mut R,
) -> Result<InactiveChain, McmcError> {
    cfg.validate()?;
    if y.len() != sub.k {
        return Err(McmcError::DimensionMismatch {
            expected: sub.k,
            got: y.len(),
        });
    }
    let m = sub.inactive_dim();
    if m == 0 {
        if !in_unit_box(&sub.reconstruct(y, &[])) {
            return Err(McmcError::NoFeasibleStart { y: y.to_vec() });
        }
        return Ok(InactiveChain {
            z: vec![Vec::new()],
            steps: 0,
            acceptance_rate: 1.0,
            min_ess: 1.0,
            converged: true,
        });
    }
    let mut z = feasible_start(y, sub, rng)?;
    let mut states = Vec::new();
    let mut accepted = extend_inactive_chain(y, sub, &mut z, cfg.proposal_scale, cfg.initial_steps, rng, &mut states);
    loop {
        let total = states.len() / m;
        let burn = (cfg.burn_in_fraction * total as f64) as usize;
        let kept = &states[burn * m..];
        let min_ess = (0..m)
            .map(|d| ess(&kept.iter().skip(d).step_by(m).copied().collect::<Vec<_>>(), None))
            .fold(f64::INFINITY, f64::min);
        let converged = min_ess >= cfg.n_z_ess as f64;
        if converged || total >= cfg.max_steps {
            if !converged {
                log::warn!(
                    "inactive chain at y = {y:?} reached {total} steps with min ESS {min_ess:.1} < {}",
                    cfg.n_z_ess
                );
            }
            let rows: Vec<&[f64]> = kept.chunks(m).collect();
            let z = thin_effective(&rows, cfg.n_z_ess)
                .into_iter()
                .map(<[f64]>::to_vec)
                .collect();
            return Ok(InactiveChain {
                z,
                steps: total,
                acceptance_rate: accepted as f64 / total as f64,
                min_ess,
                converged,
            });
        }
        let more = total.min(cfg.max_steps - total);
        accepted += extend_inactive_chain(y, sub, &mut z, cfg.proposal_scale, more, rng, &mut states);
    }
}

/// Inactive chains for every active sample in parallel; chain `i` draws from
/// stream `i` of a ChaCha generator seeded with `cfg.seed`.
pub fn sample_inactive(
    ys: &[Vec<f64>],
    sub: &ActiveSubspace,
    cfg: &InactiveConfig,
) -> Result<Vec<InactiveChain>, McmcError> {
    ys.par_iter()
        .enumerate()
        .map(|(i, y)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            mh_inactive(y, sub, cfg, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn identity_split(k: usize) -> ActiveSubspace {
        ActiveSubspace::from_basis(&DMatrix::identity(8, 8), k).unwrap()
    }

    #[test]
    fn start_is_feasible_for_rotated_basis() {
        let w = DMatrix::from_fn(8, 8, |i, j| ((i * 8 + j) as f64 * 0.731).sin());
        let q = w.qr().q();
        let sub = ActiveSubspace::from_basis(&q, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..8).map(|i| 0.9 * (i as f64 * 1.3).cos()).collect();
        let y = sub.project_active(&x);
        let z = feasible_start(&y, &sub, &mut rng).unwrap();
        assert!(in_unit_box(&sub.reconstruct(&y, &z)));
    }

    #[test]
    fn infeasible_active_value_is_reported() {
        let sub = identity_split(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            feasible_start(&[1.5, 0.0], &sub, &mut rng),
            Err(McmcError::NoFeasibleStart { .. })
        ));
    }

    #[test]
    fn huge_steps_still_stay_in_box() {
        let sub = identity_split(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut z = vec![0.0; 6];
        let mut out = Vec::new();
        let acc = extend_inactive_chain(&[0.3, -0.2], &sub, &mut z, 100.0, 2000, &mut rng, &mut out);
        assert!(acc < 20);
        for s in out.chunks(6) {
            assert!(in_unit_box(&sub.reconstruct(&[0.3, -0.2], s)));
        }
    }

    #[test]
    fn full_dimension_has_no_inactive_chain() {
        let sub = identity_split(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = mh_inactive(&[0.1; 8], &sub, &InactiveConfig::default(), &mut rng).unwrap();
        assert_eq!(c.z, vec![Vec::<f64>::new()]);
    }

    #[test]
    fn adaptive_chain_reaches_target() {
        let sub = identity_split(2);
        let cfg = InactiveConfig::default();
        let chains = sample_inactive(&[vec![0.0, 0.0], vec![0.5, -0.5]], &sub, &cfg).unwrap();
        for c in &chains {
            assert!(c.converged && c.min_ess >= 10.0);
            assert_eq!(c.z.len(), 10);
        }
        assert_eq!(chains, sample_inactive(&[vec![0.0, 0.0], vec![0.5, -0.5]], &sub, &cfg).unwrap());
    }
}
