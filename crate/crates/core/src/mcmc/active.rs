//! Random-walk Metropolis-Hastings, used in the active variables against
//! `exp(-g(y)) rho(y)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::diagnostics::{autocorrelation, ess};
use crate::prior::KdeEstimate;
use crate::surrogate::QuadraticSurface;

/// Autocorrelation lags kept in a [`ChainResult`] for plotting.
pub const STORED_LAGS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McmcError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no in-box starting point for the inactive chain at y = {y:?}")]
    NoFeasibleStart { y: Vec<f64> },
    #[error("reconstructed sample {index} lies outside the prior box")]
    OutOfBox { index: usize },
}

/// Chain length, burn-in and Gaussian proposal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub n_steps: usize,
    pub burn_in: usize,
    /// Proposal covariance `proposal_scale * I` unless `proposal_cov` is set.
    pub proposal_scale: f64,
    /// Full row-major proposal covariance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_cov: Option<Vec<f64>>,
    pub seed: u64,
}

impl ChainConfig {
    /// 2D active chain: `10^6` steps, `10^5` burn-in, covariance `0.02 I`.
    pub fn preset_2d(seed: u64) -> Self {
        ChainConfig {
            n_steps: 1_000_000,
            burn_in: 100_000,
            proposal_scale: 0.02,
            proposal_cov: None,
            seed,
        }
    }

    /// 5D active chain: `10^7` steps, `10^6` burn-in, covariance `0.0017 I`.
    pub fn preset_5d(seed: u64) -> Self {
        ChainConfig {
            n_steps: 10_000_000,
            burn_in: 1_000_000,
            proposal_scale: 0.0017,
            proposal_cov: None,
            seed,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), McmcError> {
        if self.n_steps == 0 || self.burn_in >= self.n_steps {
            return Err(McmcError::InvalidConfig(format!(
                "burn_in {} must be below n_steps {}",
                self.burn_in, self.n_steps
            )));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(McmcError::InvalidConfig("proposal_scale must be positive".into()));
        }
        self.proposal_factor(dim).map(|_| ())
    }

    /// Lower Cholesky factor of the proposal covariance.
    pub fn proposal_factor(&self, dim: usize) -> Result<DMatrix<f64>, McmcError> {
        match &self.proposal_cov {
            None => Ok(DMatrix::identity(dim, dim) * self.proposal_scale.sqrt()),
            Some(cov) => {
                if cov.len() != dim * dim {
                    return Err(McmcError::DimensionMismatch {
                        expected: dim * dim,
                        got: cov.len(),
                    });
                }
                let m = DMatrix::from_row_slice(dim, dim, cov);
                if (&m - m.transpose()).amax() > 1e-12 * m.amax() {
                    return Err(McmcError::InvalidConfig("proposal_cov must be symmetric".into()));
                }
                Cholesky::new(m)
                    .map(|c| c.l())
                    .ok_or_else(|| McmcError::InvalidConfig("proposal_cov must be positive definite".into()))
            }
        }
    }
}

/// Post-burn-in samples with acceptance and autocorrelation diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub dim: usize,
    /// Retained states, row-major `len x dim`.
    pub samples: Vec<f64>,
    /// Accepted proposals over all steps, burn-in included.
    pub acceptance_rate: f64,
    /// Leading autocorrelation lags per component.
    pub autocorrelation: Vec<Vec<f64>>,
    pub ess: Vec<f64>,
    pub min_ess: f64,
}

impl ChainResult {
    pub fn len(&self) -> usize {
        self.samples.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, d: usize) -> Vec<f64> {
        self.samples.iter().skip(d).step_by(self.dim).copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.samples.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Computes per-component diagnostics for retained samples.
    pub fn from_samples(dim: usize, samples: Vec<f64>, acceptance_rate: f64) -> Self {
        let mut out = ChainResult {
            dim,
            samples,
            acceptance_rate,
            autocorrelation: Vec::new(),
            ess: Vec::new(),
            min_ess: 0.0,
        };
        for d in 0..dim {
            let series = out.component(d);
            out.ess.push(ess(&series, None));
            let lags = STORED_LAGS.min(series.len().saturating_sub(1));
            out.autocorrelation.push(autocorrelation(&series, lags).unwrap_or_else(|| {
                let mut r = vec![0.0; lags + 1];
                r[0] = 1.0;
                r
            }));
        }
        out.min_ess = out.ess.iter().copied().fold(f64::INFINITY, f64::min);
        if dim == 0 {
            out.min_ess = 0.0;
        }
        out
    }
}

/// Metropolis-Hastings with a Gaussian random-walk proposal on an
/// unnormalized log target. A proposal with log target `-inf` is rejected;
/// a current state with log target `-inf` accepts any proposal of positive
/// density.
pub fn metropolis<T>(log_target: T, start: &[f64], cfg: &ChainConfig) -> Result<ChainResult, McmcError>
where
    T: Fn(&[f64]) -> f64,
{
    let dim = start.len();
    cfg.validate(dim)?;
    let l = cfg.proposal_factor(dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = start.to_vec();
    let mut current_lp = log_target(&current);
    let mut proposal = vec![0.0; dim];
    let mut xi = DVector::<f64>::zeros(dim);
    let mut accepted = 0usize;
    let mut samples = Vec::with_capacity((cfg.n_steps - cfg.burn_in) * dim);
    for step in 0..cfg.n_steps {
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..dim {
            let mut s = current[i];
            for j in 0..=i {
                s += l[(i, j)] * xi[j];
            }
            proposal[i] = s;
        }
        let u: f64 = rng.random();
        let lp = log_target(&proposal);
        let accept = if lp == f64::NEG_INFINITY || lp.is_nan() {
            false
        } else if current_lp == f64::NEG_INFINITY {
            true
        } else {
            u.ln() < lp - current_lp
        };
        if accept {
            current.copy_from_slice(&proposal);
            current_lp = lp;
            accepted += 1;
        }
        if step >= cfg.burn_in {
            samples.extend_from_slice(&current);
        }
    }
    Ok(ChainResult::from_samples(
        dim,
        samples,
        accepted as f64 / cfg.n_steps as f64,
    ))
}

/// The marginal prior density of the active variables.
pub trait ActiveDensity: Sync {
    fn dim(&self) -> usize;
    fn density(&self, y: &[f64]) -> f64;
}

impl ActiveDensity for KdeEstimate {
    fn dim(&self) -> usize {
        KdeEstimate::dim(self)
    }
    fn density(&self, y: &[f64]) -> f64 {
        self.eval(y).unwrap_or(0.0)
    }
}

/// Unit density everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatDensity {
    pub dim: usize,
}

impl ActiveDensity for FlatDensity {
    fn dim(&self) -> usize {
        self.dim
    }
    fn density(&self, _: &[f64]) -> f64 {
        1.0
    }
}

/// Samples `exp(-g(y)) rho(y)` starting at `start`.
pub fn mh_active<D: ActiveDensity + ?Sized>(
    surface: &QuadraticSurface,
    density: &D,
    cfg: &ChainConfig,
    start: &[f64],
) -> Result<ChainResult, McmcError> {
    for got in [density.dim(), start.len()] {
        if got != surface.k {
            return Err(McmcError::DimensionMismatch {
                expected: surface.k,
                got,
            });
        }
    }
    metropolis(
        |y| {
            let rho = density.density(y);
            if rho > 0.0 {
                rho.ln() - surface.eval_unchecked(y)
            } else {
                f64::NEG_INFINITY
            }
        },
        start,
        cfg,
    )
}
