//! Two-level Markov chain Monte Carlo: a random walk in the active variables
//! against the surrogate, inactive chains conditioned on each thinned active
//! sample, and reconstruction of full-space samples.

pub mod active;
pub mod diagnostics;
pub mod inactive;
pub mod posterior;

pub use active::{mh_active, metropolis, ActiveDensity, ChainConfig, ChainResult, FlatDensity, McmcError};
pub use diagnostics::{autocorrelation, ess, thin_effective, thin_indices};
pub use inactive::{feasible_start, mh_inactive, sample_inactive, InactiveChain, InactiveConfig};
pub use posterior::{reconstruct, PosteriorSampleSet};
