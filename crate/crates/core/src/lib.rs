//! Assumption-lean, simultaneously valid confidence regions for least-squares
//! coefficients over every submodel of a covariate set.
//!
//! The pipeline is:
//!
//! 1. [`data`] holds observations and enumerates submodel families.
//! 2. [`moments`] reduces a dataset to the Gram matrix and cross-moment vector
//!    (plus the per-observation product vectors the bootstrap resamples).
//! 3. [`ols`] solves submodel normal equations and evaluates the deterministic
//!    error bounds that make every region valid.
//! 4. [`bootstrap`] estimates joint quantiles of the two sup-norm deviation
//!    statistics with Gaussian multipliers.
//! 5. [`regions`] turns a fit plus quantiles into membership tests, volumes and
//!    significance tests.
//! 6. [`simulate`] generates data with known population targets and runs the
//!    Monte Carlo experiments that check coverage empirically.
//!
//! Covariate indices are 1-based whenever they cross an API boundary as text or
//! JSON; [`data::ModelIndex`] stores them 0-based internally.

pub mod bootstrap;
pub mod data;
mod error;
mod linalg;
pub mod moments;
pub mod ols;
pub mod regions;
pub mod simulate;

pub use bootstrap::{BootstrapConfig, Design, QuantilePair, QuantilePolicy, ReplicateStats};
pub use data::{Dataset, IngestOptions, ModelFamily, ModelIndex, ResponseColumn};
pub use error::{Error, Result};
pub use moments::{AugmentedMoments, DeviationPair, MomentPair, Provenance, WMatrix};
pub use ols::{FitResult, SpectralSummary};
pub use regions::{RegionKind, RegionSpec, VolumeReport};
