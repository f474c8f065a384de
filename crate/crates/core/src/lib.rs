//! Clustered eigenvalues of the extended Burgers relaxation model.
//!
//! For each spatial mode `k` the reduced eigenvalue problem has `N + 2`
//! eigenvalues: `N` real roots interlaced with the poles `-r_j` and one extra
//! pair, complex for large `k`. This crate computes them, checks them against
//! an independent polynomial root oracle, measures how they converge to the
//! roots of the limit polynomial, evaluates the explicit `k_0` certificate,
//! and recovers `(D, r, b)` from two clusters.

pub mod analysis;
pub mod charpoly;
mod dd;
pub mod error;
pub mod experiments;
pub mod inverse;
pub mod model;
pub mod rootfinder;

pub use analysis::{BoundReport, ConvergenceReport, K0Certificate};
pub use charpoly::{ModeIndex, PolynomialCoeffs};
pub use error::{Error, Result};
pub use inverse::{ClusterObservation, RecoveredModel};
pub use model::{PronyModel, Regime, StretchedExponential};
pub use rootfinder::{ExtraPair, LimitSpectrum, SpectralCluster};
