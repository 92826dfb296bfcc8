//! Channel-estimation workbench for flexible intelligent metasurface (FIM)
//! arrays.
//!
//! The crate simulates the deformation-dependent mmWave channel of a
//! surface whose elements displace perpendicular to the array plane,
//! implements four model-based estimators (nearest-neighbor, 1D linear,
//! KNN local-linear, kernel ridge regression) plus a sparse parametric
//! estimator (OMP over a stacked angular dictionary), and a hierarchical
//! Fourier neural operator trained with exact hand-derived gradients.
//! A Monte Carlo harness benchmarks everything under seeded, reproducible
//! protocols and writes CSV reports.

pub mod bench;
pub mod channel;
pub mod error;
pub mod fno;
pub mod geometry;
pub mod interp;
pub mod parallel;
pub mod sparse;

pub use error::{FimError, Result};
