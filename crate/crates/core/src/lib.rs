//! Recovery of dissipated cavity-field superpositions by optimized
//! conditional measurements on Jaynes-Cummings atoms.
//!
//! The pipeline is: a truncated Fock superposition is damped by a
//! zero-temperature cavity bath ([`dissipation`]), a two-level atom prepared
//! in a chosen superposition crosses the cavity ([`jaynes_cummings`]), and the
//! atom is post-selected in a second chosen superposition ([`measurement`]).
//! The five atomic/interaction parameters are optimized against the
//! distance-over-probability cost ([`metrics`], [`recovery_optimizer`]), and
//! [`experiment`] drives whole runs from a config file.

pub mod dissipation;
pub mod error;
pub mod experiment;
pub mod fock_core;
pub mod jaynes_cummings;
pub mod measurement;
pub mod metrics;
pub mod recovery_optimizer;

pub use error::{Error, Result};
pub use fock_core::{AtomKet, CompositeDensityMatrix, FieldDensityMatrix, FieldKet, C64};
