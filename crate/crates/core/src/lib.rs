//! Spectral Galerkin simulation of nonlinear ultrasound with fractional
//! power-law absorption.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod media;
pub mod operators;
pub mod physics;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{FaceField, Grid};
pub use media::{Absorption, MediumFields, Phantom};
pub use operators::{build_laplacian, LinOperator};
pub use physics::{AbsorptionKind, Signal, SourceTerm};
pub use solver::{InitialData, Model, SimState, SolverConfig, Trajectory};
pub use spectral::{eigenbasis, SpectralBasis};
