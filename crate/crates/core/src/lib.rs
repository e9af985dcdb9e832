//! Simulation of polarization-qubit transfer from a trapped ion to a cavity
//! photon: level-scheme model, Lindblad dynamics, photon emission and
//! detection, and maximum-likelihood tomography.

pub mod dynamics;
pub mod emission;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod system;
pub mod tomography;

pub use error::{Error, Result};
