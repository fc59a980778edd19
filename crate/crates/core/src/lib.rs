//! Small-signal stability toolkit for structure-preserving swing models.

pub mod certificate;
pub mod data;
pub mod dynamics;
pub mod eigen;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod integrator;
pub mod linearization;
pub mod netmodel;

pub use error::{Error, Result};
pub use netmodel::{build_admittance, load_case, AdmittanceMatrix, BusId, NetworkCase};
