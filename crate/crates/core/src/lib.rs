//! Simulation and analysis toolkit for quantum-dot entangled photon pair
//! sources: cascade time-tag generation, streaming coincidence correlation,
//! time-resolved two-photon tomography, negativity metrics and curve fits.

pub mod analysis;
pub mod correlator;
pub mod error;
pub mod io_util;
pub mod quantum;
pub mod sim;
pub mod timetag;
pub mod tomography;

pub use error::{Error, Result};
