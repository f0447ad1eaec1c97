//! Single-atom-resolved detection of atoms in a high-finesse fibre microcavity.
//!
//! The crate models the statistics of the effective atom number N_eff, the
//! cavity-reflection and fluorescence signals it produces, photon-counting
//! statistics of the detected light, single-atom detection fidelity, and
//! time-resolved cloud transits. Quantum steady states and trajectories of the
//! driven atom–cavity system are available for checking the semiclassical
//! forms.

pub mod counting;
pub mod error;
pub mod fidelity;
pub mod lindblad;
pub mod neff;
pub mod params;
pub mod quantum;
pub mod registry;
pub mod rng;
pub mod signal;
pub mod special;
pub mod transit;
pub mod zeeman;

pub use error::{Error, Result};
pub use params::PhysicalParams;
