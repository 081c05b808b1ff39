//! Simulation and inverse reconstruction of wavepackets in a parabolic
//! optical lattice.
//!
//! A particle in `H = -∂²/(2M*) - V0 cos(2πx) + x²/2` (distances in lattice
//! periods, energies in units of the parabola curvature) has a ladder of
//! site-localized states with energies close to `n²/2`. A packet built from
//! them beats at the non-degenerate Bohr frequencies `m(n - m/2)`, so the
//! Fourier spectrum of the zero-momentum probability encodes every neighbour
//! coherence `c_n c*_{n-1}` at its own frequency. This crate builds that
//! basis, evolves packets, records the signal and inverts it.
//!
//! Modules follow the pipeline order:
//!
//! * [`lattice`]: units, grid, potential and grid wavefunctions.
//! * [`eigen`]: banded eigensolver, state classification, parity doublets
//!   and the site basis.
//! * [`momentum`]: the momentum representation.
//! * [`dynamics`]: packet synthesis, the two propagators and the recorded
//!   observables.
//! * [`spectral`]: frequency estimation, coherence extraction and packet
//!   reconstruction.
//! * [`harness`]: run configuration, artifacts and the command-line stages.

pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod harness;
pub mod lattice;
pub mod momentum;
pub mod spectral;

pub use error::{Error, Result};
