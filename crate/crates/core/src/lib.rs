#![cfg_attr(not(test), no_std)]
//! Numerical core: grid densities, bounded-Lipschitz metrics, the layered
//! triangular solver on cubes, its linearization, the torus reduction and
//! smoothing of area-preserving homeomorphisms of the 2-torus.
//!
//! Everything here is allocation-only (`alloc`), sequential and
//! deterministic. File formats and the command line live in the `moser`
//! crate.

extern crate alloc;

pub mod cube;
pub mod error;
pub mod fiber;
pub mod field;
pub mod grid;
pub mod instances;
pub mod linalg;
pub mod linear;
pub mod measure;
pub mod smoothing;
pub mod torus;

pub use error::{Error, ErrorKind, Result};
pub use grid::{Grid, GridDensity, Topology};
