//! Electrical impedance tomography in the complete electrode model.
//!
//! The crate reconstructs a piecewise-constant conductivity map inside a disk
//! or a cylinder from electrode current/voltage data. One current-to-voltage
//! measurement is augmented with the voltage-to-current responses of all its
//! cyclic rotations, and the resulting least-squares functional is minimized
//! by a gradient projection method whose gradients come from adjoint solves.
//!
//! Module map:
//! - [`mesh`]: simplicial meshes of disks/cylinders and electrode geometry.
//! - [`fem`]: P1 assembly, the sparse factorization and the state/adjoint solves.
//! - [`electrode_model`]: currents, the response matrix, the convex voltage fit
//!   and synthetic measurement generation.
//! - [`objective`]: the rotation scheme and the cost functional.
//! - [`gradient`]: gradients with respect to conductivity and voltages, and
//!   Barzilai-Borwein step sizes.
//! - [`gpm`]: the projected gradient iteration.
//! - [`harness`]: scenarios, the two-stage driver, file formats and the CLI.

pub mod electrode_model;
pub mod error;
pub mod fem;
pub mod gpm;
pub mod gradient;
pub mod harness;
pub mod mesh;
pub mod objective;
pub mod sparse;

pub use error::{Error, Result};
