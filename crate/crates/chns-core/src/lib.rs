//! Two-phase flow laboratory: Cahn-Hilliard Navier-Stokes simulation with a
//! double-obstacle free energy, adjoint-based optimal control, adaptive mesh
//! refinement and POD reduced-order modeling on nested meshes.

pub mod adapt;
pub mod assemble;
pub mod ch;
pub mod chns;
pub mod control;
pub mod error;
pub mod field;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod ns;
pub mod pod;
pub mod potential;
pub mod quad;
pub mod rom;
pub mod scenario;
pub mod space;

pub use error::{ChnsError, Result};
