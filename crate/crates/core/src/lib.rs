//! Heat-equation solvers on uniform Cartesian grids with embedded geometry.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: node-centered grids, scalar fields, error norms.
//! - [`geometry`]: implicit (level-set) domains and grid-line intersections.
//! - [`tridiag`]: factor-once/solve-many tridiagonal systems.
//! - [`kfbi`]: one-dimensional boundary-integral sub-problem solver built on
//!   jump-corrected finite differences.
//! - [`adi`]: alternating-direction time stepping on a fitted box, plus the
//!   Fourier stability check for the three-level scheme.
//! - [`drivers`]: heat and reaction-diffusion drivers on irregular domains.
//! - [`levelset`]: narrow-band level-set transport, reinitialization, curvature.
//! - [`stefan`]: two-phase solidification with jump-corrected interface sweeps.

pub mod adi;
pub mod drivers;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod kfbi;
pub mod levelset;
pub mod stefan;
pub mod tridiag;

mod par;

pub use error::{Error, Result};
