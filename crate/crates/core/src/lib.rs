//! Two-fluid semi-stationary compressible Stokes flow with an algebraic
//! pressure closure.
//!
//! The pipeline evolves Lagrangian markers by a windowed fixed point,
//! recovers the Eulerian potential velocity by Picard iteration over
//! characteristics, and evaluates energy, weight and oscillation
//! diagnostics on the resulting fields.

pub mod closure;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod eulerian;
pub mod lagrangian;
pub mod scenario;

pub use closure::{ClosureState, ModelParams};
pub use error::{Error, Result};
pub use grid::{GridSpec, Interp, Point, ScalarField, VectorField};
