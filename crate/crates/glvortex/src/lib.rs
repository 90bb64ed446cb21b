//! Numerical machinery for vortex solutions of the critical-coupling abelian
//! Ginzburg-Landau equations: the planar one-vortex, the gauge-fixed linearized
//! operator, model manifolds with a minimal codimension-2 submanifold, the
//! vortex ansatz on a Fermi tube, and the gluing scheme that corrects it to an
//! exact lattice solution.

pub mod ansatz;
pub mod diagnostics;
pub mod error;
pub mod par;
pub mod sparse;
pub mod geometry;
pub mod gluing;
pub mod linop;
pub mod vortex2d;

pub use error::{GlError, Result};
