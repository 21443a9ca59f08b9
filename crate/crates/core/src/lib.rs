//! Numerical tools for the quantum transfer matrix of the six-vertex model
//! with a disorder parameter `alpha`.
//!
//! * [`model`]: parameters, `coth`, bare energy and kernels.
//! * [`contour`]: rectangular contours and composite Gauss-Legendre grids.
//! * [`nlie`]: the nonlinear integral equation for the auxiliary function.
//! * [`bethe`]: Bethe roots, Q-functions and an exact-diagonalization oracle.
//! * [`lie`]: Nystrom solver for the linear integral equations.
//! * [`correlator`]: the function `Psi`, its continuations and asymptotics.
//! * [`thermo`]: free energy and magnetization.

pub mod bethe;
pub mod contour;
pub mod correlator;
pub mod error;
pub mod lie;
pub mod linalg;
pub mod model;
pub mod nlie;
pub mod par;
pub mod thermo;

pub use error::{Error, Result};
pub use num_complex::Complex64;
