//! Numerical homogenization of supremal (L-infinity) energies with periodic
//! microstructure.
//!
//! Two routes to the effective density are implemented and cross-checked:
//!
//! * the Lp route: solve the periodic cell problem for the p-energy
//!   `(mean of f^p(x, Z + Du))^(1/p)` and sweep p upward ([`lp_hom`]);
//! * the direct route: bisection on the level M of a convex feasibility
//!   problem "find periodic u with f(x, Z + Du(x)) <= M everywhere",
//!   solved by alternating projections ([`sup_hom`]).
//!
//! Pointwise gradient constraints are homogenized into an effective convex
//! body by directional bisection on the same feasibility engine
//! ([`constraint_hom`]). Exact 1D and 2D-laminate references live in
//! [`oracle`] and back the test suite.

pub mod config;
pub mod constraint_hom;
pub mod density;
pub mod error;
pub mod grid;
pub mod lp_hom;
pub mod matrix;
pub mod oracle;
mod par;
pub mod rng;
pub mod sup_hom;
pub mod verify;

pub use config::RunConfig;
pub use density::{PeriodicDensity, SublevelSet};
pub use error::{Error, Result};
pub use grid::{CellGrid, CellTensorField, NodeField};
pub use matrix::Matrix;
