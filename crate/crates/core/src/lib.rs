//! Numerical laboratory for stochastic homogenization of monotone
//! (visco-)plasticity.
//!
//! The crate is `no_std` and only needs `alloc`. It is organised bottom-up:
//!
//! * [`linalg`], [`rng`], [`mandel`]: dense/sparse kernels, counter-based
//!   hashing and the orthonormal (Mandel) representation of symmetric tensors.
//! * [`microstructure`]: stationary ergodic coefficient fields built from iid
//!   lattice cells, with ergodic averaging and stationarity diagnostics.
//! * [`convex`]: maximal monotone laws, resolvents, Fenchel conjugates,
//!   Fitzpatrick functions and coercivity certificates.
//! * [`fem`]: structured-grid finite elements for heterogeneous linear
//!   elasticity, periodic cell problems and potential/solenoidal splitting.
//! * [`rothe`]: implicit time stepping of the elasto-visco-plastic system with
//!   energy ledger, interpolants and the Fitzpatrick weak-solution residual.
//! * [`twoscale`]: pairings against oscillating test functions and
//!   liminf checks.
//! * [`homogenizer`]: effective tensors and the FE²-style homogenized march.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "parallel"))]
extern crate std;

pub mod convex;
pub mod error;
pub mod fem;
pub mod homogenizer;
pub mod linalg;
pub mod mandel;
pub mod microstructure;
mod par;
pub mod rng;
pub mod rothe;
pub mod twoscale;

pub use error::{Error, Result};
