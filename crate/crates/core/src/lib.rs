//! Numerical thermodynamic formalism for Hénon maps at the first bifurcation.

pub mod analysis;
pub mod cli;
pub mod curve;
pub mod error;
pub mod henon;
pub mod inducing;
pub mod manifolds;
pub mod thermo;

pub use error::{HenonError, Result};
