//! Numerical verification of nonlocal Simons-type identities for hypersurfaces
//! of `R³` and their local limit.

pub mod error;
pub mod geometry;
pub mod kernels;
pub mod quadrature;

pub use error::{Error, Result};
pub mod identities;
pub mod nonlocal_ops;
pub mod levelset;
pub mod cli;
