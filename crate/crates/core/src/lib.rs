//! Numerical laboratory for the harmonic Bergman projection on the unit disk
//! and ball: reproducing kernels, tangential Sobolev norms, and antiderivatives
//! along the radial flow.

pub mod error;
pub mod experiments;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod jet;
pub mod kernels;
pub mod quadrature;

pub use error::{LabError, Result};
