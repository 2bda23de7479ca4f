//! Discrete adjoint and tangent-linear sensitivities for unsteady
//! compressible flow control.

pub mod error;
pub mod grid_field;
pub mod ns_linearized;
pub mod ns_rhs;
pub mod scalar;
pub mod stencil_ops;

pub use error::{Error, Result};
pub mod control_space;
pub mod cost;
pub mod timeloop;
pub mod ns_system;
pub mod sensitivity_loop;
pub mod verify;
pub mod testbed;
pub mod chaos;
pub mod optimize;
pub mod config;
pub mod cli;
