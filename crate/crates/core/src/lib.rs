//! Differentiable Cusick drape simulation and cloth material inference.

pub mod adjoint;
pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod inference;
pub mod material;
pub mod mesh;
pub mod metrics;
pub mod render;

pub use error::{Error, ErrorCategory, Result};
