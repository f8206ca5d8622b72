//! Stabilized finite elements for coupled Stokes-Brinkman flow and transient
//! advection-diffusion-reaction transport.

pub mod analysis;
pub mod assembly;
pub mod config;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod spaces;
pub mod stabilization;
pub mod study;
pub mod timestepper;

pub use error::{Error, Result};
