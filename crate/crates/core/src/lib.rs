//! Dynamics, linearization and geometric control of several quadrotors
//! carrying a rigid payload through multi-link cables.
//!
//! The crate is organized bottom-up: [`manifold`] provides the SO(3) and S²
//! utilities, [`model`] the parameters and state, [`dynamics`] the equations of
//! motion, [`linearization`] and [`gains`] the linear design, [`controller`]
//! the nonlinear controller, [`integrator`] the Lie-group time stepping and
//! [`sim`] scenarios, metrics and output.

pub mod controller;
pub mod dynamics;
pub mod error;
pub mod gains;
pub mod integrator;
pub mod linalg;
pub mod linearization;
pub mod manifold;
pub mod model;
pub mod oracle;
pub mod par;
pub mod sim;

pub use error::{Error, Result};
