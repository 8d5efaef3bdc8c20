//! Adjoint-guided mobile sensing for oil spill monitoring.
//!
//! The crate couples a small ocean/oil model (incompressible flow layers,
//! Lagrangian particles, an uncertainty tracer) with a sensor-placement
//! optimizer and a reduced-order assimilation loop, and provides a twin
//! experiment harness to compare sensing strategies.
// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod domain;
pub mod error;
pub mod fld;
pub mod flow;
pub mod harness;
pub mod oil;
pub mod placement;
pub mod rom;
pub mod uncertainty;

pub use domain::{GridSpec, Point, ScalarField, StateTrajectory, TimeGrid, VectorField};
pub use error::{Error, Result};
