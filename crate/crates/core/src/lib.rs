//! Neural-network model predictive control.
//!
//! A small learned forward model (dense or GRU layers loaded from JSON) is
//! rolled out over a prediction horizon; its input sensitivities come from
//! central finite differences, and a Newton-Raphson solver with a log-free
//! barrier penalty picks the input plan. Simulated plants, reference paths,
//! a windowing pipeline and a small MLP trainer sit alongside the controller.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod datapipe;
pub mod error;
pub mod linalg;
pub mod mpc;
pub mod nn;
pub mod paths;
pub mod plant;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::Mat2;
