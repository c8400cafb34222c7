//! Context-conditioned echo state networks with per-step prediction intervals,
//! and shared control that hands authority to the robot when it is confident.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod data;
pub mod model;
pub mod numerics;
pub mod reservoir;
pub mod service;
