//! Calendar-time survival models for vaccine trials with time-varying
//! transmission, variant mixes and correlate-of-protection thresholds.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod hazard;
pub mod inference;
pub mod math;
pub mod parallel;
pub mod prior;
pub mod simulation;

pub use error::{Error, Result};
