//! Deterministic simulator and metrics harness for remote ultrasound
//! teleoperation with robotic, human and direct followers.

// Config checks are written `!(x > 0.0)` on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod experiment;
pub mod haptics;
pub mod human;
pub mod phantom;
pub mod rng;
pub mod robot;
pub mod spatial;
pub mod ultrasound;

pub use error::{ConfigError, Error, Result};
