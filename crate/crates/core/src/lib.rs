//! Dataset distillation engine.
//!
//! Pipeline: train smooth expert trajectories on real data ([`buffer`]),
//! align a small learnable synthetic set to those trajectories through
//! unrolled inner-loop training ([`distill`]), then measure the synthetic
//! set by training fresh networks on it ([`eval`]). Everything is built on
//! a higher-order reverse-mode tape ([`graph`]) so the meta-gradients that
//! drive distillation are exact.

pub mod augment;
pub mod buffer;
pub mod container;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod models;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
