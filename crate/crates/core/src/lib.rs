//! Simulator and optimizer for hierarchical independent submodel training
//! over multi-cell wireless networks.

// `!(x > 0.0)` checks are meant to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aircomp;
pub mod data;
pub mod error;
pub mod harness;
pub mod latency;
pub mod masking;
pub mod model;
pub mod optimizer;
pub mod scenario;
pub mod seed;
pub mod trace;
pub mod training;

pub use error::{HistError, Result};
