//! Discrete-event simulator and configuration advisor for clusters with
//! byte-addressable persistent memory (B-APM).
//!
//! The crate models DRAM, Memory mode and AppDirect mode memory systems,
//! node-local and shared storage paths, and runs jobs and workflows on a
//! virtual cluster to produce timing reports.

// `!(x >= 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advisor;
pub mod assets;
pub mod calibrate;
pub mod domain;
pub mod error;
pub mod iomodel;
pub mod memmodel;
pub mod scenarios;
pub mod sim;
pub mod units;

pub use error::{Error, Result};
