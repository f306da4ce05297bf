//! Received-signal-strength prediction from geometric features.
//!
//! The crate ingests terrain, building and land-use rasters, traces rays
//! between base stations and user positions, turns each trace into a
//! fixed-width feature row, and fits histogram gradient-boosted trees to
//! binned measurements. Empirical propagation formulas serve as baselines
//! and TreeSHAP attributions explain the fitted ensemble.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod empirical;
pub mod eval;
pub mod explain;
pub mod features;
pub mod gbdt;
pub mod geodata;
pub mod profile;
pub mod scenario;
