//! Constructed observational studies from randomized trials.
//!
//! Biased subsampling of a randomized controlled trial (or of a table that
//! records every potential outcome) yields an observational-style study whose
//! true average effect is known from the untouched trial. This crate builds
//! such studies, runs treatment-effect estimators on them, and scores the
//! estimators against the trial's unbiased estimate.

pub mod bias;
pub mod commands;
pub mod data;
pub mod estimators;
pub mod harness;
pub mod protocol;
pub mod render;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod synthetic;
