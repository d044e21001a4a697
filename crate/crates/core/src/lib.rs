//! Desk-scale toolkit for Spitz tumor diagnostics research.
//!
//! Three pieces share this crate:
//!
//! - a bag-level transformer classifier over tile feature vectors ([`milnet`]),
//!   with synthetic cohorts ([`cohort`]) and feature bags ([`bags`]) to drive it;
//! - the evaluation statistics used to score classifiers and readers ([`metrics`]),
//!   plus a clinical-feature logistic regression baseline and fusion model
//!   ([`clinical`]);
//! - a Monte Carlo simulation of ancillary-test ordering in the pathology
//!   workflow ([`simflow`]).

pub mod bags;
pub mod clinical;
pub mod cohort;
pub mod metrics;
pub mod milnet;
pub mod rng;
pub mod simflow;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
