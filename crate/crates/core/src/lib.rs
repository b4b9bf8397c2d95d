//! Offline model selection for discrete-action offline RL.
//!
//! Given a logged dataset and a set of candidate Q-functions, this crate
//! scores the candidates with four selection criteria — regression-based
//! Bellman-backup validation, the empirical mean squared Bellman error,
//! weighted per-decision importance sampling, and fitted Q-evaluation —
//! and compares their rankings against ground truth. Exact tabular oracles
//! back every estimator with brute-force checks, and a seeded toy
//! environment drives the end-to-end experiment harness.
//!
//! Selection criteria implement the [`selectors::Selector`] trait and are
//! registered by name, so experiments pick them at runtime from config.

pub mod candidates;
pub mod config;
pub mod data;
pub mod experiments;
pub mod fixtures;
pub mod io;
pub mod metrics;
pub mod props;
pub mod qfit;
pub mod regression;
pub mod report;
pub mod rng;
pub mod selectors;
pub mod tabular;
pub mod toy;
pub mod value;
