//! Dual-advantage group-relative policy optimization for budgeted local and
//! cloud collaboration, with a continual-learning simulator.
//!
//! The crate is organised bottom up:
//!
//! - [`policy`]: tabular softmax policy with a HELP action
//! - [`environment`]: synthetic tasks, the cloud oracle and reward rules
//! - [`advantage`]: group-relative reward and cost advantages
//! - [`estimator`]: the group gradient estimator and its exact oracles
//! - [`dual`]: the λ controller
//! - [`trainer`]: the training loop and comparison strategies
//! - [`metrics`]: evaluation, forgetting and the metrics log
//! - [`config`], [`harness`], [`sweep`], [`plot`], [`verify`]: the
//!   experiment harness behind the `dagrpo` binary

pub mod advantage;
pub mod config;
pub mod dual;
pub mod environment;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod metrics;
pub mod plot;
pub mod policy;
pub mod rng;
pub mod sweep;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
