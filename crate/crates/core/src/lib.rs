//! Learning and evaluating profit-maximizing treatment-targeting rules from
//! randomized-experiment data.
//!
//! Pipeline: [`data`] loads a validated [`data::Dataset`]; [`nuisance`] fits
//! the propensity and outcome-mean models; [`scores`] turns them into AIPW
//! scores; [`policy`] learns a rule from the net rewards; [`eval`] estimates
//! the rule's value and its gains over all-treat, no-treat and random
//! assignment, in-sample, by K-fold cross-validation, or on a second sample.
//! [`heterogeneity`], [`matching`] and [`synthetic`] provide diagnostics,
//! transfer analysis and simulated campaigns with known truth.

pub mod cli;
pub mod data;
pub mod eval;
pub mod error;
pub mod heterogeneity;
pub mod linalg;
pub mod matching;
pub mod nuisance;
pub mod policy;
pub mod scores;
pub mod synthetic;

pub use error::{Error, Result};
