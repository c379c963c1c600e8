//! Prediction-powered confidence intervals for the average treatment effect.
//!
//! A small dataset D¹ without unobserved confounding gives valid but wide
//! intervals on its own. A large dataset D² may be confounded, but a CATE
//! model trained on it is still a useful predictor. This crate combines
//! the two: the measure of fit (mean predicted CATE on held-out D²) is
//! debiased by a rectifier computed on D¹, which keeps the interval valid
//! while shrinking it whenever the predictor explains the D¹ influence
//! scores well.
//!
//! Modules, bottom-up:
//!
//! - [`dataset`]: samples, CSV I/O, seeded fold assignment
//! - [`nuisance`]: ridge and logistic learners, K-fold cross-fitting
//! - [`scores`]: AIPW and IPW influence scores
//! - [`cate`]: DR-learner for τ̂₂
//! - [`ppi`]: rectifier, measure of fit and the interval variants
//! - [`baselines`]: single-dataset AIPW intervals
//! - [`pipeline`]: the full estimation pass
//! - [`synthgen`]: Gaussian-process data with controllable confounding
//! - [`bench`]: Monte Carlo coverage and width experiments
//! - [`cli`]: the `ppate` command-line front end

pub mod baselines;
pub mod bench;
pub mod cate;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod nuisance;
pub mod pipeline;
pub mod ppi;
pub mod scores;
pub mod stats;
pub mod synthgen;

pub use error::{Error, Result};
