//! Spatial causal inference toolkit.
//!
//! Areal (lattice) data are modelled with conditionally autoregressive (CAR)
//! Gaussian Markov random fields and fitted with a shared Metropolis-within-Gibbs
//! engine. On top of that engine sit the confounder-adjustment estimators
//! (spatial propensity scores, joint and cut models, SAR differencing,
//! instrumental variables, matching), interference estimands, spatiotemporal
//! estimators and point-referenced (geostatistical) methods. A simulation
//! harness reproduces the confounding benchmark used to compare estimators.
//!
//! Regions are indexed row-major and zero-based everywhere.

pub mod confound;
pub mod data;
pub mod error;
pub mod geostat;
pub mod interference;
pub mod lattice;
pub mod linalg;
pub mod mcmc;
pub mod propensity;
pub mod simstudy;
pub mod spacetime;

pub use error::{Error, Result};
