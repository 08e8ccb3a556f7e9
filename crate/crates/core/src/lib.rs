//! Interim monitoring for sequential multiple assignment randomized trials.
//!
//! The crate is organised around the life cycle of a two-stage SMART:
//!
//! - [`design`]: trial structure, embedded adaptive treatment strategies,
//!   patient records and generative scenarios.
//! - [`estimation`]: inverse-probability-weight-normalized strategy means and
//!   their robust covariance.
//! - [`wald`]: contrasts, generalized-inverse Wald statistics and
//!   noncentral chi-square power.
//! - [`boundary`]: group sequential efficacy boundaries from the
//!   Wishart-type multivariate chi-square law, sequential power and sample
//!   size.
//! - [`simulate`]: trial simulation and operating characteristics.
//! - [`selection`]: post-hoc best-strategy selection after a rejection.
//! - [`io`]: data, configuration and report formats plus the analysis
//!   pipeline used by the command-line front end.

pub mod boundary;
pub mod design;
pub mod error;
pub mod estimation;
pub mod io;
pub mod rng;
pub mod selection;
pub mod simulate;
pub mod wald;

pub use error::{Error, Result};
