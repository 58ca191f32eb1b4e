//! Subsampling estimators of the asymptotic covariance of power, bipower and
//! pre-averaged bipower variations, with competing estimators, feasible tests
//! and a Monte Carlo harness.

pub mod altvar;
pub mod cov;
pub mod error;
pub mod harness;
pub mod inference;
pub mod preavg;
pub mod quadrature;
pub mod series;
pub mod simulate;
pub mod subsample;
pub mod variation;

pub use cov::{CovEstimate, EstimatorId};
pub use error::{Error, Result};
pub use series::{PowerSpec, ReturnSeries, TickSeries};
