//! Reduced-order bifurcation pressure model built from a linear resistor, a
//! quadratic resistor and an inductor (RRI) whose coefficients are regressed
//! from the bifurcation geometry.

pub mod error;
pub mod fitting;
pub mod geometry;
pub mod junction;
pub mod oracle;
pub mod pipeline;
pub mod regressors;
pub mod solver;

pub use error::{Error, Result};
