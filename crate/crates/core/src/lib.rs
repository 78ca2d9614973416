//! Communication-constrained distributed covariance estimation.
//!
//! Agents hold disjoint feature blocks of i.i.d. sub-Gaussian samples and send
//! budgeted, bit-exact messages to a server (or to each other) that estimates
//! the joint covariance. The crate provides the quantize-and-aggregate
//! protocols, contraction-coefficient and lower-bound calculators, Monte Carlo
//! validators for the concentration inequalities the protocols rely on, and a
//! seeded sweep harness.

pub mod error;
pub mod harness;
pub mod model;
pub mod protocol;
pub mod quantize;
pub mod rng;
pub mod theory;
pub mod validate;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Distortion norm a scheme targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Op,
    Fr,
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "op" => Ok(Norm::Op),
            "fr" => Ok(Norm::Fr),
            other => Err(Error::Config(format!("unknown norm `{other}`"))),
        }
    }
}
