//! Simulation and numerical verification toolkit for the JSQ(d) "supermarket"
//! load-balancing model: `n` parallel rate-1 queues, Poisson arrivals at rate
//! `n * lambda`, each arrival joining a shortest queue among `d` sampled
//! without replacement.
//!
//! The crate provides:
//!
//! * [`choice`] — the without-replacement choice probability `beta` and its
//!   derivative, with asymptotic diagnostics against the `x^d` surrogate;
//! * [`fixed_point`] — the near fixed point `mu`, drift fields, scaled drift,
//!   and classification of parameter sequences into fluctuation regimes;
//! * [`skorohod`] — the one-dimensional Skorohod reflection map;
//! * [`ctmc`] — exact event-driven simulation of the occupancy process, with
//!   a per-queue cross-validation backend and a generator-matrix oracle;
//! * [`fluid`] — the constrained fluid ODE in two equivalent forms;
//! * [`sde`] — Euler–Maruyama simulation of the three diffusion limits;
//! * [`harness`] — experiment orchestration and two-sample comparisons.

pub mod choice;
pub mod ctmc;
pub mod error;
pub mod expr;
pub mod fixed_point;
pub mod fluid;
pub mod harness;
pub mod path;
pub mod regime;
pub mod rng;
pub mod sde;
pub mod skorohod;
pub mod stats;

pub use error::{Error, Result};
pub use path::SampledPath;

use serde::{Deserialize, Serialize};

/// Parameters of one prelimit system: `n` servers, `d` choices per arrival,
/// per-server arrival rate `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n: u64,
    pub d: u64,
    pub lambda: f64,
}

impl SystemParams {
    /// Validates `1 <= d <= n` and `lambda >= 0`. Zero arrivals are allowed
    /// (pure-death runs); operations that need `0 < lambda < 1` check that
    /// themselves.
    pub fn new(n: u64, d: u64, lambda: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParams("n must be positive".into()));
        }
        if d == 0 || d > n {
            return Err(Error::InvalidParams(format!(
                "d must satisfy 1 <= d <= n, got d={d}, n={n}"
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParams(format!(
                "lambda must be a nonnegative finite real, got {lambda}"
            )));
        }
        Ok(SystemParams { n, d, lambda })
    }

    pub fn n_f64(&self) -> f64 {
        self.n as f64
    }

    pub fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }
}
