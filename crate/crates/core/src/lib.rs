//! Simulation and verification toolkit for a mean-field system of interacting
//! neurons in diffusive scaling.
//!
//! The finite system consists of `N` neurons whose membrane potentials decay
//! exponentially between spikes. A neuron with potential `x` spikes at rate
//! `f(x)`; at a spike its potential resets to 0 and every other neuron
//! receives a centred random kick of size `u / sqrt(N)`. As `N` grows the
//! aggregated small kicks act like a Brownian motion, and the system
//! approaches a mean-field limit driven by that common noise.
//!
//! This crate provides:
//!
//! * [`model`] — the mathematical ingredients (rate function, jump law,
//!   bounded increasing distance map) and assumption validation,
//! * [`noise`] — deterministic splittable random streams,
//! * [`finite_system`] — exact event-driven simulation of the N-neuron system,
//! * [`kmt`] — walk-to-Brownian couplers with logarithmic sup error,
//! * [`coupling`] — per-interval coupling of frozen spike marks to Gaussian
//!   increments and concatenation into a driving Brownian path,
//! * [`auxiliary_system`] — the mean-field system driven by that path,
//! * [`stats`] — Monte Carlo estimators, rate fits and distributional checks,
//! * [`config`] — config file schema, overrides and digests.

pub mod auxiliary_system;
pub mod config;
pub mod coupling;
pub mod finite_system;
pub mod kmt;
pub mod model;
pub mod noise;
pub mod stats;

pub use auxiliary_system::{AuxPath, CoupledRun};
pub use coupling::{BrownianPath, IntervalCoupling};
pub use finite_system::{IntervalLog, SystemPath};
pub use kmt::{CouplerMethod, LatticeLaw, WalkCoupling};
pub use model::{DistanceMap, JumpLaw, ModelParams, RateFunction};
pub use noise::{StreamKey, StreamPurpose};
pub use stats::{RateStudyResult, RemainderProbe};

/// Errors produced by the simulation and statistics layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("model assumptions violated: {0}")]
    Assumptions(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("time {t} outside path domain [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("walk and Brownian values have different lengths ({walk} vs {brownian})")]
    LengthMismatch { walk: usize, brownian: usize },
    #[error("jump law has no lattice carrier: {0}")]
    NoLatticeCarrier(String),
    #[error("lattice support of size {0} exceeds cap {1}")]
    LatticeOverflow(usize, usize),
    #[error("non-finite state encountered: {0}")]
    NonFinite(String),
    #[error("need at least {need} points for fit, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
