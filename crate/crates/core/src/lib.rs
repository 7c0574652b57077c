//! Censored distributed state estimation over lossy networks.
//!
//! Agents run local information filters, fuse neighbor estimates with a
//! logarithmic opinion pool, and transmit only when the divergence
//! between their fused posterior and their own unfused prediction — the
//! value of the information they hold — exceeds a censoring level γ.
//! Because the pool is a convex combination of information pairs, the
//! fused estimates stay consistent (reported covariance dominates the
//! true error covariance) under unknown cross-correlations.
//!
//! The crate bundles:
//!
//! - [`gaussian`]: moment/information-form algebra, KL divergence, LogOP
//!   fusion, information-form predict/update.
//! - [`node`]: the per-agent dual-track state machine with the censoring
//!   decision.
//! - [`discrete`]: a finite-state twin of the filter used to verify
//!   pooling optimality and consensus against brute force.
//! - [`sensing`]: range/bearing sensors with limited radius and their
//!   linearization.
//! - [`netsim`]: seeded lossy-broadcast network simulation.
//! - [`scenario`]: target dynamics, deployment, and the TOML config.
//! - [`baselines`]: covariance-blind censoring and a censored diffusion
//!   Kalman filter for comparison.
//! - [`harness`]: the closed simulation loop, metrics, sweeps, CSV out.
//! - [`oracle`]: independent numerical oracles for the test suites.

pub mod baselines;
pub mod discrete;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod netsim;
pub mod node;
pub mod oracle;
pub mod scenario;
pub mod sensing;
pub mod verify;

pub use error::{Error, Result};
pub use gaussian::{InfoEstimate, MeasurementContribution, MomentEstimate};
pub use harness::{Metrics, RunOutput, StepRecord, Summary, SweepOutcome, SweepPoint};
pub use netsim::{LinkModel, NetworkSnapshot};
pub use node::{BroadcastMessage, Dynamics, NodeState, NodeStepOutput};
pub use scenario::{FilterKind, NcvModel, ScenarioConfig};
pub use sensing::{Measurement, SensorKind, SensorSpec};
