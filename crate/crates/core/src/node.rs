//! Per-agent state machine of the censored distributed information filter.
//!
//! Each node keeps two prediction tracks. The fused track carries the
//! prediction of the LogOP-fused posterior; the shadow track carries the
//! prediction of the node's own unfused posterior and serves as the
//! reference in the transmit decision. A step is split into two phases
//! matching the synchronous simulator: `update_and_decide` (measurement
//! update plus censoring test) and `fuse_and_predict` (aggregate whatever
//! was delivered, then predict both tracks).
//!
//! The shadow is never reset on transmission: it is always the one-step
//! prediction of the node's own unfused posterior, whether or not the
//! node chose to transmit.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{
    info_predict, info_update, kl_gaussian, logop_fuse, InfoEstimate, MeasurementContribution,
    MomentEstimate,
};

/// Fixed wire overhead per broadcast: sender id and step counter.
pub const MESSAGE_HEADER_BYTES: usize = 12;

/// Linear dynamics shared by every node: x' = Ax + w, w ~ N(0, Q).
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl Dynamics {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                context: "dynamics matrix",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        if q.nrows() != a.nrows() || q.ncols() != a.ncols() {
            return Err(Error::DimensionMismatch {
                context: "process noise matrix",
                expected: a.nrows(),
                got: q.nrows().max(q.ncols()),
            });
        }
        Ok(Self { a, q })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Broadcast payload: the sender's measurement-updated posterior in
/// information form, stamped with the sender's clock.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastMessage {
    pub sender_id: usize,
    pub info_vec: DVector<f64>,
    pub info_mat: DMatrix<f64>,
    pub step: u64,
}

impl BroadcastMessage {
    pub fn estimate(&self) -> Result<InfoEstimate> {
        InfoEstimate::new(self.info_vec.clone(), self.info_mat.clone())
    }

    /// Serialized size used for bandwidth accounting: n + n(n+1)/2 scalars
    /// at 8 bytes (vector plus upper triangle of the symmetric matrix)
    /// plus the header.
    pub fn wire_bytes(&self) -> usize {
        let n = self.info_vec.len();
        8 * (n + n * (n + 1) / 2) + MESSAGE_HEADER_BYTES
    }
}

/// Result of the measurement-update/censoring phase.
#[derive(Debug, Clone)]
pub struct NodeStepOutput {
    pub transmitted: bool,
    /// Present iff `transmitted`.
    pub message: Option<BroadcastMessage>,
    /// Divergence between the posterior and the shadow prediction, nats.
    pub voi_value: f64,
    /// The fused-track posterior of this step, in moment form.
    pub posterior: MomentEstimate,
}

/// One agent's filter state between phases.
///
/// Between steps, `fused` holds the fused-track prediction and `shadow`
/// the unfused prediction. After `update_and_decide`, `fused` holds the
/// measurement-updated posterior until `fuse_and_predict` advances the
/// clock.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    pub fused: InfoEstimate,
    pub shadow: InfoEstimate,
    pub gamma: f64,
    pub dynamics: Arc<Dynamics>,
    pub clock: u64,
}

impl NodeState {
    /// Diffuse-prior initialization: Y₀ = ε·I, y₀ = Y₀·x̂₀, both tracks
    /// equal, clock zero. At the first step the prior plays the shadow
    /// role in the transmit decision.
    pub fn new(
        node_id: usize,
        x0_guess: &DVector<f64>,
        eps: f64,
        gamma: f64,
        dynamics: Arc<Dynamics>,
    ) -> Result<Self> {
        if eps <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "eps",
                reason: "diffuse prior needs a positive information floor".into(),
            });
        }
        if gamma < 0.0 || gamma.is_nan() {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: "censoring level must be nonnegative".into(),
            });
        }
        let n = dynamics.dim();
        if x0_guess.len() != n {
            return Err(Error::DimensionMismatch {
                context: "initial state guess",
                expected: n,
                got: x0_guess.len(),
            });
        }
        let prior = InfoEstimate::new(x0_guess * eps, DMatrix::identity(n, n) * eps)?;
        Ok(Self {
            node_id,
            fused: prior.clone(),
            shadow: prior,
            gamma,
            dynamics,
            clock: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    /// Measurement update and transmit decision. The posterior (never the
    /// prediction) is what gets broadcast. With no contribution the
    /// posterior equals the fused-track prediction, which covers both
    /// censored sensors and relay-only nodes.
    pub fn update_and_decide(
        &self,
        contribution: Option<&MeasurementContribution>,
    ) -> Result<(NodeState, NodeStepOutput)> {
        let posterior_info = match contribution {
            Some(c) => info_update(&self.fused, c)?,
            None => self.fused.clone(),
        };
        let posterior = posterior_info.to_moment()?;
        let shadow = self.shadow.to_moment()?;
        let voi_value = kl_gaussian(&posterior, &shadow)?;
        let transmitted = voi_value >= self.gamma;
        let message = transmitted.then(|| BroadcastMessage {
            sender_id: self.node_id,
            info_vec: posterior_info.info_vec().clone(),
            info_mat: posterior_info.info_mat().clone(),
            step: self.clock,
        });
        let next = NodeState {
            fused: posterior_info,
            ..self.clone()
        };
        Ok((
            next,
            NodeStepOutput {
                transmitted,
                message,
                voi_value,
                posterior,
            },
        ))
    }

    /// Aggregate the delivered posteriors with the node's own via LogOP,
    /// then predict both tracks: the shadow from the node's own posterior
    /// alone, the fused track from the aggregate. Messages must carry the
    /// current step; duplicate senders (including the node itself) are
    /// rejected.
    pub fn fuse_and_predict(&self, received: &[BroadcastMessage]) -> Result<NodeState> {
        let mut seen = BTreeSet::new();
        seen.insert(self.node_id);
        let mut estimates = Vec::with_capacity(received.len());
        for msg in received {
            if !seen.insert(msg.sender_id) {
                return Err(Error::DuplicateSender { sender: msg.sender_id });
            }
            if msg.step != self.clock {
                return Err(Error::StaleMessage {
                    sender: msg.sender_id,
                    expected: self.clock,
                    got: msg.step,
                });
            }
            if msg.info_vec.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    context: "broadcast message",
                    expected: self.dim(),
                    got: msg.info_vec.len(),
                });
            }
            estimates.push(msg.estimate()?);
        }
        let fused_posterior = logop_fuse(&self.fused, &estimates)?;
        let dynamics = &self.dynamics;
        Ok(NodeState {
            shadow: info_predict(&self.fused, &dynamics.a, &dynamics.q)?,
            fused: info_predict(&fused_posterior, &dynamics.a, &dynamics.q)?,
            clock: self.clock + 1,
            ..self.clone()
        })
    }
}
