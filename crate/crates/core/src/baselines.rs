//! The two comparison filters: a LogOP filter whose transmit decision
//! ignores covariance (mean-distance censoring), and a censored diffusion
//! Kalman filter that shares means only and therefore produces
//! inconsistent estimates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{info_update, symmetrize, MomentEstimate};
use crate::node::{BroadcastMessage, Dynamics, NodeState, NodeStepOutput, MESSAGE_HEADER_BYTES};
use crate::sensing::LinearizedMeasurement;

/// Covariance-blind censoring statistic: ½‖x − x̃‖². This is the KL rule
/// with both covariances replaced by the identity: the quadratic term
/// survives while the trace and log-determinant terms cancel.
pub fn norm_censor_statistic(
    posterior_mean: &DVector<f64>,
    shadow_mean: &DVector<f64>,
) -> Result<f64> {
    if posterior_mean.len() != shadow_mean.len() {
        return Err(Error::DimensionMismatch {
            context: "norm_censor_statistic",
            expected: posterior_mean.len(),
            got: shadow_mean.len(),
        });
    }
    Ok(0.5 * (posterior_mean - shadow_mean).norm_squared())
}

/// Transmit iff ½‖x − x̃‖² ≥ γ.
pub fn norm_censor_decide(
    posterior_mean: &DVector<f64>,
    shadow_mean: &DVector<f64>,
    gamma: f64,
) -> Result<bool> {
    Ok(norm_censor_statistic(posterior_mean, shadow_mean)? >= gamma)
}

/// Measurement update and transmit decision for the covariance-blind
/// variant. Identical to [`NodeState::update_and_decide`] except that the
/// reported statistic and the transmit test use the mean-distance rule;
/// fusion and prediction are unchanged (the filter still exchanges full
/// information pairs), so `voi_value` carries the norm statistic here.
pub fn nocov_update_and_decide(
    state: &NodeState,
    contribution: Option<&crate::gaussian::MeasurementContribution>,
) -> Result<(NodeState, NodeStepOutput)> {
    let posterior_info = match contribution {
        Some(c) => info_update(&state.fused, c)?,
        None => state.fused.clone(),
    };
    let posterior = posterior_info.to_moment()?;
    let shadow = state.shadow.to_moment()?;
    let statistic = norm_censor_statistic(posterior.mean(), shadow.mean())?;
    let transmitted = statistic >= state.gamma;
    let message = transmitted.then(|| BroadcastMessage {
        sender_id: state.node_id,
        info_vec: posterior_info.info_vec().clone(),
        info_mat: posterior_info.info_mat().clone(),
        step: state.clock,
    });
    let next = NodeState {
        fused: posterior_info,
        ..state.clone()
    };
    Ok((
        next,
        NodeStepOutput {
            transmitted,
            message,
            voi_value: statistic,
            posterior,
        },
    ))
}

/// Uniform average over the node's own mean and the received means.
pub fn combine_means(own: &DVector<f64>, received: &[DVector<f64>]) -> Result<DVector<f64>> {
    let mut sum = own.clone();
    for r in received {
        if r.len() != own.len() {
            return Err(Error::DimensionMismatch {
                context: "combine_means",
                expected: own.len(),
                got: r.len(),
            });
        }
        sum += r;
    }
    Ok(sum / (received.len() as f64 + 1.0))
}

/// Wire size of a mean-only diffusion broadcast.
pub fn diffusion_message_bytes(n: usize) -> usize {
    8 * n + MESSAGE_HEADER_BYTES
}

/// Diffusion node: moment-form estimate whose covariance is kept locally
/// and never transmitted. Between steps the fields hold the prediction.
#[derive(Debug, Clone)]
pub struct DiffusionNodeState {
    pub node_id: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub gamma: f64,
    pub dynamics: Arc<Dynamics>,
    pub clock: u64,
}

/// Result of the adapt/censor phase.
#[derive(Debug, Clone)]
pub struct DiffusionStepOutput {
    pub transmitted: bool,
    /// Mean-distance censoring statistic ½‖x − x̃‖².
    pub statistic: f64,
    /// The adapted mean broadcast to neighbors; present iff transmitted.
    pub message_mean: Option<DVector<f64>>,
    /// Adapted (pre-combine) estimate, scored for error metrics.
    pub posterior: MomentEstimate,
}

impl DiffusionNodeState {
    /// Same diffuse prior as the information filter: P₀ = (1/eps)·I.
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
        Ok(Self {
            node_id,
            mean: x0_guess.clone(),
            cov: DMatrix::identity(n, n) / eps,
            gamma,
            dynamics,
            clock: 0,
        })
    }

    /// Adapt: gain-form Kalman update with the node's own covariance
    /// (Joseph-stabilized). The censoring statistic compares the adapted
    /// mean against the node's own prediction mean, the only reference a
    /// covariance-free message stream leaves available.
    pub fn update_and_decide(
        &self,
        obs: Option<&LinearizedMeasurement>,
    ) -> Result<(DiffusionNodeState, DiffusionStepOutput)> {
        let n = self.mean.len();
        let (mean, cov) = match obs {
            Some(lm) => {
                if lm.h.ncols() != n {
                    return Err(Error::DimensionMismatch {
                        context: "diffusion measurement row",
                        expected: n,
                        got: lm.h.ncols(),
                    });
                }
                let s = (&lm.h * &self.cov * lm.h.transpose())[0] + lm.noise_var;
                let k = &self.cov * lm.h.transpose() / s;
                let innovation = lm.pseudo_z - (&lm.h * &self.mean)[0];
                let mean = &self.mean + &k * innovation;
                let i_kh = DMatrix::identity(n, n) - &k * &lm.h;
                let cov = symmetrize(
                    &(&i_kh * &self.cov * i_kh.transpose()
                        + &k * k.transpose() * lm.noise_var),
                );
                (mean, cov)
            }
            None => (self.mean.clone(), self.cov.clone()),
        };
        let statistic = norm_censor_statistic(&mean, &self.mean)?;
        let transmitted = statistic >= self.gamma;
        let posterior = MomentEstimate::new(mean.clone(), cov.clone())?;
        let message_mean = transmitted.then(|| mean.clone());
        let next = DiffusionNodeState {
            mean,
            cov,
            ..self.clone()
        };
        Ok((
            next,
            DiffusionStepOutput {
                transmitted,
                statistic,
                message_mean,
                posterior,
            },
        ))
    }

    /// Combine: uniform average of the own adapted mean and the received
    /// means, with the covariance deliberately untouched (the shared
    /// means carry no belief information, which is where the
    /// inconsistency of this baseline comes from). Then predict.
    pub fn combine_and_predict(&self, received_means: &[DVector<f64>]) -> Result<Self> {
        let combined = combine_means(&self.mean, received_means)?;
        let a = &self.dynamics.a;
        Ok(DiffusionNodeState {
            mean: a * combined,
            cov: symmetrize(&(a * &self.cov * a.transpose() + &self.dynamics.q)),
            clock: self.clock + 1,
            ..self.clone()
        })
    }

    /// A full step: adapt, censor, combine with whatever was delivered,
    /// predict. The transmit flag depends only on the node's own adapt,
    /// so the simulator can split the phases around message delivery.
    pub fn step(
        &self,
        obs: Option<&LinearizedMeasurement>,
        received_means: &[DVector<f64>],
    ) -> Result<(DiffusionNodeState, bool)> {
        let (adapted, out) = self.update_and_decide(obs)?;
        let next = adapted.combine_and_predict(received_means)?;
        Ok((next, out.transmitted))
    }
}
