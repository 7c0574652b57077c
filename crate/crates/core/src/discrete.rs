//! Finite-state Bayes filtering with log-opinion-pool fusion and the same
//! censoring rule as the Gaussian filter. This is the desk-scale variant
//! used to verify pooling optimality and consensus behavior against brute
//! force; it has no role in the tracking simulator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;

/// Probability vector over a finite state space.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: DVector<f64>,
}

impl DiscreteDist {
    /// Entries must be nonnegative and sum to one within 1e-12.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter {
                name: "probs",
                reason: "empty state space".into(),
            });
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "probs",
                reason: "entries must be finite and nonnegative".into(),
            });
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidParameter {
                name: "probs",
                reason: format!("entries sum to {total}, expected 1"),
            });
        }
        Ok(Self {
            probs: DVector::from_vec(probs),
        })
    }

    /// Normalize an arbitrary nonnegative weight vector into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "total mass must be positive and finite".into(),
            });
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(states: usize) -> Self {
        Self {
            probs: DVector::from_element(states, 1.0 / states as f64),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    fn renormalized(mut probs: DVector<f64>) -> Self {
        let total: f64 = probs.iter().sum();
        probs /= total;
        Self { probs }
    }
}

/// Transition kernel and per-observation likelihoods for the finite-state
/// filter. `transition[(i, j)]` is the probability of moving from state i
/// to state j; `likelihoods[z][x]` is p(z | x).
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    transition: DMatrix<f64>,
    likelihoods: Vec<DVector<f64>>,
}

impl DiscreteModel {
    pub fn new(transition: DMatrix<f64>, likelihoods: Vec<Vec<f64>>) -> Result<Self> {
        let s = transition.nrows();
        if transition.ncols() != s {
            return Err(Error::DimensionMismatch {
                context: "transition matrix",
                expected: s,
                got: transition.ncols(),
            });
        }
        for i in 0..s {
            let row_sum: f64 = transition.row(i).iter().sum();
            if (row_sum - 1.0).abs() > NORMALIZATION_TOL
                || transition.row(i).iter().any(|&p| p < 0.0)
            {
                return Err(Error::InvalidParameter {
                    name: "transition",
                    reason: format!("row {i} is not a probability distribution"),
                });
            }
        }
        let mut rows = Vec::with_capacity(likelihoods.len());
        for (z, lik) in likelihoods.into_iter().enumerate() {
            if lik.len() != s {
                return Err(Error::DimensionMismatch {
                    context: "likelihood vector",
                    expected: s,
                    got: lik.len(),
                });
            }
            if lik.iter().any(|&v| v < 0.0) || lik.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidParameter {
                    name: "likelihoods",
                    reason: format!("observation {z} must be nonnegative and not all zero"),
                });
            }
            rows.push(DVector::from_vec(lik));
        }
        Ok(Self {
            transition,
            likelihoods: rows,
        })
    }

    pub fn states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn likelihood(&self, observation: usize) -> &DVector<f64> {
        &self.likelihoods[observation]
    }

    pub fn num_observations(&self) -> usize {
        self.likelihoods.len()
    }
}

/// Chapman-Kolmogorov prediction: p' = Tᵀp, renormalized.
pub fn bayes_predict(d: &DiscreteDist, m: &DiscreteModel) -> Result<DiscreteDist> {
    if d.len() != m.states() {
        return Err(Error::DimensionMismatch {
            context: "bayes_predict",
            expected: m.states(),
            got: d.len(),
        });
    }
    Ok(DiscreteDist::renormalized(
        m.transition.transpose() * &d.probs,
    ))
}

/// Bayes rule: p' ∝ likelihood ⊙ p.
pub fn bayes_update(d: &DiscreteDist, likelihood: &DVector<f64>) -> Result<DiscreteDist> {
    if d.len() != likelihood.len() {
        return Err(Error::DimensionMismatch {
            context: "bayes_update",
            expected: d.len(),
            got: likelihood.len(),
        });
    }
    let weighted = d.probs.component_mul(likelihood);
    let total: f64 = weighted.iter().sum();
    if total <= 0.0 {
        return Err(Error::MeasurementIncompatibleWithSupport);
    }
    Ok(DiscreteDist::renormalized(weighted))
}

/// Log-opinion pool with equal weights 1/m: the normalized pointwise
/// geometric mean. States where any input vanishes pool to zero; if every
/// state vanishes the supports are pairwise disjoint and pooling fails.
pub fn logop_pool(dists: &[DiscreteDist]) -> Result<DiscreteDist> {
    let first = dists.first().ok_or(Error::InvalidParameter {
        name: "dists",
        reason: "pool of zero distributions".into(),
    })?;
    let s = first.len();
    let m = dists.len() as f64;
    let mut log_mean = vec![0.0_f64; s];
    let mut alive = vec![true; s];
    for d in dists {
        if d.len() != s {
            return Err(Error::DimensionMismatch {
                context: "logop_pool",
                expected: s,
                got: d.len(),
            });
        }
        for (i, &p) in d.probs.iter().enumerate() {
            if p == 0.0 {
                alive[i] = false;
            } else if alive[i] {
                log_mean[i] += p.ln() / m;
            }
        }
    }
    let max_log = log_mean
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_log == f64::NEG_INFINITY {
        return Err(Error::ZeroPoolMass);
    }
    let weights: Vec<f64> = log_mean
        .iter()
        .zip(&alive)
        .map(|(&l, &a)| if a { (l - max_log).exp() } else { 0.0 })
        .collect();
    DiscreteDist::from_weights(weights)
}

/// Discrete KL divergence Σ pᵢ ln(pᵢ/qᵢ) with the 0·ln(0/·) = 0 convention.
/// Returns `f64::INFINITY` when p puts mass where q has none; that is a
/// legitimate infinite-divergence result, not an error.
pub fn kl_discrete(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "kl_discrete",
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut total = 0.0;
    for (pi, qi) in p.probs.iter().zip(q.probs.iter()) {
        if *pi > 0.0 {
            if *qi == 0.0 {
                return Ok(f64::INFINITY);
            }
            total += pi * (pi.ln() - qi.ln());
        }
    }
    Ok(total.max(0.0))
}

/// One agent of the finite-state censored filter: the fused-track
/// prediction and the unfused shadow prediction.
#[derive(Debug, Clone)]
pub struct DiscreteNode {
    pub fused: DiscreteDist,
    pub shadow: DiscreteDist,
}

impl DiscreteNode {
    /// Both tracks start from the same prior.
    pub fn new(prior: DiscreteDist) -> Self {
        Self {
            fused: prior.clone(),
            shadow: prior,
        }
    }
}

/// Per-node outcome of one synchronous step.
#[derive(Debug, Clone)]
pub struct DiscreteStepOutcome {
    pub posterior: DiscreteDist,
    pub transmitted: bool,
    pub voi: f64,
}

/// One synchronous step of the censored finite-state filter over a fixed
/// communication snapshot. `in_neighbors[i]` lists the nodes whose
/// transmissions node i can hear; `observations[i]` indexes into the
/// model's likelihood table. Per node: update with the local observation,
/// transmit when KL(posterior ‖ shadow) ≥ gamma, pool the posteriors heard,
/// then form the unfused (shadow) and fused predictions.
pub fn discrete_voi_step(
    nodes: &[DiscreteNode],
    model: &DiscreteModel,
    observations: &[Option<usize>],
    in_neighbors: &[Vec<usize>],
    gamma: f64,
) -> Result<(Vec<DiscreteNode>, Vec<DiscreteStepOutcome>)> {
    let n = nodes.len();
    if observations.len() != n {
        return Err(Error::DimensionMismatch {
            context: "discrete_voi_step observations",
            expected: n,
            got: observations.len(),
        });
    }
    if in_neighbors.len() != n {
        return Err(Error::DimensionMismatch {
            context: "discrete_voi_step neighborhoods",
            expected: n,
            got: in_neighbors.len(),
        });
    }

    let mut outcomes = Vec::with_capacity(n);
    for (node, obs) in nodes.iter().zip(observations) {
        let posterior = match obs {
            Some(z) => bayes_update(&node.fused, model.likelihood(*z))?,
            None => node.fused.clone(),
        };
        let voi = kl_discrete(&posterior, &node.shadow)?;
        outcomes.push(DiscreteStepOutcome {
            transmitted: voi >= gamma,
            posterior,
            voi,
        });
    }

    let mut next = Vec::with_capacity(n);
    for (i, outcome) in outcomes.iter().enumerate() {
        let mut pool = vec![outcome.posterior.clone()];
        for &j in &in_neighbors[i] {
            if j == i {
                return Err(Error::DuplicateSender { sender: j });
            }
            if outcomes[j].transmitted {
                pool.push(outcomes[j].posterior.clone());
            }
        }
        let pooled = logop_pool(&pool)?;
        next.push(DiscreteNode {
            shadow: bayes_predict(&outcome.posterior, model)?,
            fused: bayes_predict(&pooled, model)?,
        });
    }
    Ok((next, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dist(v: Vec<f64>) -> DiscreteDist {
        DiscreteDist::new(v).unwrap()
    }

    fn identity_model(states: usize) -> DiscreteModel {
        DiscreteModel::new(DMatrix::identity(states, states), vec![]).unwrap()
    }

    #[test]
    fn predict_identity_transition() {
        let d = dist(vec![0.4, 0.6]);
        let out = bayes_predict(&d, &identity_model(2)).unwrap();
        assert_relative_eq!(out.probs(), d.probs(), epsilon = 1e-15);
    }

    #[test]
    fn predict_uniform_stationary_under_doubly_stochastic() {
        let t = DMatrix::from_row_slice(3, 3, &[0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]);
        let m = DiscreteModel::new(t, vec![]).unwrap();
        let d = DiscreteDist::uniform(3);
        let out = bayes_predict(&d, &m).unwrap();
        assert_relative_eq!(out.probs(), d.probs(), epsilon = 1e-15);
    }

    #[test]
    fn predict_hand_example() {
        let t = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let m = DiscreteModel::new(t, vec![]).unwrap();
        let out = bayes_predict(&dist(vec![1.0, 0.0]), &m).unwrap();
        assert_relative_eq!(out.probs()[0], 0.9, epsilon = 1e-15);
        assert_relative_eq!(out.probs()[1], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn update_uniform_likelihood_is_identity() {
        let d = dist(vec![0.3, 0.7]);
        let out = bayes_update(&d, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(out.probs(), d.probs(), epsilon = 1e-15);
    }

    #[test]
    fn update_hand_example() {
        let out = bayes_update(&dist(vec![0.5, 0.5]), &DVector::from_vec(vec![0.8, 0.2])).unwrap();
        assert_relative_eq!(out.probs()[0], 0.8, epsilon = 1e-15);
        assert_relative_eq!(out.probs()[1], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn update_disjoint_support_errors() {
        let err = bayes_update(&dist(vec![1.0, 0.0]), &DVector::from_vec(vec![0.0, 1.0]))
            .unwrap_err();
        assert!(matches!(err, Error::MeasurementIncompatibleWithSupport));
    }

    #[test]
    fn pool_identical_inputs_is_fixed_point() {
        let d = dist(vec![0.2, 0.3, 0.5]);
        let out = logop_pool(&[d.clone(), d.clone(), d.clone()]).unwrap();
        assert_relative_eq!(out.probs(), d.probs(), epsilon = 1e-12);
    }

    #[test]
    fn pool_hand_example() {
        let out = logop_pool(&[dist(vec![0.5, 0.5]), dist(vec![0.8, 0.2])]).unwrap();
        // ∝ [√0.40, √0.10] → [2/3, 1/3]
        assert_relative_eq!(out.probs()[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(out.probs()[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn pool_disjoint_supports_errors() {
        let err = logop_pool(&[dist(vec![1.0, 0.0]), dist(vec![0.0, 1.0])]).unwrap_err();
        assert!(matches!(err, Error::ZeroPoolMass));
    }

    #[test]
    fn pool_permutation_invariant() {
        let a = dist(vec![0.1, 0.2, 0.7]);
        let b = dist(vec![0.5, 0.25, 0.25]);
        let c = dist(vec![0.3, 0.4, 0.3]);
        let abc = logop_pool(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let cba = logop_pool(&[c, b, a]).unwrap();
        assert_relative_eq!(abc.probs(), cba.probs(), epsilon = 1e-12);
    }

    #[test]
    fn kl_discrete_values() {
        let p = dist(vec![1.0, 0.0]);
        let q = dist(vec![0.5, 0.5]);
        assert_relative_eq!(kl_discrete(&p, &p).unwrap(), 0.0);
        assert_relative_eq!(kl_discrete(&p, &q).unwrap(), 2.0_f64.ln(), epsilon = 1e-12);
        assert!(kl_discrete(&q, &p).unwrap().is_infinite());
    }

    fn observation_model() -> DiscreteModel {
        // Two states, two observations; observation z matches state x
        // with probability 0.8.
        DiscreteModel::new(
            DMatrix::identity(2, 2),
            vec![vec![0.8, 0.2], vec![0.2, 0.8]],
        )
        .unwrap()
    }

    #[test]
    fn voi_step_single_node_matches_local_filter() {
        let model = observation_model();
        let mut node = DiscreteNode::new(DiscreteDist::uniform(2));
        let mut reference = DiscreteDist::uniform(2);
        for z in [0usize, 0, 1, 0] {
            let (next, outcomes) = discrete_voi_step(
                std::slice::from_ref(&node),
                &model,
                &[Some(z)],
                &[vec![]],
                0.1,
            )
            .unwrap();
            let post = bayes_update(&reference, model.likelihood(z)).unwrap();
            assert_relative_eq!(outcomes[0].posterior.probs(), post.probs(), epsilon = 1e-12);
            reference = bayes_predict(&post, &model).unwrap();
            node = next.into_iter().next().unwrap();
            assert_relative_eq!(node.fused.probs(), reference.probs(), epsilon = 1e-12);
            assert_relative_eq!(node.shadow.probs(), reference.probs(), epsilon = 1e-12);
        }
    }

    #[test]
    fn voi_step_infinite_gamma_never_transmits() {
        let model = observation_model();
        let nodes = vec![
            DiscreteNode::new(dist(vec![0.9, 0.1])),
            DiscreteNode::new(dist(vec![0.1, 0.9])),
        ];
        let (next, outcomes) = discrete_voi_step(
            &nodes,
            &model,
            &[Some(0), Some(1)],
            &[vec![1], vec![0]],
            f64::INFINITY,
        )
        .unwrap();
        assert!(outcomes.iter().all(|o| !o.transmitted));
        for (node, outcome) in next.iter().zip(&outcomes) {
            let expected = bayes_predict(&outcome.posterior, &model).unwrap();
            assert_relative_eq!(node.fused.probs(), expected.probs(), epsilon = 1e-12);
            assert_relative_eq!(node.shadow.probs(), expected.probs(), epsilon = 1e-12);
        }
    }

    #[test]
    fn voi_step_ring_consensus_under_zero_gamma() {
        // Five nodes on a ring, no observations, identity dynamics:
        // repeated pooling drives all beliefs together. The horizon was
        // found empirically and then pinned.
        let model = identity_model(3);
        let priors = [
            vec![0.80, 0.15, 0.05],
            vec![0.10, 0.80, 0.10],
            vec![0.05, 0.15, 0.80],
            vec![0.40, 0.40, 0.20],
            vec![0.25, 0.50, 0.25],
        ];
        let mut nodes: Vec<DiscreteNode> = priors
            .iter()
            .map(|p| DiscreteNode::new(dist(p.clone())))
            .collect();
        let neighbors: Vec<Vec<usize>> = (0..5).map(|i| vec![(i + 4) % 5, (i + 1) % 5]).collect();
        let observations = vec![None; 5];
        let mut last_spread = f64::INFINITY;
        for step in 0..60 {
            let (next, _) =
                discrete_voi_step(&nodes, &model, &observations, &neighbors, 0.0).unwrap();
            nodes = next;
            let mut spread = 0.0_f64;
            for i in 0..5 {
                for j in 0..5 {
                    if i != j {
                        spread = spread.max(kl_discrete(&nodes[i].fused, &nodes[j].fused).unwrap());
                    }
                }
            }
            if step >= 5 {
                assert!(
                    spread <= last_spread + 1e-12,
                    "spread not monotone at step {step}: {spread} > {last_spread}"
                );
            }
            last_spread = spread;
        }
        assert!(last_spread < 1e-6, "final spread {last_spread}");
    }
}
