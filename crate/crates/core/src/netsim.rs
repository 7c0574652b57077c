//! Seeded simulation of the lossy broadcast network: per-step link
//! success draws from a parametric distance/fading model, delivery
//! bookkeeping, and connectivity statistics over a window.
//!
//! Every directed node pair owns its own RNG stream, and every stream is
//! advanced once per step whether or not the pair's sender transmitted.
//! Link outcomes therefore stay aligned when censoring behavior changes,
//! so sweeps over the censoring level see the same channel realization.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RNG stream ids `LINK_STREAM_BASE + sender*n + receiver`.
pub const LINK_STREAM_BASE: u64 = 10_000;

/// Distance/fading link model. The per-step success probability of a
/// directed link at distance d is
/// `clamp(success_at_reference · (reference_distance/d)^path_loss_exponent · shadow, connectivity_floor, 1)`
/// where `shadow` is a log-normal draw with the given dB spread,
/// memoryless across steps and links.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkModel {
    pub reference_distance: f64,
    pub success_at_reference: f64,
    pub path_loss_exponent: f64,
    pub shadowing_std_db: f64,
    pub connectivity_floor: f64,
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &'static str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("probability {v} outside [0, 1]"),
                })
            } else {
                Ok(())
            }
        };
        prob("success_at_reference", self.success_at_reference)?;
        prob("connectivity_floor", self.connectivity_floor)?;
        if self.reference_distance <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "reference_distance",
                reason: "must be positive".into(),
            });
        }
        if self.path_loss_exponent <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "path_loss_exponent",
                reason: "must be positive".into(),
            });
        }
        if self.shadowing_std_db < 0.0 {
            return Err(Error::InvalidParameter {
                name: "shadowing_std_db",
                reason: "must be nonnegative".into(),
            });
        }
        Ok(())
    }

    /// All links always succeed; useful for degenerate test topologies.
    pub fn always_connected() -> Self {
        Self {
            reference_distance: 1.0,
            success_at_reference: 1.0,
            path_loss_exponent: 2.0,
            shadowing_std_db: 0.0,
            connectivity_floor: 1.0,
        }
    }
}

/// One independent ChaCha stream per directed pair.
pub struct LinkRngs {
    n: usize,
    rngs: Vec<ChaCha8Rng>,
}

impl LinkRngs {
    pub fn new(seed: u64, num_nodes: usize) -> Self {
        let mut rngs = Vec::with_capacity(num_nodes * num_nodes);
        for pair in 0..(num_nodes * num_nodes) as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(LINK_STREAM_BASE + pair);
            rngs.push(rng);
        }
        Self { n: num_nodes, rngs }
    }
}

/// Delivered-message map for one step: sender id → receivers that heard
/// it. Senders are exactly the transmitters of the step; self-delivery
/// never occurs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSnapshot {
    pub delivered: BTreeMap<usize, BTreeSet<usize>>,
    pub positions: Vec<(f64, f64)>,
}

impl NetworkSnapshot {
    pub fn receivers_of(&self, sender: usize) -> Option<&BTreeSet<usize>> {
        self.delivered.get(&sender)
    }

    /// Sorted sender ids whose message reached `receiver` this step.
    pub fn senders_heard_by(&self, receiver: usize) -> Vec<usize> {
        self.delivered
            .iter()
            .filter(|(_, rx)| rx.contains(&receiver))
            .map(|(&s, _)| s)
            .collect()
    }
}

/// Evaluate every directed link for one step and record deliveries from
/// the transmitting nodes. Each ordered pair consumes exactly one
/// shadowing draw and one Bernoulli draw per call regardless of the
/// transmitter set, which keeps runs with different censoring levels on
/// identical channel realizations. Deterministic given the seed.
pub fn evaluate_links(
    positions: &[(f64, f64)],
    transmitters: &BTreeSet<usize>,
    model: &LinkModel,
    rngs: &mut LinkRngs,
) -> NetworkSnapshot {
    let n = positions.len();
    assert_eq!(n, rngs.n, "LinkRngs sized for a different node count");
    let mut delivered: BTreeMap<usize, BTreeSet<usize>> = transmitters
        .iter()
        .map(|&t| (t, BTreeSet::new()))
        .collect();
    for sender in 0..n {
        for receiver in 0..n {
            if sender == receiver {
                continue;
            }
            let rng = &mut rngs.rngs[sender * n + receiver];
            let shadow_db = Normal::new(0.0, model.shadowing_std_db)
                .expect("validated std")
                .sample(rng);
            let draw: f64 = rng.random();
            if !transmitters.contains(&sender) {
                continue;
            }
            let (sx, sy) = positions[sender];
            let (rx, ry) = positions[receiver];
            let d = (sx - rx).hypot(sy - ry);
            let raw = if d > 0.0 {
                model.success_at_reference
                    * (model.reference_distance / d).powf(model.path_loss_exponent)
                    * 10f64.powf(shadow_db / 10.0)
            } else {
                f64::INFINITY
            };
            let p = raw.clamp(model.connectivity_floor, 1.0);
            if draw < p {
                delivered.get_mut(&sender).expect("inserted above").insert(receiver);
            }
        }
    }
    NetworkSnapshot {
        delivered,
        positions: positions.to_vec(),
    }
}

/// Connectivity summary over a window of snapshots.
#[derive(Debug, Clone)]
pub struct ConnectivityStats {
    /// Mean in-degree across nodes, one entry per step.
    pub per_step_mean_in_degree: Vec<f64>,
    /// Fraction of (node, step) pairs with no delivered link in or out.
    pub isolation_fraction: f64,
    /// Whether the union of delivered edges over the window forms a
    /// strongly connected digraph.
    pub union_strongly_connected: bool,
}

/// Summarize per-step in-degree, isolation, and whether the union graph
/// over the window is strongly connected.
pub fn neighborhood_trace(snapshots: &[NetworkSnapshot]) -> ConnectivityStats {
    assert!(!snapshots.is_empty(), "empty window");
    let n = snapshots[0].positions.len();
    let mut per_step_mean_in_degree = Vec::with_capacity(snapshots.len());
    let mut isolated_count = 0usize;
    let mut union_edges = vec![vec![false; n]; n];
    for snap in snapshots {
        let mut in_degree = vec![0usize; n];
        let mut out_degree = vec![0usize; n];
        for (&sender, receivers) in &snap.delivered {
            for &r in receivers {
                in_degree[r] += 1;
                out_degree[sender] += 1;
                union_edges[sender][r] = true;
            }
        }
        per_step_mean_in_degree
            .push(in_degree.iter().sum::<usize>() as f64 / n as f64);
        isolated_count += (0..n)
            .filter(|&i| in_degree[i] == 0 && out_degree[i] == 0)
            .count();
    }
    let isolation_fraction = isolated_count as f64 / (n * snapshots.len()) as f64;
    ConnectivityStats {
        per_step_mean_in_degree,
        isolation_fraction,
        union_strongly_connected: strongly_connected(&union_edges),
    }
}

fn strongly_connected(edges: &[Vec<bool>]) -> bool {
    let n = edges.len();
    if n == 0 {
        return false;
    }
    let reachable = |forward: bool| -> usize {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let connected = if forward { edges[u][v] } else { edges[v][u] };
                if connected && !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count
    };
    reachable(true) == n && reachable(false) == n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_transmit(n: usize) -> BTreeSet<usize> {
        (0..n).collect()
    }

    #[test]
    fn colocated_nodes_always_deliver() {
        let positions = vec![(0.0, 0.0), (0.0, 0.0)];
        let model = LinkModel {
            reference_distance: 100.0,
            success_at_reference: 0.5,
            path_loss_exponent: 2.0,
            shadowing_std_db: 6.0,
            connectivity_floor: 0.0,
        };
        let mut rngs = LinkRngs::new(1, 2);
        for _ in 0..50 {
            let snap = evaluate_links(&positions, &all_transmit(2), &model, &mut rngs);
            assert!(snap.receivers_of(0).unwrap().contains(&1));
            assert!(snap.receivers_of(1).unwrap().contains(&0));
        }
    }

    #[test]
    fn unit_floor_is_fully_connected() {
        let positions = vec![(0.0, 0.0), (5000.0, 0.0), (0.0, 9000.0)];
        let model = LinkModel {
            connectivity_floor: 1.0,
            ..LinkModel::always_connected()
        };
        let mut rngs = LinkRngs::new(2, 3);
        let snap = evaluate_links(&positions, &all_transmit(3), &model, &mut rngs);
        for t in 0..3 {
            assert_eq!(snap.receivers_of(t).unwrap().len(), 2);
        }
    }

    #[test]
    fn no_self_delivery_and_senders_subset_of_transmitters() {
        let positions = vec![(0.0, 0.0), (10.0, 0.0), (20.0, 0.0)];
        let model = LinkModel::always_connected();
        let mut rngs = LinkRngs::new(3, 3);
        let transmitters: BTreeSet<usize> = [1].into_iter().collect();
        let snap = evaluate_links(&positions, &transmitters, &model, &mut rngs);
        assert_eq!(snap.delivered.keys().copied().collect::<Vec<_>>(), vec![1]);
        assert!(!snap.receivers_of(1).unwrap().contains(&1));
    }

    #[test]
    fn deterministic_given_seed() {
        let positions = vec![(0.0, 0.0), (300.0, 0.0), (0.0, 800.0), (900.0, 900.0)];
        let model = LinkModel {
            reference_distance: 400.0,
            success_at_reference: 0.8,
            path_loss_exponent: 2.5,
            shadowing_std_db: 4.0,
            connectivity_floor: 0.05,
        };
        let run = || {
            let mut rngs = LinkRngs::new(7, 4);
            (0..20)
                .map(|_| evaluate_links(&positions, &all_transmit(4), &model, &mut rngs))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn draws_are_aligned_across_transmitter_sets() {
        // The same (sender, receiver, step) link outcome must not depend
        // on which other nodes transmitted earlier in the run.
        let positions = vec![(0.0, 0.0), (300.0, 0.0), (600.0, 0.0)];
        let model = LinkModel {
            reference_distance: 400.0,
            success_at_reference: 0.8,
            path_loss_exponent: 2.0,
            shadowing_std_db: 3.0,
            connectivity_floor: 0.1,
        };
        let everyone = all_transmit(3);
        let only_zero: BTreeSet<usize> = [0].into_iter().collect();

        let mut rngs_a = LinkRngs::new(11, 3);
        let mut rngs_b = LinkRngs::new(11, 3);
        for step in 0..30 {
            let a = evaluate_links(&positions, &everyone, &model, &mut rngs_a);
            let b = evaluate_links(&positions, &only_zero, &model, &mut rngs_b);
            assert_eq!(
                a.receivers_of(0),
                b.receivers_of(0),
                "node 0 delivery diverged at step {step}"
            );
        }
    }

    #[test]
    fn asymmetric_delivery_occurs() {
        let positions = vec![(0.0, 0.0), (450.0, 0.0)];
        let model = LinkModel {
            reference_distance: 400.0,
            success_at_reference: 0.6,
            path_loss_exponent: 2.0,
            shadowing_std_db: 4.0,
            connectivity_floor: 0.0,
        };
        let mut rngs = LinkRngs::new(5, 2);
        let mut saw_asymmetry = false;
        for _ in 0..200 {
            let snap = evaluate_links(&positions, &all_transmit(2), &model, &mut rngs);
            let fwd = snap.receivers_of(0).unwrap().contains(&1);
            let back = snap.receivers_of(1).unwrap().contains(&0);
            if fwd != back {
                saw_asymmetry = true;
                break;
            }
        }
        assert!(saw_asymmetry, "no asymmetric step in 200 draws");
    }

    #[test]
    fn trace_unit_floor_union_strongly_connected() {
        let positions = vec![(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)];
        let model = LinkModel {
            connectivity_floor: 1.0,
            ..LinkModel::always_connected()
        };
        let mut rngs = LinkRngs::new(9, 3);
        let snaps: Vec<_> = (0..3)
            .map(|_| evaluate_links(&positions, &all_transmit(3), &model, &mut rngs))
            .collect();
        let stats = neighborhood_trace(&snaps);
        assert!(stats.union_strongly_connected);
        assert_eq!(stats.isolation_fraction, 0.0);
        assert!(stats
            .per_step_mean_in_degree
            .iter()
            .all(|&d| (d - 2.0).abs() < 1e-12));
    }

    #[test]
    fn trace_zero_success_all_isolated() {
        let positions = vec![(0.0, 0.0), (100.0, 0.0)];
        let model = LinkModel {
            reference_distance: 1.0,
            success_at_reference: 0.0,
            path_loss_exponent: 2.0,
            shadowing_std_db: 0.0,
            connectivity_floor: 0.0,
        };
        let mut rngs = LinkRngs::new(13, 2);
        let snaps: Vec<_> = (0..5)
            .map(|_| evaluate_links(&positions, &all_transmit(2), &model, &mut rngs))
            .collect();
        let stats = neighborhood_trace(&snaps);
        assert!(!stats.union_strongly_connected);
        assert_eq!(stats.isolation_fraction, 1.0);
    }
}
