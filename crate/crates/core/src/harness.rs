//! Experiment orchestration: the closed simulation loop (truth → sensing
//! → update/censor → delivery → fuse/predict), per-step records, metric
//! aggregation, censoring-level sweeps, and CSV emission.
//!
//! A single experiment is sequential and fully determined by its config
//! and seed. Sweep points are independent and run in parallel, with
//! results reported in input order.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{self, DiffusionNodeState};
use crate::error::{Error, Result};
use crate::gaussian::MeasurementContribution;
use crate::netsim::{evaluate_links, LinkRngs, NetworkSnapshot};
use crate::node::{BroadcastMessage, NodeState};
use crate::scenario::{
    build_deployment, simulate_truth, FilterKind, ScenarioConfig, PROCESS_NOISE_STREAM,
};
use crate::sensing::{self, Measurement};

/// Fraction of the horizon discarded before "asymptotic" statistics.
pub const BURN_IN_FRACTION: f64 = 0.2;

/// One node, one step.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub node_id: usize,
    pub transmitted: bool,
    /// Censoring statistic: KL in nats for the VoI filter, ½‖Δx‖² for the
    /// mean-distance variants.
    pub voi_value: f64,
    pub bytes_sent: usize,
    /// Euclidean position error of this node's posterior, meters.
    pub pos_error_m: f64,
    /// Trace of the posterior covariance over the position components.
    pub cov_trace_pos: f64,
}

/// Aggregates over one run.
#[derive(Debug, Clone)]
pub struct Metrics {
    /// √(mean over nodes of squared position error), one entry per step.
    pub per_step_rmse: Vec<f64>,
    /// Cumulative mean of `per_step_rmse`.
    pub running_avg_rmse: Vec<f64>,
    /// Fraction of nodes transmitting, one entry per step.
    pub per_step_access: Vec<f64>,
    pub mean_rmse: f64,
    /// Mean per-step RMSE over the post-burn-in window.
    pub asymptotic_rmse: f64,
    /// Post-burn-in RMS error of the best and worst individual node.
    pub rmse_best_node: f64,
    pub rmse_worst_node: f64,
    pub mean_medium_access: f64,
    pub total_bytes: u64,
    /// total bytes × 8 / (horizon × Δ) / 1000.
    pub kbps: f64,
}

/// Flat one-row summary written to summary.csv.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub filter: String,
    pub gamma: f64,
    pub seed: u64,
    pub num_nodes: usize,
    pub horizon: usize,
    pub delta: f64,
    pub mean_rmse: f64,
    pub asymptotic_rmse: f64,
    pub rmse_best_node: f64,
    pub rmse_worst_node: f64,
    pub mean_medium_access: f64,
    pub total_bytes: u64,
    pub kbps: f64,
}

/// A finished run: the raw records plus their aggregation.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub metrics: Metrics,
}

impl RunOutput {
    pub fn summary(&self, cfg: &ScenarioConfig) -> Summary {
        Summary {
            filter: cfg.filter.kind.to_string(),
            gamma: cfg.filter.gamma,
            seed: cfg.scenario.seed,
            num_nodes: cfg.deployment.num_nodes,
            horizon: cfg.scenario.horizon,
            delta: cfg.scenario.delta,
            mean_rmse: self.metrics.mean_rmse,
            asymptotic_rmse: self.metrics.asymptotic_rmse,
            rmse_best_node: self.metrics.rmse_best_node,
            rmse_worst_node: self.metrics.rmse_worst_node,
            mean_medium_access: self.metrics.mean_medium_access,
            total_bytes: self.metrics.total_bytes,
            kbps: self.metrics.kbps,
        }
    }
}

fn position_error(mean: &nalgebra::DVector<f64>, truth: &nalgebra::DVector<f64>) -> f64 {
    (mean[0] - truth[0]).hypot(mean[2] - truth[2])
}

/// Run one experiment with the configured filter. Deterministic for a
/// fixed config: process noise, every sensor, and every directed link
/// draw from separate named RNG streams, so changing the censoring level
/// never perturbs unrelated randomness.
pub fn run_experiment(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.filter.kind {
        FilterKind::Voi | FilterKind::VoiNocov => run_info_filter(cfg),
        FilterKind::Diffusion => run_diffusion(cfg),
    }
}

struct SimSetup {
    truth: Vec<nalgebra::DVector<f64>>,
    deployment: crate::scenario::Deployment,
    sensor_rngs: Vec<ChaCha8Rng>,
    link_rngs: LinkRngs,
}

fn setup(cfg: &ScenarioConfig) -> Result<SimSetup> {
    let ncv = cfg.ncv()?;
    let deployment = build_deployment(cfg)?;
    let seed = cfg.scenario.seed;
    let mut process_rng = ChaCha8Rng::seed_from_u64(seed);
    process_rng.set_stream(PROCESS_NOISE_STREAM);
    let truth = simulate_truth(
        &ncv,
        &cfg.initial_state(),
        &cfg.scenario.maneuver,
        cfg.scenario.horizon,
        &mut process_rng,
    );
    let sensor_rngs = deployment
        .sensor_streams
        .iter()
        .map(|&stream| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            rng
        })
        .collect();
    let link_rngs = LinkRngs::new(seed, cfg.deployment.num_nodes);
    Ok(SimSetup {
        truth,
        deployment,
        sensor_rngs,
        link_rngs,
    })
}

fn gather_measurements(
    setup: &mut SimSetup,
    step: usize,
) -> Vec<Option<Measurement>> {
    let truth = &setup.truth[step];
    setup
        .deployment
        .sensors
        .iter()
        .zip(setup.sensor_rngs.iter_mut())
        .map(|(spec, rng)| sensing::measure(spec, truth, rng))
        .collect()
}

fn run_info_filter(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let n = cfg.deployment.num_nodes;
    let horizon = cfg.scenario.horizon;
    let dynamics = cfg.dynamics()?;
    let mut sim = setup(cfg)?;
    let guess = cfg.prior_guess();
    let nocov = cfg.filter.kind == FilterKind::VoiNocov;

    let mut states: Vec<NodeState> = (0..n)
        .map(|i| {
            NodeState::new(
                i,
                &guess,
                cfg.filter.prior_eps,
                cfg.filter.gamma,
                Arc::clone(&dynamics),
            )
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(n * horizon);
    for step in 0..horizon {
        let measurements = gather_measurements(&mut sim, step);
        let truth = &sim.truth[step];

        let mut outputs = Vec::with_capacity(n);
        for (i, state) in states.iter().enumerate() {
            let contribution = info_contribution(
                &sim.deployment.sensors[i],
                measurements[i].as_ref(),
                state,
                cfg.filter.doa_gate_rad,
            )
            .map_err(|e| e.at_step(step, i))?;
            let (next, out) = if nocov {
                baselines::nocov_update_and_decide(state, contribution.as_ref())
            } else {
                state.update_and_decide(contribution.as_ref())
            }
            .map_err(|e| e.at_step(step, i))?;
            outputs.push((next, out));
        }

        let transmitters: BTreeSet<usize> = outputs
            .iter()
            .enumerate()
            .filter(|(_, (_, out))| out.transmitted)
            .map(|(i, _)| i)
            .collect();
        let snapshot = evaluate_links(
            &sim.deployment.positions,
            &transmitters,
            &cfg.link,
            &mut sim.link_rngs,
        );

        let mut next_states = Vec::with_capacity(n);
        for (i, (updated, out)) in outputs.iter().enumerate() {
            let received = delivered_messages(&snapshot, &outputs, i);
            let next = updated
                .fuse_and_predict(&received)
                .map_err(|e| e.at_step(step, i))?;
            next_states.push(next);

            let bytes = out
                .message
                .as_ref()
                .map_or(0, BroadcastMessage::wire_bytes);
            records.push(StepRecord {
                step,
                node_id: i,
                transmitted: out.transmitted,
                voi_value: out.voi_value,
                bytes_sent: bytes,
                pos_error_m: position_error(out.posterior.mean(), truth),
                cov_trace_pos: out.posterior.cov()[(0, 0)] + out.posterior.cov()[(2, 2)],
            });
        }
        states = next_states;
    }

    let metrics = compute_metrics(&records, n, horizon, cfg.scenario.delta);
    Ok(RunOutput { records, metrics })
}

fn info_contribution(
    spec: &sensing::SensorSpec,
    measurement: Option<&Measurement>,
    state: &NodeState,
    doa_gate_rad: f64,
) -> Result<Option<MeasurementContribution>> {
    let Some(z) = measurement else {
        return Ok(None);
    };
    let prior = state.fused.to_moment()?;
    let lm = match sensing::linearize(spec, z, prior.mean()) {
        Ok(lm) => lm,
        // Prior mean inside the degeneracy ball: drop the measurement.
        Err(Error::DegenerateGeometry { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if bearing_unlocalized(spec, &lm, prior.cov(), doa_gate_rad) {
        return Ok(None);
    }
    Ok(Some(sensing::linear_contribution(&lm)?))
}

/// Linearization-validity gate for bearing sensors: when the predicted
/// bearing standard deviation is a sizable fraction of the circle, the
/// wrapped innovation no longer identifies which side of the sensor the
/// target is on, and the update could inject strongly weighted
/// wrong-direction information. Range updates degrade gracefully and are
/// never gated.
fn bearing_unlocalized(
    spec: &sensing::SensorSpec,
    lm: &sensing::LinearizedMeasurement,
    prior_cov: &nalgebra::DMatrix<f64>,
    doa_gate_rad: f64,
) -> bool {
    if spec.kind != crate::sensing::SensorKind::Doa {
        return false;
    }
    let bearing_var = (&lm.h * prior_cov * lm.h.transpose())[0];
    bearing_var > doa_gate_rad * doa_gate_rad
}

fn delivered_messages(
    snapshot: &NetworkSnapshot,
    outputs: &[(NodeState, crate::node::NodeStepOutput)],
    receiver: usize,
) -> Vec<BroadcastMessage> {
    snapshot
        .senders_heard_by(receiver)
        .into_iter()
        .filter_map(|s| outputs[s].1.message.clone())
        .collect()
}

fn run_diffusion(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let n = cfg.deployment.num_nodes;
    let horizon = cfg.scenario.horizon;
    let dynamics = cfg.dynamics()?;
    let mut sim = setup(cfg)?;
    let guess = cfg.prior_guess();

    let mut states: Vec<DiffusionNodeState> = (0..n)
        .map(|i| {
            DiffusionNodeState::new(
                i,
                &guess,
                cfg.filter.prior_eps,
                cfg.filter.gamma,
                Arc::clone(&dynamics),
            )
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(n * horizon);
    for step in 0..horizon {
        let measurements = gather_measurements(&mut sim, step);
        let truth = &sim.truth[step];

        let mut outputs = Vec::with_capacity(n);
        for (i, state) in states.iter().enumerate() {
            let obs = match measurements[i].as_ref() {
                Some(z) => {
                    match sensing::linearize(&sim.deployment.sensors[i], z, &state.mean) {
                        Ok(lm) => {
                            let spec = &sim.deployment.sensors[i];
                            if bearing_unlocalized(spec, &lm, &state.cov, cfg.filter.doa_gate_rad)
                            {
                                None
                            } else {
                                Some(lm)
                            }
                        }
                        Err(Error::DegenerateGeometry { .. }) => None,
                        Err(e) => return Err(e.at_step(step, i)),
                    }
                }
                None => None,
            };
            let (next, out) = state
                .update_and_decide(obs.as_ref())
                .map_err(|e| e.at_step(step, i))?;
            outputs.push((next, out));
        }

        let transmitters: BTreeSet<usize> = outputs
            .iter()
            .enumerate()
            .filter(|(_, (_, out))| out.transmitted)
            .map(|(i, _)| i)
            .collect();
        let snapshot = evaluate_links(
            &sim.deployment.positions,
            &transmitters,
            &cfg.link,
            &mut sim.link_rngs,
        );

        let mut next_states = Vec::with_capacity(n);
        for (i, (adapted, out)) in outputs.iter().enumerate() {
            let received: Vec<nalgebra::DVector<f64>> = snapshot
                .senders_heard_by(i)
                .into_iter()
                .filter_map(|s| outputs[s].1.message_mean.clone())
                .collect();
            let next = adapted
                .combine_and_predict(&received)
                .map_err(|e| e.at_step(step, i))?;
            next_states.push(next);

            let bytes = if out.transmitted {
                baselines::diffusion_message_bytes(adapted.mean.len())
            } else {
                0
            };
            records.push(StepRecord {
                step,
                node_id: i,
                transmitted: out.transmitted,
                voi_value: out.statistic,
                bytes_sent: bytes,
                pos_error_m: position_error(out.posterior.mean(), truth),
                cov_trace_pos: out.posterior.cov()[(0, 0)] + out.posterior.cov()[(2, 2)],
            });
        }
        states = next_states;
    }

    let metrics = compute_metrics(&records, n, horizon, cfg.scenario.delta);
    Ok(RunOutput { records, metrics })
}

/// Aggregate per-step network RMSE, running average, medium access,
/// per-node error bands and bandwidth from the raw records.
pub fn compute_metrics(
    records: &[StepRecord],
    num_nodes: usize,
    horizon: usize,
    delta: f64,
) -> Metrics {
    assert!(!records.is_empty(), "no records to aggregate");
    let burn_in = ((horizon as f64) * BURN_IN_FRACTION) as usize;

    let mut per_step_sq = vec![0.0_f64; horizon];
    let mut per_step_tx = vec![0usize; horizon];
    let mut per_node_sq = vec![0.0_f64; num_nodes];
    let mut per_node_count = vec![0usize; num_nodes];
    let mut total_bytes = 0u64;
    for r in records {
        per_step_sq[r.step] += r.pos_error_m * r.pos_error_m;
        if r.transmitted {
            per_step_tx[r.step] += 1;
        }
        total_bytes += r.bytes_sent as u64;
        if r.step >= burn_in {
            per_node_sq[r.node_id] += r.pos_error_m * r.pos_error_m;
            per_node_count[r.node_id] += 1;
        }
    }

    let per_step_rmse: Vec<f64> = per_step_sq
        .iter()
        .map(|&s| (s / num_nodes as f64).sqrt())
        .collect();
    let mut running_avg_rmse = Vec::with_capacity(horizon);
    let mut acc = 0.0;
    for (k, &v) in per_step_rmse.iter().enumerate() {
        acc += v;
        running_avg_rmse.push(acc / (k + 1) as f64);
    }
    let per_step_access: Vec<f64> = per_step_tx
        .iter()
        .map(|&t| t as f64 / num_nodes as f64)
        .collect();

    let mean_rmse = per_step_rmse.iter().sum::<f64>() / horizon as f64;
    let tail = &per_step_rmse[burn_in..];
    let asymptotic_rmse = tail.iter().sum::<f64>() / tail.len() as f64;
    let per_node_rms: Vec<f64> = per_node_sq
        .iter()
        .zip(&per_node_count)
        .map(|(&s, &c)| if c > 0 { (s / c as f64).sqrt() } else { 0.0 })
        .collect();
    let rmse_best_node = per_node_rms.iter().cloned().fold(f64::INFINITY, f64::min);
    let rmse_worst_node = per_node_rms.iter().cloned().fold(0.0, f64::max);
    let mean_medium_access = per_step_access.iter().sum::<f64>() / horizon as f64;
    let kbps = total_bytes as f64 * 8.0 / (horizon as f64 * delta) / 1000.0;

    Metrics {
        per_step_rmse,
        running_avg_rmse,
        per_step_access,
        mean_rmse,
        asymptotic_rmse,
        rmse_best_node,
        rmse_worst_node,
        mean_medium_access,
        total_bytes,
        kbps,
    }
}

/// One sweep point, averaged over the seeds of the run.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub asymptotic_rmse: f64,
    pub rmse_best_node: f64,
    pub rmse_worst_node: f64,
    pub mean_medium_access: f64,
    pub total_kbps: f64,
}

/// Outcome per sweep point; failures are recorded and the sweep continues.
#[derive(Debug)]
pub struct SweepOutcome {
    pub gamma: f64,
    pub point: Result<SweepPoint>,
}

/// Run the scenario once per (gamma, seed) and average over seeds. Points
/// are independent and execute in parallel; results keep input order.
/// Seeds count upward from the configured run seed.
pub fn run_sweep(cfg: &ScenarioConfig, gammas: &[f64], num_seeds: u64) -> Vec<SweepOutcome> {
    gammas
        .par_iter()
        .map(|&gamma| {
            let point = sweep_point(cfg, gamma, num_seeds);
            SweepOutcome { gamma, point }
        })
        .collect()
}

fn sweep_point(cfg: &ScenarioConfig, gamma: f64, num_seeds: u64) -> Result<SweepPoint> {
    if num_seeds == 0 {
        return Err(Error::Config("at least one seed per sweep point".into()));
    }
    let mut rmse = 0.0;
    let mut best = 0.0;
    let mut worst = 0.0;
    let mut access = 0.0;
    let mut kbps = 0.0;
    for s in 0..num_seeds {
        let mut point_cfg = cfg.clone();
        point_cfg.filter.gamma = gamma;
        point_cfg.scenario.seed = cfg.scenario.seed + s;
        let run = run_experiment(&point_cfg)?;
        rmse += run.metrics.asymptotic_rmse;
        best += run.metrics.rmse_best_node;
        worst += run.metrics.rmse_worst_node;
        access += run.metrics.mean_medium_access;
        kbps += run.metrics.kbps;
    }
    let m = num_seeds as f64;
    Ok(SweepPoint {
        gamma,
        asymptotic_rmse: rmse / m,
        rmse_best_node: best / m,
        rmse_worst_node: worst / m,
        mean_medium_access: access / m,
        total_kbps: kbps / m,
    })
}

/// Write steps.csv and summary.csv into `out_dir` (created if missing).
pub fn write_run_outputs(out_dir: &Path, cfg: &ScenarioConfig, run: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut steps = csv::Writer::from_path(out_dir.join("steps.csv"))?;
    for record in &run.records {
        steps.serialize(record)?;
    }
    steps.flush()?;

    let mut summary = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    summary.serialize(run.summary(cfg))?;
    summary.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow<'a> {
    gamma: f64,
    status: &'a str,
    asymptotic_rmse: Option<f64>,
    rmse_best_node: Option<f64>,
    rmse_worst_node: Option<f64>,
    mean_medium_access: Option<f64>,
    total_kbps: Option<f64>,
    error: String,
}

/// Write sweep.csv into `out_dir` (created if missing).
pub fn write_sweep_csv(out_dir: &Path, outcomes: &[SweepOutcome]) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("sweep.csv"))?;
    for outcome in outcomes {
        let row = match &outcome.point {
            Ok(p) => SweepRow {
                gamma: p.gamma,
                status: "ok",
                asymptotic_rmse: Some(p.asymptotic_rmse),
                rmse_best_node: Some(p.rmse_best_node),
                rmse_worst_node: Some(p.rmse_worst_node),
                mean_medium_access: Some(p.mean_medium_access),
                total_kbps: Some(p.total_kbps),
                error: String::new(),
            },
            Err(e) => SweepRow {
                gamma: outcome.gamma,
                status: "failed",
                asymptotic_rmse: None,
                rmse_best_node: None,
                rmse_worst_node: None,
                mean_medium_access: None,
                total_kbps: None,
                error: e.to_string(),
            },
        };
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
