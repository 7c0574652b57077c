//! Ground-truth target simulation, node deployment, and the scenario
//! configuration file format.
//!
//! The target follows a nearly-constant-velocity model
//! x = [x, ẋ, y, ẏ], x' = Ax + w, w ~ N(0, Q), with optional maneuver
//! events that overwrite the velocity components of the true state.
//! Agents keep the plain NCV model; maneuvers are invisible to them.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::netsim::LinkModel;
use crate::node::Dynamics;
use crate::sensing::{SensorKind, SensorSpec, STATE_DIM};

/// RNG stream ids, all derived from one master seed per run.
pub const PROCESS_NOISE_STREAM: u64 = 0;
pub const SENSOR_STREAM_BASE: u64 = 100;
/// Node placement draws come from the separate placement seed so that
/// reseeding a run never moves the nodes.
pub const PLACEMENT_STREAM: u64 = 1;

/// Nearly-constant-velocity model: A has Δ in the position-velocity
/// couplings and Q is q_scale times the block [[Δ³/3, Δ²/2], [Δ²/2, Δ]]
/// per axis.
#[derive(Debug, Clone)]
pub struct NcvModel {
    pub delta: f64,
    pub q_scale: f64,
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

/// Construct the NCV model for a sampling interval. `q_scale` of zero is
/// allowed and yields noiseless dynamics.
pub fn build_ncv(delta: f64, q_scale: f64) -> Result<NcvModel> {
    if delta <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "delta",
            reason: "sampling interval must be positive".into(),
        });
    }
    if q_scale < 0.0 {
        return Err(Error::InvalidParameter {
            name: "q_scale",
            reason: "process noise scale must be nonnegative".into(),
        });
    }
    let d = delta;
    let a = DMatrix::from_row_slice(
        STATE_DIM,
        STATE_DIM,
        &[
            1.0, d, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, d, //
            0.0, 0.0, 0.0, 1.0,
        ],
    );
    let (d3, d2) = (d * d * d / 3.0, d * d / 2.0);
    let q = DMatrix::from_row_slice(
        STATE_DIM,
        STATE_DIM,
        &[
            d3, d2, 0.0, 0.0, //
            d2, d, 0.0, 0.0, //
            0.0, 0.0, d3, d2, //
            0.0, 0.0, d2, d,
        ],
    ) * q_scale;
    if q_scale > 0.0 && Cholesky::new(q.clone()).is_none() {
        return Err(Error::NotPositiveDefinite { name: "Q" });
    }
    Ok(NcvModel {
        delta,
        q_scale,
        a,
        q,
    })
}

impl NcvModel {
    pub fn dynamics(&self) -> Dynamics {
        Dynamics::new(self.a.clone(), self.q.clone()).expect("NCV matrices are square")
    }
}

/// Velocity override applied to the true state at a given step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ManeuverEvent {
    pub step: usize,
    pub vx: f64,
    pub vy: f64,
}

/// Simulate the true trajectory for `horizon` steps (states x_0..x_{h-1}).
/// At each maneuver step the velocity components of the stored state are
/// overwritten before propagation.
pub fn simulate_truth(
    model: &NcvModel,
    initial: &DVector<f64>,
    maneuvers: &[ManeuverEvent],
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<DVector<f64>> {
    let noise_chol = if model.q_scale > 0.0 {
        Some(Cholesky::new(model.q.clone()).expect("Q validated PD").l())
    } else {
        None
    };
    let apply_maneuver = |state: &mut DVector<f64>, step: usize| {
        for ev in maneuvers {
            if ev.step == step {
                state[1] = ev.vx;
                state[3] = ev.vy;
            }
        }
    };
    let mut states = Vec::with_capacity(horizon);
    let mut current = initial.clone();
    apply_maneuver(&mut current, 0);
    states.push(current.clone());
    for step in 1..horizon {
        let mut next = &model.a * &current;
        if let Some(l) = &noise_chol {
            let z = DVector::from_fn(STATE_DIM, |_, _| {
                rand_distr::StandardNormal.sample(rng)
            });
            next += l * z;
        }
        apply_maneuver(&mut next, step);
        states.push(next.clone());
        current = next;
    }
    states
}

use rand_distr::Distribution;

// ---------------------------------------------------------------------------
// Configuration file format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Voi,
    VoiNocov,
    Diffusion,
}

impl std::str::FromStr for FilterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voi" => Ok(FilterKind::Voi),
            "voi-nocov" => Ok(FilterKind::VoiNocov),
            "diffusion" => Ok(FilterKind::Diffusion),
            other => Err(Error::Config(format!(
                "unknown filter `{other}` (expected voi, voi-nocov, or diffusion)"
            ))),
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FilterKind::Voi => "voi",
            FilterKind::VoiNocov => "voi-nocov",
            FilterKind::Diffusion => "diffusion",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSection {
    pub horizon: usize,
    pub delta: f64,
    pub q_scale: f64,
    pub initial_state: [f64; STATE_DIM],
    pub seed: u64,
    #[serde(default = "default_placement_seed")]
    pub placement_seed: u64,
    #[serde(default)]
    pub maneuver: Vec<ManeuverEvent>,
}

fn default_placement_seed() -> u64 {
    7_777
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    /// Seeded uniform placement in a corridor of the given half-width
    /// around the nominal (noiseless) target trajectory. `standoff`
    /// forces each coordinate offset to at least that magnitude, keeping
    /// nodes off the path itself so bearing linearization never sees
    /// near-zero ranges.
    Corridor {
        half_width: f64,
        #[serde(default)]
        standoff: f64,
    },
    /// Seeded uniform placement over a rectangle.
    Rect {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    /// Explicit node list.
    Fixed { nodes: Vec<FixedNode> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedNode {
    pub x: f64,
    pub y: f64,
    pub kind: SensorKind,
    /// Optional RNG stream override so correlated sensors can be modeled.
    #[serde(default)]
    pub seed_stream: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeploymentSection {
    pub num_nodes: usize,
    pub sensing_radius: f64,
    /// TOA range noise std, meters.
    pub toa_noise_std: f64,
    /// DOA bearing noise std, degrees (converted to radians internally).
    pub doa_noise_std_deg: f64,
    /// Fraction of nodes carrying TOA sensors (rest are DOA) for the
    /// seeded placements; ignored for fixed placement.
    #[serde(default = "default_toa_fraction")]
    pub toa_fraction: f64,
    /// How modalities are distributed over the seeded placements:
    /// alternating mixes range and bearing sensors along the deployment,
    /// blocks groups each modality together.
    #[serde(default)]
    pub modality_layout: ModalityLayout,
    pub placement: Placement,
}

fn default_toa_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityLayout {
    #[default]
    Alternate,
    Blocks,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterSection {
    pub kind: FilterKind,
    pub gamma: f64,
    pub prior_eps: f64,
    /// Initial mean guess shared by all agents; defaults to the true
    /// initial state (a known deployment region).
    #[serde(default)]
    pub prior_guess: Option<[f64; STATE_DIM]>,
    /// Process-noise scale of the agents' motion model. Defaults to the
    /// truth scale; setting it higher makes the filters conservative,
    /// which is the consistency-preserving direction.
    #[serde(default)]
    pub q_scale: Option<f64>,
    /// Bearing measurements are dropped while the predicted bearing
    /// standard deviation √(HP̃Hᵀ) exceeds this many radians: a wrapped
    /// innovation is only linearizable when the predicted bearing is
    /// meaningfully localized on the circle.
    #[serde(default = "default_doa_gate_rad")]
    pub doa_gate_rad: f64,
}

fn default_doa_gate_rad() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub deployment: DeploymentSection,
    pub filter: FilterSection,
    pub link: LinkModel,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if s.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if s.delta <= 0.0 {
            return Err(Error::Config("delta must be positive".into()));
        }
        if s.q_scale < 0.0 {
            return Err(Error::Config("q_scale must be nonnegative".into()));
        }
        for ev in &s.maneuver {
            if ev.step >= s.horizon {
                return Err(Error::Config(format!(
                    "maneuver step {} outside horizon {}",
                    ev.step, s.horizon
                )));
            }
        }
        let d = &self.deployment;
        if d.num_nodes == 0 {
            return Err(Error::Config("num_nodes must be at least 1".into()));
        }
        if d.sensing_radius <= 0.0 {
            return Err(Error::Config("sensing_radius must be positive".into()));
        }
        if d.toa_noise_std <= 0.0 || d.doa_noise_std_deg <= 0.0 {
            return Err(Error::Config("sensor noise stds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&d.toa_fraction) {
            return Err(Error::Config("toa_fraction must be in [0, 1]".into()));
        }
        match &d.placement {
            Placement::Corridor { half_width, .. } if *half_width <= 0.0 => {
                return Err(Error::Config("corridor half_width must be positive".into()));
            }
            Placement::Rect {
                x_min,
                x_max,
                y_min,
                y_max,
            } if x_min >= x_max || y_min >= y_max => {
                return Err(Error::Config("rect bounds must be ordered".into()));
            }
            Placement::Fixed { nodes } => {
                if nodes.len() != d.num_nodes {
                    return Err(Error::Config(format!(
                        "fixed placement lists {} nodes, num_nodes is {}",
                        nodes.len(),
                        d.num_nodes
                    )));
                }
                if nodes.iter().all(|n| n.kind == SensorKind::None) {
                    return Err(Error::Config("at least one node must sense".into()));
                }
            }
            _ => {}
        }
        let f = &self.filter;
        if f.gamma < 0.0 || f.gamma.is_nan() {
            return Err(Error::Config("gamma must be nonnegative".into()));
        }
        if f.prior_eps <= 0.0 {
            return Err(Error::Config("prior_eps must be positive".into()));
        }
        if f.q_scale.is_some_and(|q| q < 0.0) {
            return Err(Error::Config("filter q_scale must be nonnegative".into()));
        }
        if f.doa_gate_rad <= 0.0 {
            return Err(Error::Config("doa_gate_rad must be positive".into()));
        }
        self.link.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Truth-side NCV model.
    pub fn ncv(&self) -> Result<NcvModel> {
        build_ncv(self.scenario.delta, self.scenario.q_scale)
    }

    /// Filter-side NCV model (possibly inflated process noise).
    pub fn filter_ncv(&self) -> Result<NcvModel> {
        build_ncv(
            self.scenario.delta,
            self.filter.q_scale.unwrap_or(self.scenario.q_scale),
        )
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.scenario.initial_state)
    }

    pub fn prior_guess(&self) -> DVector<f64> {
        DVector::from_row_slice(
            &self
                .filter
                .prior_guess
                .unwrap_or(self.scenario.initial_state),
        )
    }

    /// Dynamics used by the agents.
    pub fn dynamics(&self) -> Result<Arc<Dynamics>> {
        Ok(Arc::new(self.filter_ncv()?.dynamics()))
    }
}

/// Concrete node deployment: positions, sensor specs, and the RNG stream
/// id feeding each sensor's noise.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub positions: Vec<(f64, f64)>,
    pub sensors: Vec<SensorSpec>,
    pub sensor_streams: Vec<u64>,
}

/// Build the deployment from the config. Seeded placements draw from the
/// placement seed only, so run seeds never move the nodes.
pub fn build_deployment(cfg: &ScenarioConfig) -> Result<Deployment> {
    let d = &cfg.deployment;
    let doa_noise_rad = d.doa_noise_std_deg.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.scenario.placement_seed);
    rng.set_stream(PLACEMENT_STREAM);

    let mut positions = Vec::with_capacity(d.num_nodes);
    let mut kinds = Vec::with_capacity(d.num_nodes);
    match &d.placement {
        Placement::Fixed { nodes } => {
            for node in nodes {
                positions.push((node.x, node.y));
                kinds.push(node.kind);
            }
        }
        Placement::Rect {
            x_min,
            x_max,
            y_min,
            y_max,
        } => {
            for _ in 0..d.num_nodes {
                positions.push((
                    rng.random_range(*x_min..*x_max),
                    rng.random_range(*y_min..*y_max),
                ));
            }
            kinds = seeded_kinds(d);
        }
        Placement::Corridor {
            half_width,
            standoff,
        } => {
            if *standoff < 0.0 || standoff >= half_width {
                return Err(Error::Config(
                    "corridor standoff must be in [0, half_width)".into(),
                ));
            }
            let nominal = {
                let model = build_ncv(cfg.scenario.delta, 0.0)?;
                // The placement stream is independent of the run streams,
                // and with q_scale = 0 no draws are consumed anyway.
                let mut zero_rng = ChaCha8Rng::seed_from_u64(0);
                simulate_truth(
                    &model,
                    &cfg.initial_state(),
                    &cfg.scenario.maneuver,
                    cfg.scenario.horizon,
                    &mut zero_rng,
                )
            };
            // Stratified along the nominal path: one node per segment,
            // random within it, so random clumping cannot open sensing
            // gaps much wider than a segment. The lateral offset is a
            // signed magnitude from the standoff band.
            let segment = nominal.len() as f64 / d.num_nodes as f64;
            for i in 0..d.num_nodes {
                let along =
                    ((i as f64 + rng.random_range(0.0..1.0)) * segment) as usize;
                let base = &nominal[along.min(nominal.len() - 1)];
                let offset = |rng: &mut ChaCha8Rng| {
                    let magnitude = rng.random_range(*standoff..*half_width);
                    let sign = if rng.random_range(0.0..1.0) < 0.5 {
                        -1.0
                    } else {
                        1.0
                    };
                    magnitude * sign
                };
                positions.push((base[0] + offset(&mut rng), base[2] + offset(&mut rng)));
            }
            kinds = seeded_kinds(d);
        }
    }

    let mut sensors = Vec::with_capacity(d.num_nodes);
    let mut sensor_streams = Vec::with_capacity(d.num_nodes);
    for (i, (&pos, &kind)) in positions.iter().zip(&kinds).enumerate() {
        let noise = match kind {
            SensorKind::Toa => d.toa_noise_std,
            SensorKind::Doa => doa_noise_rad,
            SensorKind::None => 1.0,
        };
        sensors.push(SensorSpec::new(kind, pos, noise, d.sensing_radius)?);
        let stream = match &d.placement {
            Placement::Fixed { nodes } => nodes[i]
                .seed_stream
                .unwrap_or(SENSOR_STREAM_BASE + i as u64),
            _ => SENSOR_STREAM_BASE + i as u64,
        };
        sensor_streams.push(stream);
    }
    Ok(Deployment {
        positions,
        sensors,
        sensor_streams,
    })
}

fn seeded_kinds(d: &DeploymentSection) -> Vec<SensorKind> {
    let frac = d.toa_fraction;
    match d.modality_layout {
        // Alternating mixes modalities along the deployment so nearby
        // sensors complement each other geometrically.
        ModalityLayout::Alternate => (0..d.num_nodes)
            .map(|i| {
                let before = ((i as f64) * frac).floor();
                let after = ((i as f64 + 1.0) * frac).floor();
                if after > before {
                    SensorKind::Toa
                } else {
                    SensorKind::Doa
                }
            })
            .collect(),
        ModalityLayout::Blocks => {
            let toa_count = (frac * d.num_nodes as f64).round() as usize;
            (0..d.num_nodes)
                .map(|i| {
                    if i < toa_count {
                        SensorKind::Toa
                    } else {
                        SensorKind::Doa
                    }
                })
                .collect()
        }
    }
}
