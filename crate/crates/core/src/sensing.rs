//! Range (TOA) and bearing (DOA) sensor models with limited sensing
//! radius, their linearization for the extended filter, and conversion of
//! measurements into additive information-form contributions.
//!
//! Bearing convention: the DOA observable is atan2(x − xⁱ, y − yⁱ), i.e.
//! the angle is measured from the +y axis toward +x. atan2 is used instead
//! of a bare arctangent so the full circle is covered without quadrant
//! ambiguity.

use nalgebra::{DVector, RowDVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{MeasurementContribution, MomentEstimate};

/// Linearization points closer than this to the sensor are treated as
/// out of range instead of producing unbounded Jacobians.
pub const DEGENERACY_RADIUS_M: f64 = 1e-6;

/// State layout used throughout the tracking scenario: [x, ẋ, y, ẏ].
pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Toa,
    Doa,
    /// Relay-only node without sensing capability.
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorSpec {
    pub kind: SensorKind,
    /// Sensor position (x, y) in meters.
    pub position: (f64, f64),
    /// Measurement noise std: meters for TOA, radians for DOA.
    pub noise_std: f64,
    pub sensing_radius: f64,
}

impl SensorSpec {
    pub fn new(
        kind: SensorKind,
        position: (f64, f64),
        noise_std: f64,
        sensing_radius: f64,
    ) -> Result<Self> {
        if kind != SensorKind::None && noise_std <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "noise_std",
                reason: "must be positive for sensing kinds".into(),
            });
        }
        if sensing_radius <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "sensing_radius",
                reason: "must be positive".into(),
            });
        }
        Ok(Self {
            kind,
            position,
            noise_std,
            sensing_radius,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Meters for TOA, radians in (−π, π] for DOA.
    pub value: f64,
    pub kind: SensorKind,
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut w = theta.rem_euclid(tau);
    if w > std::f64::consts::PI {
        w -= tau;
    }
    w
}

fn offsets(spec: &SensorSpec, state: &DVector<f64>) -> (f64, f64, f64) {
    let dx = state[0] - spec.position.0;
    let dy = state[2] - spec.position.1;
    (dx, dy, dx.hypot(dy))
}

/// Noiseless measurement function h(x), evaluated regardless of the
/// sensing radius. Errors inside the degeneracy ball.
pub fn measurement_function(spec: &SensorSpec, state: &DVector<f64>) -> Result<f64> {
    let (dx, dy, r) = offsets(spec, state);
    if r < DEGENERACY_RADIUS_M {
        return Err(Error::DegenerateGeometry {
            limit: DEGENERACY_RADIUS_M,
        });
    }
    match spec.kind {
        SensorKind::Toa => Ok(r),
        SensorKind::Doa => Ok(wrap_angle(dx.atan2(dy))),
        SensorKind::None => Err(Error::InvalidParameter {
            name: "kind",
            reason: "relay-only sensor has no measurement model".into(),
        }),
    }
}

/// Noiseless measurement with the sensing-radius gate applied: `None`
/// when the target is out of range or inside the degeneracy ball.
pub fn ideal_measurement(spec: &SensorSpec, true_state: &DVector<f64>) -> Option<f64> {
    let (_, _, r) = offsets(spec, true_state);
    if r > spec.sensing_radius || r < DEGENERACY_RADIUS_M || spec.kind == SensorKind::None {
        return None;
    }
    measurement_function(spec, true_state).ok()
}

/// Draw one noisy measurement, or `None` when the target is out of range.
pub fn measure<R: Rng + ?Sized>(
    spec: &SensorSpec,
    true_state: &DVector<f64>,
    rng: &mut R,
) -> Option<Measurement> {
    let ideal = ideal_measurement(spec, true_state)?;
    let noise = Normal::new(0.0, spec.noise_std).ok()?.sample(rng);
    let value = match spec.kind {
        SensorKind::Toa => ideal + noise,
        SensorKind::Doa => wrap_angle(ideal + noise),
        SensorKind::None => unreachable!("gated above"),
    };
    Some(Measurement {
        value,
        kind: spec.kind,
    })
}

/// Measurement Jacobian (1×4 row) at the linearization state.
///
/// TOA: [(x−xⁱ)/r, 0, (y−yⁱ)/r, 0]; DOA: [(y−yⁱ)/r², 0, −(x−xⁱ)/r², 0].
pub fn jacobian(spec: &SensorSpec, linearization_state: &DVector<f64>) -> Result<RowDVector<f64>> {
    let (dx, dy, r) = offsets(spec, linearization_state);
    if r < DEGENERACY_RADIUS_M {
        return Err(Error::DegenerateGeometry {
            limit: DEGENERACY_RADIUS_M,
        });
    }
    match spec.kind {
        SensorKind::Toa => Ok(RowDVector::from_vec(vec![dx / r, 0.0, dy / r, 0.0])),
        SensorKind::Doa => {
            let r2 = r * r;
            Ok(RowDVector::from_vec(vec![dy / r2, 0.0, -dx / r2, 0.0]))
        }
        SensorKind::None => Err(Error::InvalidParameter {
            name: "kind",
            reason: "relay-only sensor has no measurement model".into(),
        }),
    }
}

/// A scalar measurement reduced to linear form around a linearization
/// point: pseudo-measurement z̄ = (z − h(x̂)) + Hx̂ with row H and noise
/// variance R. The innovation is angle-wrapped for DOA before z̄ is formed.
#[derive(Debug, Clone)]
pub struct LinearizedMeasurement {
    pub h: RowDVector<f64>,
    pub pseudo_z: f64,
    pub noise_var: f64,
}

pub fn linearize(
    spec: &SensorSpec,
    z: &Measurement,
    linearization_mean: &DVector<f64>,
) -> Result<LinearizedMeasurement> {
    let h = jacobian(spec, linearization_mean)?;
    let predicted = measurement_function(spec, linearization_mean)?;
    let mut innovation = z.value - predicted;
    if spec.kind == SensorKind::Doa {
        innovation = wrap_angle(innovation);
    }
    let pseudo_z = innovation + (&h * linearization_mean)[0];
    Ok(LinearizedMeasurement {
        h,
        pseudo_z,
        noise_var: spec.noise_std * spec.noise_std,
    })
}

/// Information-form contribution of a linear scalar measurement:
/// i = HᵀR⁻¹z̄, I = HᵀR⁻¹H (rank one).
pub fn linear_contribution(lm: &LinearizedMeasurement) -> Result<MeasurementContribution> {
    let ht = lm.h.transpose();
    let inv_r = 1.0 / lm.noise_var;
    MeasurementContribution::new(&ht * (lm.pseudo_z * inv_r), &ht * &lm.h * inv_r)
}

/// Information-form contribution of one TOA/DOA measurement, linearized
/// at the mean of the supplied prior estimate.
pub fn contribution(
    spec: &SensorSpec,
    z: &Measurement,
    linearization: &MomentEstimate,
) -> Result<MeasurementContribution> {
    let lm = linearize(spec, z, linearization.mean())?;
    linear_contribution(&lm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::info_update;
    use crate::oracle;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, 1.0, y, -1.0])
    }

    fn toa_at_origin() -> SensorSpec {
        SensorSpec::new(SensorKind::Toa, (0.0, 0.0), 1.5, 1000.0).unwrap()
    }

    fn doa_at_origin() -> SensorSpec {
        SensorSpec::new(SensorKind::Doa, (0.0, 0.0), 0.0349, 1000.0).unwrap()
    }

    #[test]
    fn toa_three_four_five() {
        let z = ideal_measurement(&toa_at_origin(), &state(3.0, 4.0)).unwrap();
        assert_relative_eq!(z, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn doa_quarter_turn() {
        let z = ideal_measurement(&doa_at_origin(), &state(1.0, 1.0)).unwrap();
        assert_relative_eq!(z, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
    }

    #[test]
    fn gating_is_strict() {
        let spec = toa_at_origin();
        assert!(ideal_measurement(&spec, &state(1000.1, 0.0)).is_none());
        assert!(ideal_measurement(&spec, &state(1000.0, 0.0)).is_some());
        // Degeneracy ball counts as out of range.
        assert!(ideal_measurement(&spec, &state(1e-9, 0.0)).is_none());
    }

    #[test]
    fn measure_is_gated_and_noisy() {
        let spec = toa_at_origin();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(measure(&spec, &state(2000.0, 0.0), &mut rng).is_none());
        let z = measure(&spec, &state(300.0, 400.0), &mut rng).unwrap();
        assert!((z.value - 500.0).abs() < 10.0 * spec.noise_std);
    }

    #[test]
    fn jacobian_toa_hand_value() {
        let h = jacobian(&toa_at_origin(), &state(3.0, 4.0)).unwrap();
        assert_relative_eq!(h[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(h[1], 0.0);
        assert_relative_eq!(h[2], 0.8, epsilon = 1e-12);
        assert_relative_eq!(h[3], 0.0);
    }

    #[test]
    fn jacobian_doa_hand_value() {
        let h = jacobian(&doa_at_origin(), &state(1.0, 0.0)).unwrap();
        assert_relative_eq!(h[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(h[2], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_degenerate_point_rejected() {
        let err = jacobian(&toa_at_origin(), &state(0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { .. }));
    }

    fn finite_difference(spec: &SensorSpec, at: &DVector<f64>) -> RowDVector<f64> {
        let eps = 1e-5;
        let mut grad = RowDVector::zeros(STATE_DIM);
        for idx in [0usize, 2] {
            let mut plus = at.clone();
            let mut minus = at.clone();
            plus[idx] += eps;
            minus[idx] -= eps;
            let hp = measurement_function(spec, &plus).unwrap();
            let hm = measurement_function(spec, &minus).unwrap();
            let mut diff = hp - hm;
            if spec.kind == SensorKind::Doa {
                diff = wrap_angle(diff);
            }
            grad[idx] = diff / (2.0 * eps);
        }
        grad
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..1000 {
            let kind = if trial % 2 == 0 {
                SensorKind::Toa
            } else {
                SensorKind::Doa
            };
            let spec = SensorSpec::new(
                kind,
                (rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)),
                1.0,
                1e6,
            )
            .unwrap();
            let mut at = state(
                rng.random_range(-800.0..800.0),
                rng.random_range(-800.0..800.0),
            );
            // stay outside the degeneracy ball
            let (dx, dy, r) = (
                at[0] - spec.position.0,
                at[2] - spec.position.1,
                (at[0] - spec.position.0).hypot(at[2] - spec.position.1),
            );
            if r < 1.0 {
                at[0] = spec.position.0 + dx.signum().max(0.5) * 10.0;
                at[2] = spec.position.1 + dy.signum().max(0.5) * 10.0;
            }
            let analytic = jacobian(&spec, &at).unwrap();
            let numeric = finite_difference(&spec, &at);
            for idx in 0..STATE_DIM {
                let scale = analytic[idx].abs().max(1e-9);
                assert!(
                    (analytic[idx] - numeric[idx]).abs() / scale < 1e-5,
                    "trial {trial} idx {idx}: {} vs {}",
                    analytic[idx],
                    numeric[idx]
                );
            }
        }
    }

    #[test]
    fn zero_innovation_keeps_mean_and_shrinks_covariance() {
        let spec = toa_at_origin();
        let prior = MomentEstimate::new(
            DVector::from_vec(vec![300.0, 1.0, 400.0, -1.0]),
            DMatrix::identity(4, 4) * 100.0,
        )
        .unwrap();
        let z = Measurement {
            value: measurement_function(&spec, prior.mean()).unwrap(),
            kind: SensorKind::Toa,
        };
        let c = contribution(&spec, &z, &prior).unwrap();
        let prior_info = prior.to_information().unwrap();
        let posterior = info_update(&prior_info, &c).unwrap().to_moment().unwrap();
        assert_relative_eq!(posterior.mean(), prior.mean(), epsilon = 1e-6);
        let h = jacobian(&spec, prior.mean()).unwrap();
        let dir = h.transpose();
        let before = (dir.transpose() * prior.cov() * &dir)[0];
        let after = (dir.transpose() * posterior.cov() * &dir)[0];
        assert!(after < before, "variance along Hᵀ did not shrink");
    }

    #[test]
    fn linear_sensor_matches_moment_form_update() {
        // A contrived linear sensor: fixed row H, so the pseudo-measurement
        // machinery must coincide with the plain Kalman update.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let prior = {
                let mean = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
                let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
                let cov = &a * a.transpose() + DMatrix::identity(4, 4);
                MomentEstimate::new(mean, cov).unwrap()
            };
            let h_row = RowDVector::from_fn(4, |_, j| if j == 0 { 1.0 } else { 0.3 });
            let noise_var = 0.25;
            let z = rng.random_range(-5.0..5.0);
            let lm = LinearizedMeasurement {
                h: h_row.clone(),
                pseudo_z: z,
                noise_var,
            };
            let via_info = info_update(
                &prior.to_information().unwrap(),
                &linear_contribution(&lm).unwrap(),
            )
            .unwrap()
            .to_moment()
            .unwrap();
            let h_mat = DMatrix::from_rows(&[h_row.clone()]);
            let r = DMatrix::from_vec(1, 1, vec![noise_var]);
            let via_gain = oracle::moment_kalman_update(
                &prior,
                &h_mat,
                &r,
                &DVector::from_vec(vec![z]),
            )
            .unwrap();
            assert_relative_eq!(via_info.mean(), via_gain.mean(), max_relative = 1e-9);
            assert_relative_eq!(via_info.cov(), via_gain.cov(), max_relative = 1e-9);
        }
    }

    #[test]
    fn doa_innovation_wraps() {
        let deg = std::f64::consts::PI / 180.0;
        assert_relative_eq!(wrap_angle(359.0 * deg), -1.0 * deg, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(std::f64::consts::PI), std::f64::consts::PI);
    }

    #[test]
    fn contributions_are_rank_one_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let spec = toa_at_origin();
        for _ in 0..50 {
            let truth = state(rng.random_range(50.0..700.0), rng.random_range(50.0..700.0));
            let z = measure(&spec, &truth, &mut rng).unwrap();
            let prior = MomentEstimate::new(
                &truth + DVector::from_fn(4, |_, _| rng.random_range(-20.0..20.0)),
                DMatrix::identity(4, 4) * 50.0,
            )
            .unwrap();
            let c = contribution(&spec, &z, &prior).unwrap();
            let eig = c.imat().clone().symmetric_eigen().eigenvalues;
            let positive = eig.iter().filter(|&&v| v > 1e-12).count();
            assert!(eig.iter().all(|&v| v > -1e-12));
            assert!(positive <= 1, "rank above one: {eig:?}");
        }
    }
}
