//! Parameterized verification checks pairing each core operation with its
//! independent oracle. The acceptance test suite runs them at full size;
//! the CLI `verify` subcommand runs reduced sizes for a quick self-check.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::baselines;
use crate::discrete::{self, DiscreteDist, DiscreteModel, DiscreteNode};
use crate::gaussian::{
    f_map, info_predict, info_update, kl_gaussian, logop_fuse, symmetrize, InfoEstimate,
    MeasurementContribution, MomentEstimate,
};
use crate::oracle;
use crate::sensing::{self, SensorKind, SensorSpec};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        Self { name, pass, detail }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    symmetrize(&(&a * a.transpose() + DMatrix::identity(n, n) * floor))
}

fn random_moment(rng: &mut ChaCha8Rng, n: usize, mean_span: f64) -> MomentEstimate {
    let mean = DVector::from_fn(n, |_, _| rng.random_range(-mean_span..mean_span));
    MomentEstimate::new(mean, random_pd(rng, n, 0.4)).expect("constructed PD")
}

/// Closed-form Gaussian KL against direct quadrature of ∫p·log(p/q) in
/// one and two dimensions.
pub fn check_kl_closed_form(cases_1d: usize, cases_2d: usize, tol: f64, seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases_1d {
        let p = (r.random_range(-2.0..2.0), r.random_range(0.3..3.0));
        let q = (r.random_range(-2.0..2.0), r.random_range(0.3..3.0));
        let closed = {
            let pm = MomentEstimate::new(
                DVector::from_vec(vec![p.0]),
                DMatrix::from_vec(1, 1, vec![p.1]),
            )
            .unwrap();
            let qm = MomentEstimate::new(
                DVector::from_vec(vec![q.0]),
                DMatrix::from_vec(1, 1, vec![q.1]),
            )
            .unwrap();
            kl_gaussian(&pm, &qm).unwrap()
        };
        let numeric = oracle::kl_quadrature_1d(p, q, 4001);
        worst = worst.max((closed - numeric).abs());
    }
    for _ in 0..cases_2d {
        let p = random_moment(&mut r, 2, 1.5);
        let q = random_moment(&mut r, 2, 1.5);
        let closed = kl_gaussian(&p, &q).unwrap();
        let numeric = oracle::kl_quadrature_2d(&p, &q, 601);
        worst = worst.max((closed - numeric).abs());
    }
    CheckResult::new(
        "kl-closed-form-vs-quadrature",
        worst <= tol,
        format!("worst |closed − quadrature| = {worst:.3e} (tol {tol:.1e})"),
    )
}

/// Information-form predict and update against the moment-form oracles
/// on random instances.
pub fn check_info_form_equivalence(cases: usize, rel_tol: f64, seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        let denom = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
        let diff = (a - b).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        diff / denom
    };
    for case in 0..cases {
        let n = 1 + case % 4;
        let m = random_moment(&mut r, n, 3.0);
        // Random well-conditioned dynamics and PSD noise.
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                r.random_range(0.7..1.4)
            } else {
                r.random_range(-0.3..0.3)
            }
        });
        let q = if case % 5 == 0 {
            DMatrix::zeros(n, n)
        } else {
            random_pd(&mut r, n, 0.1)
        };

        let predicted_info = info_predict(&m.to_information().unwrap(), &a, &q).unwrap();
        let predicted = predicted_info.to_moment().unwrap();
        let expected = oracle::moment_predict(&m, &a, &q).unwrap();
        worst = worst.max(rel(predicted.cov(), expected.cov()));
        let mean_diff = (predicted.mean() - expected.mean()).amax()
            / expected.mean().amax().max(1.0);
        worst = worst.max(mean_diff);

        // Scalar linear measurement through both routes.
        let h = RowDVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let z = r.random_range(-3.0..3.0);
        let r_var = r.random_range(0.2..2.0);
        let lm = sensing::LinearizedMeasurement {
            h: h.clone(),
            pseudo_z: z,
            noise_var: r_var,
        };
        let updated = info_update(
            &m.to_information().unwrap(),
            &sensing::linear_contribution(&lm).unwrap(),
        )
        .unwrap()
        .to_moment()
        .unwrap();
        let expected = oracle::moment_kalman_update(
            &m,
            &DMatrix::from_rows(&[h]),
            &DMatrix::from_vec(1, 1, vec![r_var]),
            &DVector::from_vec(vec![z]),
        )
        .unwrap();
        worst = worst.max(rel(updated.cov(), expected.cov()));
        let mean_diff =
            (updated.mean() - expected.mean()).amax() / expected.mean().amax().max(1.0);
        worst = worst.max(mean_diff);
    }
    CheckResult::new(
        "info-form-vs-moment-oracle",
        worst <= rel_tol,
        format!("worst relative deviation = {worst:.3e} (tol {rel_tol:.1e})"),
    )
}

/// Monte Carlo NEES of LogOP-fused estimates whose inputs are consistent
/// by construction, with correlated errors across agents. The average
/// NEES must stay inside the 99% chi-square band for the state dimension.
pub fn check_fusion_consistency_nees(trials: usize, seed: u64) -> CheckResult {
    let n = 4;
    let agents = 3;
    let mut r = rng(seed);
    let std_normal =
        |r: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rand_distr::StandardNormal.sample(r));

    let mut total_nees = 0.0;
    for _ in 0..trials {
        let truth = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        // Shared error component creates cross-correlation between agents.
        let common_cov = random_pd(&mut r, n, 0.2);
        let common_l = nalgebra::Cholesky::new(common_cov.clone()).unwrap().l();
        let common = &common_l * std_normal(&mut r);

        let mut estimates = Vec::with_capacity(agents);
        for _ in 0..agents {
            let private_cov = random_pd(&mut r, n, 0.2);
            let private_l = nalgebra::Cholesky::new(private_cov.clone()).unwrap().l();
            let err = &common + &private_l * std_normal(&mut r);
            // Reported covariance dominates the actual error covariance.
            let inflation = r.random_range(1.0..1.8);
            let reported = symmetrize(&((&common_cov + &private_cov) * inflation));
            let est = MomentEstimate::new(&truth + err, reported).unwrap();
            estimates.push(est.to_information().unwrap());
        }
        let fused = logop_fuse(&estimates[0], &estimates[1..])
            .unwrap()
            .to_moment()
            .unwrap();
        let err = fused.mean() - &truth;
        let p_inv_err = nalgebra::Cholesky::new(fused.cov().clone()).unwrap().solve(&err);
        total_nees += err.dot(&p_inv_err);
    }
    let avg = total_nees / trials as f64;
    let bound = oracle::chi_square_mean_bound(0.99, n, trials);
    CheckResult::new(
        "fusion-nees-consistency",
        avg <= bound,
        format!("avg NEES {avg:.4} vs 99% bound {bound:.4} over {trials} trials"),
    )
}

/// The crafted diffusion combine case must violate the same band:
/// averaging in a biased mean while keeping the local covariance.
pub fn check_diffusion_inconsistency(trials: usize, seed: u64) -> CheckResult {
    let n = 4;
    let mut r = rng(seed);
    let bias = DVector::from_vec(vec![10.0, 0.0, 10.0, 0.0]);
    let mut total_nees = 0.0;
    for _ in 0..trials {
        let truth = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let err = DVector::from_fn(n, |_, _| rand_distr::StandardNormal.sample(&mut r));
        let own = &truth + err;
        let biased = &truth + &bias;
        let combined = baselines::combine_means(&own, std::slice::from_ref(&biased)).unwrap();
        let e = &combined - &truth;
        // Reported covariance is still the identity the own estimate had.
        total_nees += e.dot(&e);
    }
    let avg = total_nees / trials as f64;
    let bound = oracle::chi_square_mean_bound(0.99, n, trials);
    CheckResult::new(
        "diffusion-nees-violation",
        avg > bound,
        format!("avg NEES {avg:.4} must exceed 99% bound {bound:.4}"),
    )
}

/// PSD monotonicity of the prediction map: Y₁ ⪯ Y₂ ⟹ f(Y₁) ⪯ f(Y₂).
pub fn check_monotone_f(pairs: usize, eig_slack: f64, seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let mut worst = f64::INFINITY;
    for case in 0..pairs {
        let n = 4;
        let y1 = random_pd(&mut r, n, 0.3);
        let rank = 1 + case % n;
        let b = DMatrix::from_fn(n, rank, |_, _| r.random_range(-1.0..1.0));
        let y2 = symmetrize(&(&y1 + &b * b.transpose()));
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                r.random_range(0.7..1.3)
            } else {
                r.random_range(-0.25..0.25)
            }
        });
        let q = if case % 7 == 0 {
            DMatrix::zeros(n, n)
        } else {
            random_pd(&mut r, n, 0.05)
        };
        let f1 = match f_map(&y1, &a, &q) {
            Ok(f) => f,
            Err(e) => return CheckResult::new("f-map-monotone", false, e.to_string()),
        };
        let f2 = match f_map(&y2, &a, &q) {
            Ok(f) => f,
            Err(e) => return CheckResult::new("f-map-monotone", false, e.to_string()),
        };
        let min_eig = symmetrize(&(f2 - f1))
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, &v| acc.min(v));
        worst = worst.min(min_eig);
    }
    CheckResult::new(
        "f-map-monotone",
        worst >= eig_slack,
        format!("min eigenvalue of f(Y₂)−f(Y₁) over {pairs} pairs = {worst:.3e} (slack {eig_slack:.1e})"),
    )
}

/// Pooling optimality: the pooled distribution's Σ-KL objective must not
/// exceed the best value on a dense simplex grid by more than `gap_tol`.
pub fn check_pool_optimality(
    instances: usize,
    states: usize,
    grid_step: f64,
    gap_tol: f64,
    seed: u64,
) -> CheckResult {
    let mut r = rng(seed);
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..instances {
        let inputs: Vec<DiscreteDist> = (0..3)
            .map(|_| {
                let w: Vec<f64> = (0..states).map(|_| r.random_range(0.05..1.0)).collect();
                DiscreteDist::from_weights(w).unwrap()
            })
            .collect();
        let pooled = discrete::logop_pool(&inputs).unwrap();
        let raw: Vec<Vec<f64>> = inputs
            .iter()
            .map(|d| d.probs().iter().copied().collect())
            .collect();
        let pooled_value = oracle::sum_kl_objective(
            &pooled.probs().iter().copied().collect::<Vec<_>>(),
            &raw,
        );
        let grid_best = oracle::simplex_grid_min_sum_kl(&raw, grid_step);
        worst_gap = worst_gap.max(pooled_value - grid_best);
    }
    CheckResult::new(
        "logop-pool-grid-optimality",
        worst_gap <= gap_tol,
        format!("worst objective gap vs grid = {worst_gap:.3e} (tol {gap_tol:.1e})"),
    )
}

/// Consensus of the censored discrete filter on a 5-node ring with γ = 0:
/// the maximum pairwise KL between node beliefs must fall below the
/// threshold within the horizon.
pub fn check_discrete_consensus(horizon: usize, threshold: f64) -> CheckResult {
    let model = DiscreteModel::new(DMatrix::identity(3, 3), vec![]).unwrap();
    let priors = [
        vec![0.80, 0.15, 0.05],
        vec![0.10, 0.80, 0.10],
        vec![0.05, 0.15, 0.80],
        vec![0.40, 0.40, 0.20],
        vec![0.25, 0.50, 0.25],
    ];
    let mut nodes: Vec<DiscreteNode> = priors
        .iter()
        .map(|p| DiscreteNode::new(DiscreteDist::new(p.clone()).unwrap()))
        .collect();
    let neighbors: Vec<Vec<usize>> = (0..5).map(|i| vec![(i + 4) % 5, (i + 1) % 5]).collect();
    let observations = vec![None; 5];
    let mut spread = f64::INFINITY;
    for _ in 0..horizon {
        let (next, outcomes) =
            discrete::discrete_voi_step(&nodes, &model, &observations, &neighbors, 0.0).unwrap();
        if outcomes.iter().any(|o| !o.transmitted) {
            return CheckResult::new(
                "discrete-ring-consensus",
                false,
                "a node censored itself at γ = 0".into(),
            );
        }
        nodes = next;
        spread = 0.0_f64;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    spread = spread.max(
                        discrete::kl_discrete(&nodes[i].fused, &nodes[j].fused).unwrap(),
                    );
                }
            }
        }
    }
    CheckResult::new(
        "discrete-ring-consensus",
        spread < threshold,
        format!("max pairwise KL after {horizon} steps = {spread:.3e} (threshold {threshold:.1e})"),
    )
}

/// Analytic sensor Jacobians against central finite differences on random
/// geometries outside the degeneracy ball.
pub fn check_jacobians(cases: usize, rel_tol: f64, seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for case in 0..cases {
        let kind = if case % 2 == 0 {
            SensorKind::Toa
        } else {
            SensorKind::Doa
        };
        let spec = SensorSpec::new(
            kind,
            (r.random_range(-500.0..500.0), r.random_range(-500.0..500.0)),
            1.0,
            1e9,
        )
        .unwrap();
        let mut state = DVector::from_vec(vec![
            r.random_range(-800.0..800.0),
            1.0,
            r.random_range(-800.0..800.0),
            -1.0,
        ]);
        let dist = (state[0] - spec.position.0).hypot(state[2] - spec.position.1);
        if dist < 1.0 {
            state[0] += 25.0;
            state[2] -= 25.0;
        }
        let analytic = sensing::jacobian(&spec, &state).unwrap();
        let eps = 1e-4;
        for idx in [0usize, 2] {
            let mut plus = state.clone();
            let mut minus = state.clone();
            plus[idx] += eps;
            minus[idx] -= eps;
            let hp = sensing::measurement_function(&spec, &plus).unwrap();
            let hm = sensing::measurement_function(&spec, &minus).unwrap();
            let mut diff = hp - hm;
            if kind == SensorKind::Doa {
                diff = sensing::wrap_angle(diff);
            }
            let numeric = diff / (2.0 * eps);
            let scale = analytic[idx].abs().max(1e-9);
            worst = worst.max((analytic[idx] - numeric).abs() / scale);
        }
    }
    CheckResult::new(
        "sensor-jacobians-vs-finite-differences",
        worst <= rel_tol,
        format!("worst relative deviation = {worst:.3e} (tol {rel_tol:.1e})"),
    )
}

/// Contributions of actual sensors stay PSD with rank ≤ 1.
pub fn check_contribution_rank(cases: usize, seed: u64) -> CheckResult {
    let mut r = rng(seed);
    for case in 0..cases {
        let kind = if case % 2 == 0 {
            SensorKind::Toa
        } else {
            SensorKind::Doa
        };
        let spec = SensorSpec::new(kind, (0.0, 0.0), 1.0, 2000.0).unwrap();
        let truth = DVector::from_vec(vec![
            r.random_range(100.0..900.0),
            0.0,
            r.random_range(100.0..900.0),
            0.0,
        ]);
        let Some(z) = sensing::measure(&spec, &truth, &mut r) else {
            continue;
        };
        let prior = MomentEstimate::new(
            &truth + DVector::from_fn(4, |_, _| r.random_range(-30.0..30.0)),
            DMatrix::identity(4, 4) * 100.0,
        )
        .unwrap();
        let c: MeasurementContribution = match sensing::contribution(&spec, &z, &prior) {
            Ok(c) => c,
            Err(e) => {
                return CheckResult::new("contribution-rank", false, e.to_string());
            }
        };
        let eig = c.imat().clone().symmetric_eigen().eigenvalues;
        let positive = eig.iter().filter(|&&v| v > 1e-12).count();
        if positive > 1 || eig.iter().any(|&v| v < -1e-9) {
            return CheckResult::new(
                "contribution-rank",
                false,
                format!("eigenvalues {eig:?} at case {case}"),
            );
        }
    }
    CheckResult::new("contribution-rank", true, format!("{cases} cases, all rank ≤ 1 PSD"))
}

/// The full reduced suite in a fixed order.
pub fn quick_suite() -> Vec<CheckResult> {
    vec![
        check_kl_closed_form(20, 10, 1e-3, 101),
        check_info_form_equivalence(200, 1e-9, 102),
        check_fusion_consistency_nees(2000, 103),
        check_diffusion_inconsistency(2000, 104),
        check_monotone_f(200, -1e-9, 105),
        check_pool_optimality(3, 3, 1e-3, 1e-5, 106),
        check_discrete_consensus(60, 1e-6),
        check_jacobians(200, 1e-5, 107),
        check_contribution_rank(100, 108),
    ]
}

/// Ensure the InfoEstimate round trip stays inside tolerance; used by the
/// quick suite indirectly through the equivalence check, and exposed for
/// reuse in tests.
pub fn round_trip_error(m: &MomentEstimate) -> f64 {
    let back = m
        .to_information()
        .and_then(|e: InfoEstimate| e.to_moment())
        .expect("round trip");
    let mean = (m.mean() - back.mean()).amax();
    let cov = (m.cov() - back.cov()).amax();
    mean.max(cov)
}
