//! Gaussian beliefs in moment and information form, and the algebra the
//! distributed filter is built on: form conversions, KL divergence,
//! log-opinion-pool fusion, information-form predict/update, and the
//! prediction map `f(Y)` used in the consistency analysis.
//!
//! All operations are pure: they borrow their inputs and return fresh
//! values, so estimates can be shared freely across threads.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Tolerance for symmetry checks, relative to the largest entry magnitude.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Condition-number threshold beyond which a dynamics matrix is treated
/// as non-invertible for information-form prediction.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Computed KL values below this are an internal error, not noise.
const KL_NEGATIVE_GUARD: f64 = -1e-9;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn check_symmetric(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    let scale = max_abs(m).max(1.0);
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric {
            name,
            asymmetry: worst,
        });
    }
    Ok(())
}

/// (M + Mᵀ)/2, applied to every symmetric result to control drift.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factorization doubling as the positive-definiteness check.
fn cholesky(m: &DMatrix<f64>, name: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite { name })
}

fn check_psd(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    let scale = max_abs(m).max(1.0);
    let min_eig = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    if min_eig < -SYMMETRY_TOL * scale {
        return Err(Error::NotPositiveSemidefinite { name, min_eig });
    }
    Ok(())
}

/// Gaussian belief as mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl MomentEstimate {
    /// Validates shape, symmetry and positive definiteness; the stored
    /// covariance is the symmetrized input.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "MomentEstimate covariance",
                expected: n,
                got: cov.nrows().max(cov.ncols()),
            });
        }
        check_symmetric(&cov, "covariance")?;
        let cov = symmetrize(&cov);
        cholesky(&cov, "covariance")?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Convert to information form: Y = P⁻¹, y = P⁻¹x.
    pub fn to_information(&self) -> Result<InfoEstimate> {
        let chol = cholesky(&self.cov, "covariance")?;
        let info_mat = symmetrize(&chol.inverse());
        let info_vec = chol.solve(&self.mean);
        InfoEstimate::new(info_vec, info_mat)
    }
}

/// Gaussian belief as information vector and matrix (y, Y).
#[derive(Debug, Clone, PartialEq)]
pub struct InfoEstimate {
    info_vec: DVector<f64>,
    info_mat: DMatrix<f64>,
}

impl InfoEstimate {
    /// Validates shape, symmetry and positive definiteness. Diffuse priors
    /// must use a small positive Y; an exactly zero information matrix is
    /// rejected here.
    pub fn new(info_vec: DVector<f64>, info_mat: DMatrix<f64>) -> Result<Self> {
        let n = info_vec.len();
        if info_mat.nrows() != n || info_mat.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "InfoEstimate information matrix",
                expected: n,
                got: info_mat.nrows().max(info_mat.ncols()),
            });
        }
        check_symmetric(&info_mat, "information matrix")?;
        let info_mat = symmetrize(&info_mat);
        cholesky(&info_mat, "information matrix")?;
        Ok(Self { info_vec, info_mat })
    }

    pub fn dim(&self) -> usize {
        self.info_vec.len()
    }

    pub fn info_vec(&self) -> &DVector<f64> {
        &self.info_vec
    }

    pub fn info_mat(&self) -> &DMatrix<f64> {
        &self.info_mat
    }

    /// Convert back to moment form: P = Y⁻¹, x = Y⁻¹y.
    pub fn to_moment(&self) -> Result<MomentEstimate> {
        let chol = cholesky(&self.info_mat, "information matrix")?;
        let cov = symmetrize(&chol.inverse());
        let mean = chol.solve(&self.info_vec);
        MomentEstimate::new(mean, cov)
    }
}

/// Additive measurement contribution (i, I) in information form.
/// I is symmetric PSD; its rank may be below the state dimension for
/// partial observations.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementContribution {
    ivec: DVector<f64>,
    imat: DMatrix<f64>,
}

impl MeasurementContribution {
    pub fn new(ivec: DVector<f64>, imat: DMatrix<f64>) -> Result<Self> {
        let n = ivec.len();
        if imat.nrows() != n || imat.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "MeasurementContribution matrix",
                expected: n,
                got: imat.nrows().max(imat.ncols()),
            });
        }
        check_symmetric(&imat, "measurement information")?;
        let imat = symmetrize(&imat);
        check_psd(&imat, "measurement information")?;
        Ok(Self { ivec, imat })
    }

    /// The no-measurement contribution (censored or ranged-out sensor).
    pub fn zero(n: usize) -> Self {
        Self {
            ivec: DVector::zeros(n),
            imat: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.ivec.len()
    }

    pub fn ivec(&self) -> &DVector<f64> {
        &self.ivec
    }

    pub fn imat(&self) -> &DMatrix<f64> {
        &self.imat
    }
}

/// KL divergence between two Gaussians,
/// ½[(x_q−x_p)ᵀP_q⁻¹(x_q−x_p) + tr(P_q⁻¹P_p) − n + ln(det P_q/det P_p)].
///
/// Evaluated through the Cholesky factors of both covariances: with
/// M = L_q⁻¹L_p and σᵢ its singular values, the trace and log-determinant
/// terms combine into Σᵢ(σᵢ² − 1 − 2 ln σᵢ), which is nonnegative term by
/// term, so the result cannot go negative through cancellation even for
/// ill-conditioned covariances. Tiny negative rounding residue is clamped
/// to zero; anything below the guard raises an internal-consistency error.
pub fn kl_gaussian(p: &MomentEstimate, q: &MomentEstimate) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            context: "kl_gaussian",
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let lq = cholesky(&q.cov, "q.cov")?.l();
    let lp = cholesky(&p.cov, "p.cov")?.l();

    let delta = &q.mean - &p.mean;
    let w = lq
        .solve_lower_triangular(&delta)
        .ok_or(Error::NotPositiveDefinite { name: "q.cov" })?;
    let mahalanobis = w.norm_squared();

    let m = lq
        .solve_lower_triangular(&lp)
        .ok_or(Error::NotPositiveDefinite { name: "q.cov" })?;
    let singular_values = m.svd(false, false).singular_values;
    let mut spread = 0.0;
    for sigma in singular_values.iter() {
        let d = sigma - 1.0;
        // σ² − 1 − 2 ln σ = d² + 2(d − ln(1+d)); both parts are ≥ 0.
        spread += d * d + 2.0 * (d - d.ln_1p());
    }

    let kl = 0.5 * (mahalanobis + spread);
    if kl < KL_NEGATIVE_GUARD {
        return Err(Error::InternalConsistency(format!(
            "kl_gaussian produced {kl:.3e}"
        )));
    }
    Ok(kl.max(0.0))
}

/// Log-opinion-pool fusion of information-form estimates with equal
/// weights 1/(m+1) over the node's own estimate and the m received ones.
/// The equal weights make the result a convex combination, which is what
/// keeps fused estimates consistent under unknown cross-correlations.
pub fn logop_fuse(own: &InfoEstimate, received: &[InfoEstimate]) -> Result<InfoEstimate> {
    let n = own.dim();
    let mut vec_sum = own.info_vec.clone();
    let mut mat_sum = own.info_mat.clone();
    for est in received {
        if est.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "logop_fuse",
                expected: n,
                got: est.dim(),
            });
        }
        vec_sum += &est.info_vec;
        mat_sum += &est.info_mat;
    }
    let weight = 1.0 / (received.len() as f64 + 1.0);
    InfoEstimate::new(vec_sum * weight, symmetrize(&(mat_sum * weight)))
}

/// Additive information-form measurement update: y' = y + i, Y' = Y + I.
pub fn info_update(e: &InfoEstimate, c: &MeasurementContribution) -> Result<InfoEstimate> {
    if c.dim() != e.dim() {
        return Err(Error::DimensionMismatch {
            context: "info_update",
            expected: e.dim(),
            got: c.dim(),
        });
    }
    InfoEstimate::new(
        &e.info_vec + &c.ivec,
        symmetrize(&(&e.info_mat + &c.imat)),
    )
}

fn checked_dynamics(
    n: usize,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "dynamics matrix",
            expected: n,
            got: a.nrows().max(a.ncols()),
        });
    }
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "process noise matrix",
            expected: n,
            got: q.nrows().max(q.ncols()),
        });
    }
    check_symmetric(q, "process noise")?;
    check_psd(q, "process noise")?;
    let sv = a.clone().svd(false, false).singular_values;
    let (smax, smin) = sv
        .iter()
        .fold((0.0_f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if smin <= 0.0 || smax / smin > CONDITION_LIMIT {
        return Err(Error::DynamicsNotInvertible);
    }
    a.clone()
        .try_inverse()
        .ok_or(Error::DynamicsNotInvertible)
}

/// Information-form prediction through invertible dynamics:
/// M = A⁻ᵀYA⁻¹, y' = (I+MQ)⁻¹A⁻ᵀy, Y' = (I+MQ)⁻¹M.
///
/// Equivalent to the moment-form prediction x' = Ax, P' = APAᵀ + Q.
pub fn info_predict(
    e: &InfoEstimate,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<InfoEstimate> {
    let n = e.dim();
    let a_inv = checked_dynamics(n, a, q)?;
    let a_inv_t = a_inv.transpose();

    let m = symmetrize(&(&a_inv_t * &e.info_mat * &a_inv));
    let s = DMatrix::identity(n, n) + &m * q;
    let s_inv = s.try_inverse().ok_or_else(|| {
        Error::InternalConsistency("(I + MQ) not invertible in info_predict".into())
    })?;

    let info_vec = &s_inv * (&a_inv_t * &e.info_vec);
    let info_mat = symmetrize(&(&s_inv * &m));
    InfoEstimate::new(info_vec, info_mat)
}

/// The prediction map applied to an information matrix:
/// f(Y) = A⁻ᵀYA⁻¹ − A⁻ᵀY(Y + AᵀQ⁻¹A)⁻¹YA⁻¹ for positive definite Q,
/// A⁻ᵀYA⁻¹ for Q = 0, and the (I+MQ)⁻¹M form when Q is singular but
/// nonzero. Matches the information matrix produced by [`info_predict`]
/// and is monotone in the PSD order.
pub fn f_map(y: &DMatrix<f64>, a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "f_map information matrix",
            expected: n,
            got: y.ncols(),
        });
    }
    check_symmetric(y, "information matrix")?;
    cholesky(&symmetrize(y), "information matrix")?;
    let a_inv = checked_dynamics(n, a, q)?;
    let a_inv_t = a_inv.transpose();

    if q.iter().all(|&v| v == 0.0) {
        return Ok(symmetrize(&(&a_inv_t * y * &a_inv)));
    }

    if let Some(q_chol) = Cholesky::new(q.clone()) {
        let q_inv = q_chol.inverse();
        let g = symmetrize(&(y + a.transpose() * &q_inv * a));
        let g_chol = cholesky(&g, "Y + AᵀQ⁻¹A")?;
        let inner = y - y * g_chol.inverse() * y;
        return Ok(symmetrize(&(&a_inv_t * inner * &a_inv)));
    }

    // Q singular but nonzero: fall back to the (I+MQ)⁻¹M form.
    let m = symmetrize(&(&a_inv_t * y * &a_inv));
    let s = DMatrix::identity(n, n) + &m * q;
    let s_inv = s.try_inverse().ok_or_else(|| {
        Error::InternalConsistency("(I + MQ) not invertible in f_map".into())
    })?;
    Ok(symmetrize(&(&s_inv * &m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub(crate) fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        symmetrize(&(&a * a.transpose() + DMatrix::identity(n, n) * 0.2))
    }

    fn random_moment(rng: &mut ChaCha8Rng, n: usize) -> MomentEstimate {
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        MomentEstimate::new(mean, random_pd(rng, n)).unwrap()
    }

    #[test]
    fn to_information_identity_covariance() {
        let m = MomentEstimate::new(DVector::from_vec(vec![0.0]), DMatrix::from_vec(1, 1, vec![1.0]))
            .unwrap();
        let e = m.to_information().unwrap();
        assert_eq!(e.info_vec()[0], 0.0);
        assert_eq!(e.info_mat()[(0, 0)], 1.0);
    }

    #[test]
    fn to_information_scalar_inverse() {
        let m = MomentEstimate::new(DVector::from_vec(vec![2.0]), DMatrix::from_vec(1, 1, vec![0.5]))
            .unwrap();
        let e = m.to_information().unwrap();
        assert_relative_eq!(e.info_vec()[0], 4.0, max_relative = 1e-12);
        assert_relative_eq!(e.info_mat()[(0, 0)], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn to_moment_scalar() {
        let e = InfoEstimate::new(DVector::from_vec(vec![4.0]), DMatrix::from_vec(1, 1, vec![2.0]))
            .unwrap();
        let m = e.to_moment().unwrap();
        assert_relative_eq!(m.mean()[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(m.cov()[(0, 0)], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn round_trip_random_pd() {
        let mut r = rng(11);
        for _ in 0..50 {
            let m = random_moment(&mut r, 4);
            let back = m.to_information().unwrap().to_moment().unwrap();
            assert_relative_eq!(m.mean(), back.mean(), max_relative = 1e-9);
            assert_relative_eq!(m.cov(), back.cov(), max_relative = 1e-9);
        }
    }

    #[test]
    fn non_pd_covariance_rejected() {
        let err = MomentEstimate::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("covariance"));
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let err = MomentEstimate::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_vec(2, 2, vec![1.0, 0.5, 0.0, 1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotSymmetric { .. }));
    }

    #[test]
    fn kl_identical_is_zero() {
        let mut r = rng(7);
        for n in 1..=4 {
            let m = random_moment(&mut r, n);
            assert_eq!(kl_gaussian(&m, &m).unwrap(), 0.0);
        }
    }

    #[test]
    fn kl_unit_mean_shift() {
        let p = MomentEstimate::new(DVector::from_vec(vec![0.0]), DMatrix::from_vec(1, 1, vec![1.0]))
            .unwrap();
        let q = MomentEstimate::new(DVector::from_vec(vec![1.0]), DMatrix::from_vec(1, 1, vec![1.0]))
            .unwrap();
        assert_relative_eq!(kl_gaussian(&p, &q).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kl_variance_ratio() {
        let p = MomentEstimate::new(DVector::from_vec(vec![0.0]), DMatrix::from_vec(1, 1, vec![1.0]))
            .unwrap();
        let q = MomentEstimate::new(DVector::from_vec(vec![0.0]), DMatrix::from_vec(1, 1, vec![2.0]))
            .unwrap();
        // ½(0 + 0.5 − 1 + ln 2)
        let expected = 0.5 * (0.5 - 1.0 + 2.0_f64.ln());
        assert_relative_eq!(kl_gaussian(&p, &q).unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, 0.09657359027997264, epsilon = 1e-15);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let p = MomentEstimate::new(DVector::from_vec(vec![0.0]), DMatrix::from_vec(1, 1, vec![1.0]))
            .unwrap();
        let q = MomentEstimate::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(matches!(
            kl_gaussian(&p, &q),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn logop_fuse_empty_is_identity() {
        let own = InfoEstimate::new(DVector::from_vec(vec![2.0]), DMatrix::from_vec(1, 1, vec![1.0]))
            .unwrap();
        let fused = logop_fuse(&own, &[]).unwrap();
        assert_eq!(fused, own);
    }

    #[test]
    fn logop_fuse_idempotent_on_identical_inputs() {
        let mut r = rng(3);
        let own = random_moment(&mut r, 3).to_information().unwrap();
        let received = vec![own.clone(), own.clone(), own.clone()];
        let fused = logop_fuse(&own, &received).unwrap();
        assert_relative_eq!(fused.info_vec(), own.info_vec(), max_relative = 1e-12);
        assert_relative_eq!(fused.info_mat(), own.info_mat(), max_relative = 1e-12);
    }

    #[test]
    fn logop_fuse_scalar_average() {
        let own = InfoEstimate::new(DVector::from_vec(vec![2.0]), DMatrix::from_vec(1, 1, vec![1.0]))
            .unwrap();
        let other = InfoEstimate::new(DVector::from_vec(vec![0.0]), DMatrix::from_vec(1, 1, vec![3.0]))
            .unwrap();
        let fused = logop_fuse(&own, &[other]).unwrap();
        assert_relative_eq!(fused.info_vec()[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(fused.info_mat()[(0, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn info_update_zero_contribution_is_identity() {
        let mut r = rng(5);
        let e = random_moment(&mut r, 4).to_information().unwrap();
        let updated = info_update(&e, &MeasurementContribution::zero(4)).unwrap();
        assert_eq!(updated, e);
    }

    #[test]
    fn info_update_scalar_example() {
        // Prior y=0, Y=1; H=1, R=0.25, z=2 gives i=8, I=4.
        let e = InfoEstimate::new(DVector::from_vec(vec![0.0]), DMatrix::from_vec(1, 1, vec![1.0]))
            .unwrap();
        let c = MeasurementContribution::new(
            DVector::from_vec(vec![8.0]),
            DMatrix::from_vec(1, 1, vec![4.0]),
        )
        .unwrap();
        let updated = info_update(&e, &c).unwrap();
        assert_relative_eq!(updated.info_vec()[0], 8.0);
        assert_relative_eq!(updated.info_mat()[(0, 0)], 5.0);
        let m = updated.to_moment().unwrap();
        assert_relative_eq!(m.mean()[0], 1.6, epsilon = 1e-12);
        assert_relative_eq!(m.cov()[(0, 0)], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn info_update_additivity() {
        let mut r = rng(9);
        let e = random_moment(&mut r, 3).to_information().unwrap();
        let c1 = {
            let h = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
            MeasurementContribution::new(&h * 2.0, &h * h.transpose()).unwrap()
        };
        let c2 = {
            let h = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
            MeasurementContribution::new(&h * -1.0, &h * h.transpose()).unwrap()
        };
        let seq = info_update(&info_update(&e, &c1).unwrap(), &c2).unwrap();
        let combined = MeasurementContribution::new(
            c1.ivec() + c2.ivec(),
            c1.imat() + c2.imat(),
        )
        .unwrap();
        let joint = info_update(&e, &combined).unwrap();
        assert_relative_eq!(seq.info_vec(), joint.info_vec(), max_relative = 1e-12);
        assert_relative_eq!(seq.info_mat(), joint.info_mat(), max_relative = 1e-12);
    }

    #[test]
    fn info_predict_identity_dynamics() {
        let mut r = rng(13);
        let e = random_moment(&mut r, 4).to_information().unwrap();
        let a = DMatrix::identity(4, 4);
        let q = DMatrix::zeros(4, 4);
        let predicted = info_predict(&e, &a, &q).unwrap();
        assert_relative_eq!(predicted.info_vec(), e.info_vec(), max_relative = 1e-12);
        assert_relative_eq!(predicted.info_mat(), e.info_mat(), max_relative = 1e-12);
    }

    #[test]
    fn info_predict_scalar_doubling() {
        let e = InfoEstimate::new(DVector::from_vec(vec![1.0]), DMatrix::from_vec(1, 1, vec![1.0]))
            .unwrap();
        let a = DMatrix::from_vec(1, 1, vec![2.0]);
        let q = DMatrix::zeros(1, 1);
        let predicted = info_predict(&e, &a, &q).unwrap();
        assert_relative_eq!(predicted.info_mat()[(0, 0)], 0.25, epsilon = 1e-12);
        assert_relative_eq!(predicted.info_vec()[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn info_predict_singular_dynamics_rejected() {
        let e = InfoEstimate::new(DVector::from_vec(vec![0.0, 0.0]), DMatrix::identity(2, 2))
            .unwrap();
        let a = DMatrix::zeros(2, 2);
        let q = DMatrix::zeros(2, 2);
        assert!(matches!(
            info_predict(&e, &a, &q),
            Err(Error::DynamicsNotInvertible)
        ));
        let mut ill = DMatrix::identity(2, 2);
        ill[(1, 1)] = 1e-14;
        assert!(matches!(
            info_predict(&e, &ill, &q),
            Err(Error::DynamicsNotInvertible)
        ));
    }

    #[test]
    fn f_map_identity_zero_noise() {
        let mut r = rng(17);
        let y = random_pd(&mut r, 4);
        let a = DMatrix::identity(4, 4);
        let q = DMatrix::zeros(4, 4);
        assert_relative_eq!(f_map(&y, &a, &q).unwrap(), y, max_relative = 1e-12);
    }

    #[test]
    fn f_map_matches_info_predict() {
        let mut r = rng(19);
        for _ in 0..50 {
            let y = random_pd(&mut r, 4);
            let a = DMatrix::from_fn(4, 4, |i, j| {
                if i == j {
                    1.0
                } else {
                    r.random_range(-0.3..0.3)
                }
            });
            let q = random_pd(&mut r, 4);
            let e = InfoEstimate::new(DVector::zeros(4), y.clone()).unwrap();
            let predicted = info_predict(&e, &a, &q).unwrap();
            let f = f_map(&y, &a, &q).unwrap();
            assert_relative_eq!(f, *predicted.info_mat(), max_relative = 1e-9);
        }
    }

    #[test]
    fn f_map_singular_nonzero_noise_falls_back() {
        let mut r = rng(23);
        let y = random_pd(&mut r, 2);
        let a = DMatrix::identity(2, 2);
        // Rank-1 PSD noise.
        let q = DMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]);
        let e = InfoEstimate::new(DVector::zeros(2), y.clone()).unwrap();
        let predicted = info_predict(&e, &a, &q).unwrap();
        let f = f_map(&y, &a, &q).unwrap();
        assert_relative_eq!(f, *predicted.info_mat(), max_relative = 1e-9);
    }

    #[test]
    fn f_map_monotone_spot_check() {
        let mut r = rng(29);
        for _ in 0..50 {
            let y1 = random_pd(&mut r, 4);
            let bump = {
                let b = DMatrix::from_fn(4, 2, |_, _| r.random_range(-1.0..1.0));
                &b * b.transpose()
            };
            let y2 = symmetrize(&(&y1 + bump));
            let a = DMatrix::from_fn(4, 4, |i, j| {
                if i == j {
                    1.0
                } else {
                    r.random_range(-0.2..0.2)
                }
            });
            let q = random_pd(&mut r, 4);
            let f1 = f_map(&y1, &a, &q).unwrap();
            let f2 = f_map(&y2, &a, &q).unwrap();
            let min_eig = symmetrize(&(f2 - f1))
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |acc, &v| acc.min(v));
            assert!(min_eig >= -1e-9, "monotonicity violated: {min_eig}");
        }
    }
}
