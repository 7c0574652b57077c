//! Independent numerical oracles used by the verification suites: direct
//! quadrature of the KL integral, moment-form Kalman recursions, dense
//! simplex grid search for the pooling objective, chi-square acceptance
//! bounds, and rank correlation. Nothing here shares a code path with the
//! information-form implementation it is used to check.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, MomentEstimate};

/// ∫ p log(p/q) for 1-D Gaussians by Simpson quadrature. `p` and `q` are
/// (mean, variance) pairs; densities are evaluated from scalar formulas.
pub fn kl_quadrature_1d(p: (f64, f64), q: (f64, f64), points: usize) -> f64 {
    let (mp, vp) = p;
    let (mq, vq) = q;
    let sp = vp.sqrt();
    let log_norm_p = -0.5 * (2.0 * std::f64::consts::PI * vp).ln();
    let log_norm_q = -0.5 * (2.0 * std::f64::consts::PI * vq).ln();
    let lo = mp - 10.0 * sp;
    let hi = mp + 10.0 * sp;
    let n = points | 1; // Simpson needs an odd point count
    let h = (hi - lo) / (n - 1) as f64;
    let integrand = |x: f64| {
        let zp = x - mp;
        let zq = x - mq;
        let log_p = log_norm_p - 0.5 * zp * zp / vp;
        let log_q = log_norm_q - 0.5 * zq * zq / vq;
        log_p.exp() * (log_p - log_q)
    };
    let mut acc = integrand(lo) + integrand(hi);
    for i in 1..n - 1 {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(lo + h * i as f64);
    }
    acc * h / 3.0
}

/// ∫ p log(p/q) for 2-D Gaussians by tensor-product Simpson quadrature,
/// with densities computed from explicit 2×2 determinants and inverses.
pub fn kl_quadrature_2d(p: &MomentEstimate, q: &MomentEstimate, points_per_axis: usize) -> f64 {
    assert_eq!(p.dim(), 2);
    assert_eq!(q.dim(), 2);
    let log_pdf = |mean: &DVector<f64>, cov: &DMatrix<f64>| {
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        let inv = [
            cov[(1, 1)] / det,
            -cov[(0, 1)] / det,
            -cov[(1, 0)] / det,
            cov[(0, 0)] / det,
        ];
        let log_norm = -((2.0 * std::f64::consts::PI).ln() + 0.5 * det.ln());
        let (mx, my) = (mean[0], mean[1]);
        move |x: f64, y: f64| {
            let dx = x - mx;
            let dy = y - my;
            let quad = inv[0] * dx * dx + (inv[1] + inv[2]) * dx * dy + inv[3] * dy * dy;
            log_norm - 0.5 * quad
        }
    };
    let lp = log_pdf(p.mean(), p.cov());
    let lq = log_pdf(q.mean(), q.cov());

    let sx = p.cov()[(0, 0)].sqrt();
    let sy = p.cov()[(1, 1)].sqrt();
    let n = points_per_axis | 1;
    let (x_lo, x_hi) = (p.mean()[0] - 9.0 * sx, p.mean()[0] + 9.0 * sx);
    let (y_lo, y_hi) = (p.mean()[1] - 9.0 * sy, p.mean()[1] + 9.0 * sy);
    let hx = (x_hi - x_lo) / (n - 1) as f64;
    let hy = (y_hi - y_lo) / (n - 1) as f64;
    let weight = |i: usize| {
        if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let mut acc = 0.0;
    for i in 0..n {
        let x = x_lo + hx * i as f64;
        let wx = weight(i);
        let mut row = 0.0;
        for j in 0..n {
            let y = y_lo + hy * j as f64;
            let log_p = lp(x, y);
            row += weight(j) * log_p.exp() * (log_p - lq(x, y));
        }
        acc += wx * row;
    }
    acc * hx * hy / 9.0
}

/// Moment-form prediction: x' = Ax, P' = APAᵀ + Q.
pub fn moment_predict(
    m: &MomentEstimate,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<MomentEstimate> {
    let mean = a * m.mean();
    let cov = symmetrize(&(a * m.cov() * a.transpose() + q));
    MomentEstimate::new(mean, cov)
}

/// Textbook gain-form Kalman update for a linear measurement z = Hx + v,
/// v ~ N(0, R), with Joseph-form covariance update.
pub fn moment_kalman_update(
    m: &MomentEstimate,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<MomentEstimate> {
    let n = m.dim();
    let s = h * m.cov() * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite { name: "innovation covariance" })?;
    let k = m.cov() * h.transpose() * s_inv;
    let mean = m.mean() + &k * (z - h * m.mean());
    let i_kh = DMatrix::identity(n, n) - &k * h;
    let cov = symmetrize(&(&i_kh * m.cov() * i_kh.transpose() + &k * r * k.transpose()));
    MomentEstimate::new(mean, cov)
}

/// Dense search over the probability simplex with the given grid step,
/// minimizing Σⱼ KL(p ‖ pⱼ). Returns the best objective value found.
/// Only 3-state and 4-state supports are implemented; the grid step is
/// an exact oracle parameter, not a tunable.
pub fn simplex_grid_min_sum_kl(dists: &[Vec<f64>], step: f64) -> f64 {
    let states = dists[0].len();
    assert!(
        states == 3 || states == 4,
        "grid oracle supports 3 or 4 states"
    );
    let ticks = (1.0 / step).round() as usize;
    let logs: Vec<Vec<f64>> = dists
        .iter()
        .map(|d| d.iter().map(|&v| v.ln()).collect())
        .collect();
    let objective = |p: &[f64]| -> f64 {
        let mut total = 0.0;
        for logs_j in &logs {
            for (i, &pi) in p.iter().enumerate() {
                if pi > 0.0 {
                    total += pi * (pi.ln() - logs_j[i]);
                }
            }
        }
        total
    };
    let mut best = f64::INFINITY;
    let mut point = vec![0.0; states];
    if states == 3 {
        for i in 0..=ticks {
            for j in 0..=(ticks - i) {
                let k = ticks - i - j;
                point[0] = i as f64 * step;
                point[1] = j as f64 * step;
                point[2] = k as f64 * step;
                best = best.min(objective(&point));
            }
        }
    } else {
        for i in 0..=ticks {
            for j in 0..=(ticks - i) {
                for k in 0..=(ticks - i - j) {
                    let l = ticks - i - j - k;
                    point[0] = i as f64 * step;
                    point[1] = j as f64 * step;
                    point[2] = k as f64 * step;
                    point[3] = l as f64 * step;
                    best = best.min(objective(&point));
                }
            }
        }
    }
    best
}

/// Σⱼ KL(p ‖ pⱼ) for probability vectors over the same support.
pub fn sum_kl_objective(p: &[f64], dists: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for d in dists {
        for (i, &pi) in p.iter().enumerate() {
            if pi > 0.0 {
                total += pi * (pi.ln() - d[i].ln());
            }
        }
    }
    total
}

/// Upper edge of the acceptance interval for the AVERAGE of `trials`
/// independent chi-square(dof) variables at the given confidence level:
/// quantile(level, trials·dof) / trials.
pub fn chi_square_mean_bound(level: f64, dof: usize, trials: usize) -> f64 {
    let dist = ChiSquared::new((trials * dof) as f64).expect("valid dof");
    dist.inverse_cdf(level) / trials as f64
}

/// Spearman rank correlation. Ties get the average rank.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let mut ranks = vec![0.0; vals.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadrature_1d_matches_known_values() {
        // N(0,1) vs N(1,1): ½; N(0,1) vs N(0,2): ½(ln2 − ½).
        assert_relative_eq!(kl_quadrature_1d((0.0, 1.0), (1.0, 1.0), 2001), 0.5, epsilon = 1e-6);
        assert_relative_eq!(
            kl_quadrature_1d((0.0, 1.0), (0.0, 2.0), 2001),
            0.5 * (2.0_f64.ln() - 0.5),
            epsilon = 1e-6
        );
    }

    #[test]
    fn quadrature_2d_zero_for_identical() {
        let m = MomentEstimate::new(
            DVector::from_vec(vec![0.3, -0.7]),
            DMatrix::from_vec(2, 2, vec![1.2, 0.4, 0.4, 0.9]),
        )
        .unwrap();
        let kl = kl_quadrature_2d(&m, &m, 401);
        assert!(kl.abs() < 1e-9, "got {kl}");
    }

    #[test]
    fn chi_square_bound_close_to_dof_for_many_trials() {
        let bound = chi_square_mean_bound(0.99, 4, 5000);
        assert!(bound > 4.0 && bound < 4.2, "got {bound}");
    }

    #[test]
    fn spearman_perfectly_monotone() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let inc = [0.1, 0.2, 0.5, 0.9];
        let dec = [5.0, 4.0, 2.0, 1.0];
        assert_relative_eq!(spearman(&xs, &inc), 1.0);
        assert_relative_eq!(spearman(&xs, &dec), -1.0);
    }
}
