//! Least-squares fits: phase-resolved zero-delay coincidences and the
//! visibility-versus-countrate line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coincidence data of one acquisition bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceBin {
    /// Singles `c + d`.
    pub singles: f64,
    pub zero_delay: f64,
    /// Summed over all nonzero delays.
    pub side_sum: f64,
    /// Posterior `⟨cos²φ⟩`.
    pub cos_sq: f64,
    /// Posterior `⟨cos 2φ⟩`.
    pub cos_2phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceFit {
    pub g2: f64,
    pub g2_err: f64,
    pub v2: f64,
    pub v2_err: f64,
    /// Side-peak counts per squared singles at zero singles contrast.
    pub pedestal_scale: f64,
}

/// Fits zero-delay counts `Z = B S² (g²/2)(1 − v₂⟨cos 2φ⟩)` with the scale
/// `B` fixed by the side peaks, `s = B S² (1 − v₁²⟨cos²φ⟩)` per delay.
pub fn fit_coincidences(bins: &[CoincidenceBin], n_side: usize, v1: f64) -> Result<CoincidenceFit> {
    if n_side == 0 {
        return Err(Error::Validation("histogram has no side delays".into()));
    }
    let used: Vec<&CoincidenceBin> = bins.iter().filter(|b| b.singles > 0.0).collect();
    if used.len() < 2 {
        return Err(Error::Validation("need at least two bins with counts".into()));
    }
    let side: f64 = used.iter().map(|b| b.side_sum).sum();
    let norm: f64 = used
        .iter()
        .map(|b| n_side as f64 * b.singles.powi(2) * (1.0 - v1 * v1 * b.cos_sq))
        .sum();
    if side <= 0.0 || norm <= 0.0 {
        return Err(Error::UndefinedObservable("no side-peak coincidences".into()));
    }
    let scale = side / norm;
    let zero: f64 = used.iter().map(|b| b.zero_delay).sum();
    if zero <= 0.0 {
        return Err(Error::UndefinedObservable(
            "no zero-delay coincidences; v2 is undefined".into(),
        ));
    }

    // Poisson-weighted linear least squares in (a, b) = (g²/2, g² v₂/2).
    let x: Vec<(f64, f64)> = used
        .iter()
        .map(|b| {
            let base = scale * b.singles.powi(2);
            (base, -base * b.cos_2phi)
        })
        .collect();
    let mut theta = [zero / x.iter().map(|x| x.0).sum::<f64>(), 0.0];
    let mut cov = [[0.0; 2]; 2];
    for _ in 0..4 {
        let mut m = [[0.0; 2]; 2];
        let mut r = [0.0; 2];
        for (xi, b) in x.iter().zip(&used) {
            let mu = (theta[0] * xi.0 + theta[1] * xi.1).max(1.0);
            let w = 1.0 / mu;
            m[0][0] += w * xi.0 * xi.0;
            m[0][1] += w * xi.0 * xi.1;
            m[1][1] += w * xi.1 * xi.1;
            r[0] += w * xi.0 * b.zero_delay;
            r[1] += w * xi.1 * b.zero_delay;
        }
        m[1][0] = m[0][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(det.abs() > 1e-300) {
            return Err(Error::DegenerateAbscissa);
        }
        cov = [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ];
        theta = [
            cov[0][0] * r[0] + cov[0][1] * r[1],
            cov[1][0] * r[0] + cov[1][1] * r[1],
        ];
    }
    let (a, b) = (theta[0], theta[1]);
    if a <= 0.0 {
        return Err(Error::UndefinedObservable("non-positive two-photon rate".into()));
    }
    let v2 = b / a;
    let var_v2 = (cov[1][1] - 2.0 * v2 * cov[0][1] + v2 * v2 * cov[0][0]) / (a * a);
    // the scale B carries the side-peak counting error into g²
    let rel_scale = 1.0 / side.sqrt();
    let g2 = 2.0 * a;
    Ok(CoincidenceFit {
        g2,
        g2_err: 2.0 * (cov[0][0] + (a * rel_scale).powi(2)).sqrt(),
        v2,
        v2_err: var_v2.max(0.0).sqrt(),
        pedestal_scale: scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda: f64,
    pub lambda_err: f64,
    pub intercept: f64,
    pub slope: f64,
    pub residuals: Vec<f64>,
}

/// Fits `v = a + b·rate` and maps the zero-rate intercept `a = λ²√M` to λ.
pub fn fit_lambda_linear(points: &[(f64, f64)], overlap: f64) -> Result<LambdaFit> {
    if points.len() < 3 {
        return Err(Error::Validation(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if !(overlap > 0.0 && overlap <= 1.0) {
        return Err(Error::Validation(format!("overlap {overlap} outside (0, 1]")));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let spread = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if sxx <= 1e-24 * spread.max(1.0).powi(2) * n {
        return Err(Error::DegenerateAbscissa);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = points.iter().map(|p| p.1 - intercept - slope * p.0).collect();
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / (n - 2.0).max(1.0);
    let intercept_err = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    let root_m = overlap.sqrt();
    let l2 = intercept / root_m;
    if !(0.0..=1.0 + 1e-12).contains(&l2) {
        return Err(Error::Infeasible(format!(
            "intercept {intercept} implies lambda^2 = {l2} outside [0, 1]"
        )));
    }
    let lambda = l2.clamp(0.0, 1.0).sqrt();
    Ok(LambdaFit {
        lambda,
        lambda_err: if lambda > 0.0 {
            intercept_err / (2.0 * lambda * root_m)
        } else {
            f64::INFINITY
        },
        intercept,
        slope,
        residuals,
    })
}
