//! Accuracy measures of an estimate against the true transition matrix.

use crate::error::{Error, Result};
use crate::markov::{StationaryDistribution, TransitionMatrix};
use crate::spectral::{sin_theta, svd_truncate};
use crate::Matrix;

/// Estimates below this are floored inside the KL divergence.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaMetrics {
    pub eta_f: f64,
    pub eta_u: f64,
    pub eta_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub kl: f64,
    /// Entries of the estimate floored at [`KL_FLOOR`] where the truth is positive.
    pub kl_clipped: usize,
    pub l2_risk: f64,
    pub eta_f: f64,
    pub eta_u: f64,
    pub eta_v: f64,
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.nrows() });
    }
    Ok(())
}

/// `Σ μ_i P_ij log(P_ij / max(Q_ij, 1e-12))`, skipping `P_ij = 0`.
pub fn kl_divergence(p: &TransitionMatrix, mu: &StationaryDistribution, q: &TransitionMatrix) -> Result<f64> {
    let (pm, qm, w) = (p.matrix(), q.matrix(), mu.weights());
    check_same_shape(pm, qm)?;
    if w.len() != pm.nrows() {
        return Err(Error::DimensionMismatch { expected: pm.nrows(), got: w.len() });
    }
    let mut total = 0.0;
    for i in 0..pm.nrows() {
        let mut row = 0.0;
        for j in 0..pm.ncols() {
            let pij = pm[(i, j)];
            if pij > 0.0 {
                row += pij * (pij / qm[(i, j)].max(KL_FLOOR)).ln();
            }
        }
        total += w[i] * row;
    }
    Ok(total.max(0.0))
}

pub fn kl_clipped_entries(p: &TransitionMatrix, q: &TransitionMatrix) -> usize {
    p.matrix()
        .iter()
        .zip(q.matrix().iter())
        .filter(|(&a, &b)| a > 0.0 && b < KL_FLOOR)
        .count()
}

/// `Σ_i ‖P_i· − Q_i·‖²`.
pub fn l2_row_risk(p: &Matrix, q: &Matrix) -> Result<f64> {
    check_same_shape(p, q)?;
    Ok((p - q).norm_squared())
}

/// `η_F = ‖P − P̂‖_F / √p` and the sin-theta distances between the rank-`r`
/// left (`η_U`) and right (`η_V`) singular subspaces.
pub fn eta_metrics(p: &Matrix, p_hat: &Matrix, r: usize) -> Result<EtaMetrics> {
    check_same_shape(p, p_hat)?;
    let truth = svd_truncate(p, r)?;
    let est = svd_truncate(p_hat, r)?;
    Ok(EtaMetrics {
        eta_f: (p - p_hat).norm() / (p.nrows() as f64).sqrt(),
        eta_u: sin_theta(&truth.left, &est.left)?,
        eta_v: sin_theta(&truth.right, &est.right)?,
    })
}

pub fn evaluate(
    truth: &TransitionMatrix,
    mu: &StationaryDistribution,
    estimate: &TransitionMatrix,
    r: usize,
) -> Result<EvalResult> {
    let eta = eta_metrics(truth.matrix(), estimate.matrix(), r)?;
    Ok(EvalResult {
        kl: kl_divergence(truth, mu, estimate)?,
        kl_clipped: kl_clipped_entries(truth, estimate),
        l2_risk: l2_row_risk(truth.matrix(), estimate.matrix())?,
        eta_f: eta.eta_f,
        eta_u: eta.eta_u,
        eta_v: eta.eta_v,
    })
}
