//! Negative log-likelihood of a transition matrix, its convex conjugate, the
//! entrywise proximal map used by the dual solver, and the empirical MLE.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::markov::{TransitionCounts, TransitionMatrix};
use crate::Matrix;

/// Normalized counts `w_ij = n_ij / n`. The support `Ω` is `{w_ij > 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodData {
    weights: Matrix,
}

impl LikelihoodData {
    pub fn from_counts(counts: &TransitionCounts) -> Result<Self> {
        let n = counts.total();
        if n == 0 {
            return Err(Error::InvalidArgument("no transitions observed".into()));
        }
        let p = counts.p();
        let weights = DMatrix::from_fn(p, p, |i, j| counts.get(i, j) as f64 / n as f64);
        Ok(Self { weights })
    }

    pub fn p(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn in_support(&self, i: usize, j: usize) -> bool {
        self.weights[(i, j)] > 0.0
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.max()
    }
}

/// `-Σ_Ω w_ij log Q_ij`; `+∞` when `Q` vanishes somewhere on `Ω`.
pub fn neg_loglik(data: &LikelihoodData, q: &Matrix) -> Result<f64> {
    check_shape(data, q)?;
    let w = data.weights();
    let mut total = 0.0;
    for j in 0..q.ncols() {
        for i in 0..q.nrows() {
            let v = q[(i, j)];
            if v < 0.0 {
                return Err(Error::NegativeEntry { row: i, col: j, value: v });
            }
            let wij = w[(i, j)];
            if wij > 0.0 {
                if v == 0.0 {
                    return Ok(f64::INFINITY);
                }
                total -= wij * v.ln();
            }
        }
    }
    Ok(total)
}

/// Convex conjugate `f*(Ξ)` of the likelihood-plus-nonnegativity function:
/// `Σ_Ω w (log w - 1 - log(-Ξ))` when `Ξ < 0` on `Ω` and `Ξ ≤ 0` elsewhere,
/// `+∞` otherwise.
pub fn conjugate_value(data: &LikelihoodData, xi: &Matrix) -> f64 {
    let w = data.weights();
    let mut total = 0.0;
    for j in 0..xi.ncols() {
        for i in 0..xi.nrows() {
            let (wij, x) = (w[(i, j)], xi[(i, j)]);
            if wij > 0.0 {
                if x >= 0.0 {
                    return f64::INFINITY;
                }
                total += wij * (wij.ln() - 1.0 - (-x).ln());
            } else if x > 0.0 {
                return f64::INFINITY;
            }
        }
    }
    total
}

/// Minimizer over `ξ ≥ 0` of `-w log ξ + (σ/2)(ξ - g)²`.
///
/// For `w > 0` this is the positive root of `σξ² - σgξ - w = 0`, evaluated in
/// the cancellation-free form for negative `g`.
pub fn prox_conjugate_entry(g: f64, w: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0 && w >= 0.0);
    if w == 0.0 {
        return g.max(0.0);
    }
    let t = w / sigma;
    let disc = (g * g + 4.0 * t).sqrt();
    if g >= 0.0 {
        0.5 * (g + disc)
    } else {
        2.0 * t / (disc - g)
    }
}

/// Row-normalized counts; rows without observations become uniform.
pub fn empirical_mle(counts: &TransitionCounts) -> TransitionMatrix {
    let p = counts.p();
    let totals = counts.row_totals();
    let m = DMatrix::from_fn(p, p, |i, j| {
        if totals[i] == 0 {
            1.0 / p as f64
        } else {
            counts.get(i, j) as f64 / totals[i] as f64
        }
    });
    TransitionMatrix::new(m).expect("row-normalized counts are stochastic")
}

fn check_shape(data: &LikelihoodData, m: &Matrix) -> Result<()> {
    if m.nrows() != data.p() || m.ncols() != data.p() {
        return Err(Error::DimensionMismatch { expected: data.p(), got: m.nrows() });
    }
    Ok(())
}
