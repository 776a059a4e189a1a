//! SVD-based primitives: truncated SVD, Ky Fan and nuclear norms, the Ky Fan
//! subgradient, spectral-ball projection, sin-theta distances and row-wise
//! simplex projection.
//!
//! Decompositions are dense; [`svd_truncate`] takes the requested rank so a
//! partial backend can be substituted without touching callers.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::markov::TransitionMatrix;
use crate::Matrix;

/// Relative threshold defining numerical rank: `#{i : σ_i > 1e-8 σ_1}`.
pub const RANK_REL_TOL: f64 = 1e-8;

/// Singular triplets sorted by nonincreasing singular value.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `p × k`, orthonormal columns.
    pub left: Matrix,
    pub singular_values: DVector<f64>,
    /// `p × k`, orthonormal columns (not transposed).
    pub right: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.left.clone();
        for (k, s) in self.singular_values.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*s);
        }
        scaled * self.right.transpose()
    }

    fn truncated(mut self, k: usize) -> Self {
        let keep = k.min(self.rank());
        self.left = self.left.columns(0, keep).into_owned();
        self.right = self.right.columns(0, keep).into_owned();
        self.singular_values = self.singular_values.rows(0, keep).into_owned();
        self
    }
}

/// Full SVD with descending singular values. Ties keep the decomposition's
/// own order, so the result is deterministic.
pub fn full_svd(m: &Matrix) -> SvdFactors {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    SvdFactors {
        left: Matrix::from_fn(u.nrows(), order.len(), |i, k| u[(i, order[k])]),
        singular_values: DVector::from_iterator(order.len(), order.iter().map(|&k| s[k])),
        right: Matrix::from_fn(vt.ncols(), order.len(), |i, k| vt[(order[k], i)]),
    }
}

pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Top-`k` singular triplets of `m`.
pub fn svd_truncate(m: &Matrix, k: usize) -> Result<SvdFactors> {
    let n = m.nrows().min(m.ncols());
    if k == 0 || k > n {
        return Err(invalid(format!("truncation rank {k} must lie in [1, {n}]")));
    }
    Ok(full_svd(m).truncated(k))
}

fn check_rank(m: &Matrix, r: usize) -> Result<()> {
    let n = m.nrows().min(m.ncols());
    if r == 0 || r > n {
        return Err(invalid(format!("rank {r} must lie in [1, {n}]")));
    }
    Ok(())
}

/// Sum of the `r` largest singular values.
pub fn kyfan_norm(m: &Matrix, r: usize) -> Result<f64> {
    check_rank(m, r)?;
    Ok(singular_values(m).iter().take(r).sum())
}

pub fn nuclear_norm(m: &Matrix) -> f64 {
    m.singular_values().sum()
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// `Σ_{i>r} σ_i`, the gap between the nuclear and Ky Fan `r`-norms.
pub fn tail_singular_mass(m: &Matrix, r: usize) -> f64 {
    singular_values(m).iter().skip(r).sum()
}

pub fn numerical_rank(m: &Matrix) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > RANK_REL_TOL * top).count(),
        _ => 0,
    }
}

/// `U_r V_rᵀ` from the top-`r` singular vectors: the vertex `(1,…,1,0,…,0)`
/// of the Ky Fan subdifferential.
pub fn kyfan_subgradient(m: &Matrix, r: usize) -> Result<Matrix> {
    check_rank(m, r)?;
    let f = full_svd(m).truncated(r);
    Ok(&f.left * f.right.transpose())
}

/// Frobenius projection onto `{S : ‖S‖₂ ≤ c}`: singular values clipped at `c`.
pub fn project_spectral_ball(m: &Matrix, c: f64) -> Result<Matrix> {
    if !(c >= 0.0) {
        return Err(invalid(format!("radius {c} must be nonnegative")));
    }
    let f = full_svd(m);
    if f.singular_values.iter().all(|&s| s <= c) {
        return Ok(m.clone());
    }
    let mut clipped = f;
    clipped.singular_values.iter_mut().for_each(|s| *s = s.min(c));
    Ok(clipped.reconstruct())
}

fn check_orthonormal(u: &Matrix, what: &str) -> Result<()> {
    let k = u.ncols();
    let err = (u.transpose() * u - Matrix::identity(k, k)).amax();
    if err > 1e-8 {
        return Err(invalid(format!("{what} columns are not orthonormal (error {err:e})")));
    }
    Ok(())
}

/// `‖sin Θ(Û, U)‖_F = sqrt(max(0, r − ‖ÛᵀU‖_F²))`.
pub fn sin_theta(u: &Matrix, u_hat: &Matrix) -> Result<f64> {
    if u.shape() != u_hat.shape() {
        return Err(Error::DimensionMismatch { expected: u.ncols(), got: u_hat.ncols() });
    }
    check_orthonormal(u, "first basis")?;
    check_orthonormal(u_hat, "second basis")?;
    let r = u.ncols() as f64;
    let overlap = (u_hat.transpose() * u).norm_squared();
    Ok((r - overlap).max(0.0).sqrt())
}

/// Euclidean projection of `v` onto the probability simplex, by the sorted
/// threshold rule.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Replaces each row by its simplex projection.
pub fn simplex_project_rows(m: &Matrix) -> TransitionMatrix {
    let p = m.nrows();
    let mut out = DMatrix::zeros(p, m.ncols());
    for i in 0..p {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        let proj = project_simplex(&row);
        let s: f64 = proj.iter().sum();
        for (j, v) in proj.into_iter().enumerate() {
            out[(i, j)] = v / s;
        }
    }
    TransitionMatrix::new(out).expect("simplex rows are stochastic")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random(r: &mut rng::Rng, p: usize) -> Matrix {
        Matrix::from_fn(p, p, |_, _| r.random::<f64>() * 2.0 - 1.0)
    }

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn truncated_svd_examples() {
        let f = svd_truncate(&diag(&[3.0, 2.0, 1.0]), 2).unwrap();
        assert_abs_diff_eq!(f.singular_values[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.singular_values[1], 2.0, epsilon = 1e-14);

        let u = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let v = DVector::from_row_slice(&[0.3, 1.0, 2.0]);
        let m = &u * v.transpose();
        let f = svd_truncate(&m, 1).unwrap();
        assert!((f.reconstruct() - &m).amax() < 1e-13);

        let mut r = rng::from_seed(1);
        let m = random(&mut r, 20);
        let f = svd_truncate(&m, 20).unwrap();
        assert!((f.reconstruct() - &m).norm() <= 1e-10);
        assert!(svd_truncate(&m, 0).is_err());
        assert!(svd_truncate(&m, 21).is_err());
    }

    #[test]
    fn truncation_error_is_next_singular_value() {
        let mut r = rng::from_seed(2);
        let m = random(&mut r, 12);
        let s = singular_values(&m);
        for k in 1..12 {
            let f = svd_truncate(&m, k).unwrap();
            assert_abs_diff_eq!(spectral_norm(&(&m - f.reconstruct())), s[k], epsilon = 1e-8);
        }
    }

    #[test]
    fn factors_are_orthonormal_and_sorted() {
        let mut r = rng::from_seed(3);
        let f = full_svd(&random(&mut r, 15));
        let k = f.rank();
        assert!((f.left.transpose() * &f.left - Matrix::identity(k, k)).amax() < 1e-10);
        assert!((f.right.transpose() * &f.right - Matrix::identity(k, k)).amax() < 1e-10);
        assert!(f.singular_values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn kyfan_examples() {
        let d = diag(&[3.0, 2.0, 1.0]);
        assert_abs_diff_eq!(kyfan_norm(&d, 2).unwrap(), 5.0, epsilon = 1e-13);
        assert_abs_diff_eq!(kyfan_norm(&d, 3).unwrap(), nuclear_norm(&d), epsilon = 1e-13);
        assert!(kyfan_norm(&d, 4).is_err());
    }

    #[test]
    fn kyfan_gap_vanishes_exactly_at_low_rank() {
        let mut r = rng::from_seed(4);
        for rank in 1..5 {
            let a = Matrix::from_fn(10, rank, |_, _| r.random::<f64>() - 0.5);
            let b = Matrix::from_fn(rank, 10, |_, _| r.random::<f64>() - 0.5);
            let m = a * b;
            for target in 1..8 {
                let gap = nuclear_norm(&m) - kyfan_norm(&m, target).unwrap();
                if target >= rank {
                    assert!(gap.abs() < 1e-12, "rank {rank} target {target}: {gap}");
                } else {
                    assert!(gap > 1e-6);
                }
            }
        }
    }

    #[test]
    fn kyfan_subgradient_of_diagonal() {
        let w = kyfan_subgradient(&diag(&[3.0, 2.0, 1.0]), 2).unwrap();
        assert!((w - diag(&[1.0, 1.0, 0.0])).amax() < 1e-14);
    }

    #[test]
    fn kyfan_subgradient_of_zero_is_still_valid() {
        let z = Matrix::zeros(4, 4);
        let w = kyfan_subgradient(&z, 1).unwrap();
        assert!(spectral_norm(&w) <= 1.0 + 1e-10);
        let mut r = rng::from_seed(5);
        for _ in 0..20 {
            let y = random(&mut r, 4);
            assert!(kyfan_norm(&y, 1).unwrap() >= w.dot(&y) - 1e-12);
        }
    }

    #[test]
    fn spectral_ball_examples() {
        let p = project_spectral_ball(&diag(&[3.0, 1.0]), 2.0).unwrap();
        assert!((p - diag(&[2.0, 1.0])).amax() < 1e-14);
        let small = diag(&[0.5, -0.25]);
        assert_eq!(project_spectral_ball(&small, 1.0).unwrap(), small);
        let mut r = rng::from_seed(6);
        let m = random(&mut r, 5);
        assert!(project_spectral_ball(&m, 0.0).unwrap().amax() < 1e-14);
        assert!(project_spectral_ball(&m, -1.0).is_err());
    }

    #[test]
    fn sin_theta_examples() {
        let e = Matrix::identity(4, 4);
        let u = e.columns(0, 2).into_owned();
        let w = e.columns(2, 2).into_owned();
        assert_abs_diff_eq!(sin_theta(&u, &u).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sin_theta(&u, &w).unwrap(), 2f64.sqrt(), epsilon = 1e-12);
        assert!(sin_theta(&u, &(u.clone() * 2.0)).is_err());
    }

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(project_simplex(&[0.6, 0.6]), vec![0.5, 0.5]);
        let m = simplex_project_rows(&Matrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.1, 0.1]));
        assert_eq!(m.matrix(), &Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.5]));
    }

    #[test]
    fn numerical_rank_counts_relative_singular_values() {
        assert_eq!(numerical_rank(&diag(&[1.0, 1e-3, 1e-9])), 2);
        assert_eq!(numerical_rank(&Matrix::zeros(3, 3)), 0);
    }
}
