//! The four estimators compared in the experiments behind one interface:
//!
//! * `mle`  — row-normalized counts;
//! * `svd`  — rank-`r` truncated SVD of the MLE, rows projected back onto the
//!   simplex;
//! * `nu`   — one nuclear-norm-penalized likelihood solve, with the penalty
//!   chosen by 5-fold cross-validation when not given;
//! * `rank` — rank-constrained likelihood via penalty continuation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::admm::{solve_subproblem, AdmmOptions, SolverReport, SubproblemSpec};
use crate::dc::{penalty_continuation, ContinuationOptions, ContinuationResult, ContinuationSchedule};
use crate::error::{invalid, Error, Result};
use crate::exec::ExecPolicy;
use crate::likelihood::{empirical_mle, LikelihoodData};
use crate::markov::{TransitionCounts, TransitionMatrix, Trajectory};
use crate::rng;
use crate::spectral::{simplex_project_rows, svd_truncate};
use crate::Matrix;

/// Held-out probabilities are floored here when scoring.
pub const CV_SCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Mle,
    Svd,
    Nu,
    Rank,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] =
        [EstimatorKind::Mle, EstimatorKind::Svd, EstimatorKind::Nu, EstimatorKind::Rank];

    pub fn needs_rank(self) -> bool {
        matches!(self, EstimatorKind::Svd | EstimatorKind::Rank)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Mle => "mle",
            EstimatorKind::Svd => "svd",
            EstimatorKind::Nu => "nu",
            EstimatorKind::Rank => "rank",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(EstimatorKind::Mle),
            "svd" => Ok(EstimatorKind::Svd),
            "nu" => Ok(EstimatorKind::Nu),
            "rank" => Ok(EstimatorKind::Rank),
            other => Err(invalid(format!(
                "unknown estimator '{other}' (expected mle, svd, nu or rank)"
            ))),
        }
    }
}

/// `10^(-4 + k/2)` for `k = 0..=8`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=8).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect()
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Proximal weight of the DC iteration.
    pub alpha: f64,
    /// Inner solver settings for `nu` and for cross-validation fits.
    pub admm: AdmmOptions,
    pub schedule: ContinuationSchedule,
    pub continuation: ContinuationOptions,
    pub cv_grid: Vec<f64>,
    pub cv_folds: usize,
    pub cv_seed: u64,
    pub policy: ExecPolicy,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            admm: AdmmOptions { record_trace: false, ..AdmmOptions::default() },
            schedule: ContinuationSchedule::default(),
            continuation: ContinuationOptions::default(),
            cv_grid: default_lambda_grid(),
            cv_folds: 5,
            cv_seed: 0x5eed,
            policy: ExecPolicy::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Target rank; required by `svd` and `rank`, rejected otherwise.
    pub r: Option<usize>,
    /// Nuclear-norm weight for `nu`; cross-validated when absent.
    pub lambda: Option<f64>,
    pub options: SolverOptions,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, r: Option<usize>, lambda: Option<f64>) -> Self {
        Self { kind, r, lambda, options: SolverOptions::default() }
    }

    pub fn mle() -> Self {
        Self::new(EstimatorKind::Mle, None, None)
    }

    pub fn svd(r: usize) -> Self {
        Self::new(EstimatorKind::Svd, Some(r), None)
    }

    pub fn nu(lambda: Option<f64>) -> Self {
        Self::new(EstimatorKind::Nu, None, lambda)
    }

    pub fn rank(r: usize) -> Self {
        Self::new(EstimatorKind::Rank, Some(r), None)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match (self.kind.needs_rank(), self.r) {
            (true, None) => return Err(invalid(format!("estimator {} requires a rank", self.kind))),
            (false, Some(_)) => {
                return Err(invalid(format!("estimator {} does not take a rank", self.kind)))
            }
            (true, Some(r)) if r == 0 || r > p => {
                return Err(invalid(format!("rank {r} must lie in [1, {p}]")))
            }
            _ => {}
        }
        if let Some(l) = self.lambda {
            if self.kind != EstimatorKind::Nu {
                return Err(invalid(format!("estimator {} does not take a lambda", self.kind)));
            }
            if !(l > 0.0) || !l.is_finite() {
                return Err(invalid(format!("lambda {l} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum EstimateReport {
    None,
    Admm(SolverReport),
    Continuation(ContinuationResult),
}

impl EstimateReport {
    /// Per-iteration CSV of the underlying solver, if any.
    pub fn to_csv(&self) -> Option<String> {
        match self {
            EstimateReport::None => None,
            EstimateReport::Admm(r) => Some(r.to_csv()),
            EstimateReport::Continuation(c) => Some(c.to_csv()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub matrix: TransitionMatrix,
    pub report: EstimateReport,
    /// Penalty actually used by `nu`.
    pub lambda: Option<f64>,
}

impl Estimate {
    /// Conditions under which the estimate is not the solution it claims to
    /// be: an inner solve stopped at its cap, or continuation never reached
    /// the target rank.
    pub fn flags(&self) -> Vec<&'static str> {
        let mut flags = Vec::new();
        match &self.report {
            EstimateReport::Admm(r) if !r.converged() => flags.push("admm-cap"),
            EstimateReport::Continuation(c) if !c.rank_feasible => flags.push("rank-infeasible"),
            _ => {}
        }
        flags
    }

    pub fn converged(&self) -> bool {
        self.flags().is_empty()
    }
}

fn fit_nuclear(data: &LikelihoodData, lambda: f64, admm: &AdmmOptions) -> Result<(TransitionMatrix, SolverReport)> {
    let p = data.p();
    let spec = SubproblemSpec { data, linear: Matrix::zeros(p, p), c: lambda, alpha: 0.0 };
    let sol = solve_subproblem(&spec, None, admm)?;
    Ok((TransitionMatrix::from_nonnegative_part(&sol.x)?, sol.report))
}

pub fn estimate(spec: &EstimatorSpec, counts: &TransitionCounts) -> Result<Estimate> {
    let p = counts.p();
    spec.validate(p)?;
    if counts.total() == 0 {
        return Err(invalid("no transitions observed"));
    }
    let opts = &spec.options;
    match spec.kind {
        EstimatorKind::Mle => Ok(Estimate {
            matrix: empirical_mle(counts),
            report: EstimateReport::None,
            lambda: None,
        }),
        EstimatorKind::Svd => {
            let r = spec.r.expect("validated");
            let mle = empirical_mle(counts);
            let low = svd_truncate(mle.matrix(), r)?.reconstruct();
            Ok(Estimate { matrix: simplex_project_rows(&low), report: EstimateReport::None, lambda: None })
        }
        EstimatorKind::Nu => {
            let lambda = match spec.lambda {
                Some(l) => l,
                None => {
                    cross_validate_lambda_pairs(
                        p,
                        &counts.to_pairs(),
                        &opts.cv_grid,
                        opts.cv_folds,
                        opts.cv_seed,
                        &opts.admm,
                        opts.policy,
                    )?
                    .lambda
                }
            };
            let data = LikelihoodData::from_counts(counts)?;
            let (matrix, report) = fit_nuclear(&data, lambda, &opts.admm)?;
            Ok(Estimate { matrix, report: EstimateReport::Admm(report), lambda: Some(lambda) })
        }
        EstimatorKind::Rank => {
            let r = spec.r.expect("validated");
            let data = LikelihoodData::from_counts(counts)?;
            let result = penalty_continuation(&data, r, opts.alpha, &opts.schedule, &opts.continuation)?;
            Ok(Estimate {
                matrix: TransitionMatrix::from_nonnegative_part(&result.x)?,
                report: EstimateReport::Continuation(result),
                lambda: None,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub lambda: f64,
    /// `(λ, mean held-out negative log-likelihood)`, λ ascending.
    pub scores: Vec<(f64, f64)>,
}

/// Chooses the `nu` penalty by `folds`-fold cross-validation over transition
/// pairs.
pub fn cross_validate_lambda(
    traj: &Trajectory,
    grid: &[f64],
    folds: usize,
    seed: u64,
    admm: &AdmmOptions,
    policy: ExecPolicy,
) -> Result<CvOutcome> {
    cross_validate_lambda_pairs(traj.p(), &traj.transitions(), grid, folds, seed, admm, policy)
}

/// Pair-level cross-validation: pairs are shuffled with `seed` and dealt
/// round-robin into folds; each `(λ, fold)` fit trains on the other folds and
/// scores the mean held-out `−log max(P̂_ij, 1e-12)`. Ties go to the smaller λ.
pub fn cross_validate_lambda_pairs(
    p: usize,
    pairs: &[(usize, usize)],
    grid: &[f64],
    folds: usize,
    seed: u64,
    admm: &AdmmOptions,
    policy: ExecPolicy,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(invalid("lambda grid is empty"));
    }
    if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(invalid("lambda grid values must be positive"));
    }
    if folds < 2 {
        return Err(invalid("cross-validation needs at least 2 folds"));
    }
    if pairs.len() < folds {
        return Err(invalid(format!(
            "{} transition pairs cannot fill {folds} folds",
            pairs.len()
        )));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() == 1 {
        return Ok(CvOutcome { lambda: grid[0], scores: vec![(grid[0], f64::NAN)] });
    }

    let fold_of = fold_assignment(pairs.len(), folds, seed);
    let mut train_data = Vec::with_capacity(folds);
    let mut held_out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); folds];
    for k in 0..folds {
        let mut counts = nalgebra::DMatrix::<u64>::zeros(p, p);
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            if fold_of[idx] == k {
                held_out[k].push((i, j));
            } else {
                counts[(i, j)] += 1;
            }
        }
        let counts = TransitionCounts::from_matrix(counts)?;
        train_data.push(LikelihoodData::from_counts(&counts)?);
    }

    let items: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|l| (0..folds).map(move |k| (l, k))).collect();
    let scores = policy.map(items, |(l, k)| -> Result<f64> {
        let (fit, _) = fit_nuclear(&train_data[k], grid[l], admm)?;
        let m = fit.matrix();
        let nll: f64 = held_out[k].iter().map(|&(i, j)| -m[(i, j)].max(CV_SCORE_FLOOR).ln()).sum();
        Ok(nll / held_out[k].len() as f64)
    });

    let mut mean = vec![0.0; grid.len()];
    for (idx, s) in scores.into_iter().enumerate() {
        mean[idx / folds] += s? / folds as f64;
    }
    let mut best = 0;
    for l in 1..grid.len() {
        if mean[l] < mean[best] {
            best = l;
        }
    }
    Ok(CvOutcome { lambda: grid[best], scores: grid.into_iter().zip(mean).collect() })
}

/// Fold index of each pair: a seeded shuffle dealt round-robin, so fold
/// sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::from_seed(seed));
    let mut fold_of = vec![0; n];
    for (pos, &idx) in order.iter().enumerate() {
        fold_of[idx] = pos % folds;
    }
    fold_of
}
