//! Proximal difference-of-convex iteration for the rank-penalized likelihood
//!
//! ```text
//! min  F(X) = f(X) + c (‖X‖_* − ‖X‖_(r))   s.t.  X 1 = 1
//! ```
//!
//! and the penalty continuation that grows `c` until the iterate has rank at
//! most `r`. Each outer step linearizes the Ky Fan term at `X^k` and hands
//! the convex remainder, plus `(α/2)‖X − X^k‖²`, to the sGS-ADMM.

use std::fmt::Write as _;

use crate::admm::{solve_subproblem, AdmmOptions, DualState, SubproblemSpec};
use crate::error::{invalid, Result};
use crate::likelihood::{neg_loglik, LikelihoodData};
use crate::spectral::{full_svd, kyfan_subgradient, numerical_rank, tail_singular_mass};
use crate::Matrix;

#[derive(Debug, Clone)]
pub struct PenalizedProblem<'a> {
    pub data: &'a LikelihoodData,
    pub c: f64,
    pub alpha: f64,
    pub r: usize,
}

impl PenalizedProblem<'_> {
    fn validate(&self) -> Result<()> {
        let p = self.data.p();
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(invalid(format!("penalty c = {} must be positive", self.c)));
        }
        if !(self.alpha >= 0.0) {
            return Err(invalid(format!("alpha = {} must be nonnegative", self.alpha)));
        }
        if self.r == 0 || self.r > p {
            return Err(invalid(format!("rank {} must lie in [1, {p}]", self.r)));
        }
        Ok(())
    }

    /// The ADMM subproblem of one DC step at `xk`: linear term
    /// `−c W_k − α X^k`, quadratic weight `α`.
    pub fn linearized_subproblem(&self, xk: &Matrix) -> Result<SubproblemSpec<'_>> {
        let wk = kyfan_subgradient(xk, self.r)?;
        Ok(SubproblemSpec {
            data: self.data,
            linear: -(wk * self.c) - xk * self.alpha,
            c: self.c,
            alpha: self.alpha,
        })
    }
}

/// `f(X) + c (‖X‖_* − ‖X‖_(r))`, `+∞` outside `X ≥ 0`.
pub fn penalized_objective(prob: &PenalizedProblem, x: &Matrix) -> f64 {
    if x.iter().any(|&v| v < 0.0) {
        return f64::INFINITY;
    }
    match neg_loglik(prob.data, x) {
        Ok(l) if l.is_finite() => l + prob.c * tail_singular_mass(x, prob.r),
        _ => f64::INFINITY,
    }
}

#[derive(Debug, Clone)]
pub struct DcOptions {
    /// Step tolerance on `‖X^{k+1} − X^k‖_F`; defaults to `1e-6 (1 + ‖X^0‖_F)`.
    pub eta: Option<f64>,
    pub max_iter: usize,
    pub admm: AdmmOptions,
}

impl Default for DcOptions {
    fn default() -> Self {
        Self { eta: None, max_iter: 100, admm: AdmmOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcIterationRecord {
    pub iteration: usize,
    pub stage: usize,
    pub c: f64,
    pub objective: f64,
    pub step: f64,
    pub rank: usize,
    pub inner_iterations: usize,
    pub inner_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcTermination {
    StepTolerance,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct DcReport {
    /// Row 0 is the starting point.
    pub records: Vec<DcIterationRecord>,
    pub termination: DcTermination,
    pub inner_failures: usize,
}

impl DcReport {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

/// CSV with header `iteration,stage,objective,step,rank`.
pub fn dc_records_csv<'a>(records: impl IntoIterator<Item = &'a DcIterationRecord>) -> String {
    let mut out = String::from("iteration,stage,objective,step,rank\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{}", r.iteration, r.stage, r.objective, r.step, r.rank);
    }
    out
}

#[derive(Debug, Clone)]
pub struct DcSolution {
    pub x: Matrix,
    pub report: DcReport,
    pub state: DualState,
}

fn check_start(prob: &PenalizedProblem, x0: &Matrix) -> Result<()> {
    let p = prob.data.p();
    if x0.nrows() != p || x0.ncols() != p {
        return Err(invalid(format!("starting point must be {p}x{p}")));
    }
    for i in 0..p {
        let s: f64 = x0.row(i).sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(invalid(format!("starting point row {i} sums to {s}")));
        }
        for j in 0..p {
            let v = x0[(i, j)];
            if v < -1e-8 || (prob.data.in_support(i, j) && v <= 0.0) {
                return Err(invalid(format!(
                    "starting point entry ({i}, {j}) = {v} is infeasible"
                )));
            }
        }
    }
    Ok(())
}

/// Proximal DC iteration from `x0`, optionally warm-starting the inner
/// solver. Stops once a step is no longer than `eta` or after
/// `opts.max_iter` steps.
pub fn pdc_solve(
    prob: &PenalizedProblem,
    x0: &Matrix,
    opts: &DcOptions,
    warm: Option<DualState>,
    stage: usize,
) -> Result<DcSolution> {
    prob.validate()?;
    check_start(prob, x0)?;
    let eta = opts.eta.unwrap_or(1e-6 * (1.0 + x0.norm()));
    if !(eta > 0.0) {
        return Err(invalid("step tolerance eta must be positive"));
    }
    let p = prob.data.p();
    let mut xk = x0.map(|v| v.max(0.0));
    let mut state = warm.unwrap_or_else(|| DualState::zeros(p, opts.admm.sigma));
    let mut records = vec![DcIterationRecord {
        iteration: 0,
        stage,
        c: prob.c,
        objective: penalized_objective(prob, &xk),
        step: 0.0,
        rank: numerical_rank(&xk),
        inner_iterations: 0,
        inner_converged: true,
    }];
    let mut inner_failures = 0;
    let mut termination = DcTermination::IterationCap;

    for k in 1..=opts.max_iter {
        let spec = prob.linearized_subproblem(&xk)?;
        let sol = solve_subproblem(&spec, Some(state), &opts.admm)?;
        if !sol.report.converged() {
            inner_failures += 1;
        }
        let next = sol.x.map(|v| v.max(0.0));
        let step = (&next - &xk).norm();
        records.push(DcIterationRecord {
            iteration: k,
            stage,
            c: prob.c,
            objective: penalized_objective(prob, &next),
            step,
            rank: numerical_rank(&next),
            inner_iterations: sol.report.iterations,
            inner_converged: sol.report.converged(),
        });
        xk = next;
        state = sol.state;
        if step <= eta {
            termination = DcTermination::StepTolerance;
            break;
        }
    }
    Ok(DcSolution {
        x: xk,
        report: DcReport { records, termination, inner_failures },
        state,
    })
}

/// Step length of one extra DC iteration from `x`. Zero certifies the
/// fixed-point condition that characterizes critical points.
pub fn stationarity_gap(
    prob: &PenalizedProblem,
    x: &Matrix,
    admm: &AdmmOptions,
    warm: Option<DualState>,
) -> Result<f64> {
    let opts = DcOptions { eta: Some(f64::INFINITY), max_iter: 1, admm: admm.clone() };
    let sol = pdc_solve(prob, x, &opts, warm, 0)?;
    Ok(sol.report.records.last().map_or(0.0, |r| r.step))
}

/// Growth schedule of the penalty weight: `c0, c0 κ, c0 κ², …`.
#[derive(Debug, Clone)]
pub struct ContinuationSchedule {
    /// Defaults to `0.1 · p · max_ij w_ij`.
    pub c0: Option<f64>,
    pub growth: f64,
    pub max_stages: usize,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        Self { c0: None, growth: 10f64.sqrt(), max_stages: 8 }
    }
}

impl ContinuationSchedule {
    pub fn initial_weight(&self, data: &LikelihoodData) -> f64 {
        self.c0.unwrap_or(0.1 * data.max_weight() * data.p() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    pub dc: DcOptions,
    /// Rank-`r` rounding is attempted once `Σ_{i>r} σ_i ≤ snap_tol · σ_1`.
    pub snap_tol: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self { dc: DcOptions::default(), snap_tol: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub c: f64,
    pub report: DcReport,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub x: Matrix,
    pub rank_feasible: bool,
    pub stages: Vec<StageReport>,
    /// Penalty weight of the last stage run (`c0` if none ran).
    pub final_c: f64,
}

impl ContinuationResult {
    pub fn records(&self) -> impl Iterator<Item = &DcIterationRecord> {
        self.stages.iter().flat_map(|s| s.report.records.iter())
    }

    pub fn inner_failures(&self) -> usize {
        self.stages.iter().map(|s| s.report.inner_failures).sum()
    }

    pub fn to_csv(&self) -> String {
        dc_records_csv(self.records())
    }
}

/// Row-normalized weights with every entry floored at `1e-8`, so the
/// log-likelihood is finite at the start.
pub fn initial_point(data: &LikelihoodData) -> Matrix {
    const FLOOR: f64 = 1e-8;
    let p = data.p();
    let w = data.weights();
    let mut x = Matrix::zeros(p, p);
    for i in 0..p {
        let total: f64 = w.row(i).sum();
        for j in 0..p {
            let v = if total > 0.0 { w[(i, j)] / total } else { 1.0 / p as f64 };
            x[(i, j)] = v.max(FLOOR);
        }
        let s: f64 = x.row(i).sum();
        x.row_mut(i).scale_mut(1.0 / s);
    }
    x
}

fn rescale_rows(mut x: Matrix) -> Matrix {
    for i in 0..x.nrows() {
        let s: f64 = x.row(i).sum();
        if s > 0.0 {
            x.row_mut(i).scale_mut(1.0 / s);
        }
    }
    x
}

/// Rounds a nearly rank-`r` stochastic matrix to an exactly rank-`r`
/// nonnegative stochastic one by alternating rank truncation with
/// nonnegative row-normalization. Row rescaling preserves rank, so the
/// result has rank at most `r` whenever the truncated iterate is
/// nonnegative.
pub fn round_to_rank(x: &Matrix, r: usize, snap_tol: f64) -> Option<Matrix> {
    let f = full_svd(x);
    let top = f.singular_values.get(0).copied().unwrap_or(0.0);
    let tail: f64 = f.singular_values.iter().skip(r).sum();
    if top <= 0.0 || tail > snap_tol * top {
        return None;
    }
    let mut current = x.clone();
    for _ in 0..500 {
        let svd = full_svd(&current);
        let kept = svd.singular_values.len().min(r);
        let mut truncated = Matrix::zeros(x.nrows(), x.ncols());
        for k in 0..kept {
            truncated += svd.left.column(k) * svd.right.column(k).transpose() * svd.singular_values[k];
        }
        let scale = truncated.amax().max(1.0);
        if truncated.min() >= -1e-15 * scale {
            return Some(rescale_rows(truncated.map(|v| v.max(0.0))));
        }
        current = rescale_rows(truncated.map(|v| v.max(0.0)));
    }
    None
}

/// Runs [`pdc_solve`] for `c = c0 κ^k`, warm-starting each stage, until the
/// iterate rounds to numerical rank at most `r` or the stage cap is hit.
pub fn penalty_continuation(
    data: &LikelihoodData,
    r: usize,
    alpha: f64,
    schedule: &ContinuationSchedule,
    opts: &ContinuationOptions,
) -> Result<ContinuationResult> {
    let p = data.p();
    if r == 0 || r > p {
        return Err(invalid(format!("rank {r} must lie in [1, {p}]")));
    }
    if !(schedule.growth > 1.0) {
        return Err(invalid(format!("growth factor {} must exceed 1", schedule.growth)));
    }
    let c0 = schedule.initial_weight(data);
    if !(c0 > 0.0) {
        return Err(invalid(format!("initial penalty {c0} must be positive")));
    }
    let mut x = initial_point(data);
    if numerical_rank(&x) <= r {
        return Ok(ContinuationResult { x, rank_feasible: true, stages: Vec::new(), final_c: c0 });
    }
    let mut warm = None;
    let mut stages = Vec::new();
    let mut c = c0;
    for stage in 0..schedule.max_stages {
        c = c0 * schedule.growth.powi(stage as i32);
        let prob = PenalizedProblem { data, c, alpha, r };
        let sol = pdc_solve(&prob, &x, &opts.dc, warm, stage)?;
        x = sol.x;
        warm = Some(sol.state);
        stages.push(StageReport { c, report: sol.report });
        if let Some(rounded) = round_to_rank(&x, r, opts.snap_tol) {
            if numerical_rank(&rounded) <= r {
                return Ok(ContinuationResult { x: rounded, rank_feasible: true, stages, final_c: c });
            }
        }
    }
    Ok(ContinuationResult { x, rank_feasible: false, stages, final_c: c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::primal_objective;
    use crate::markov::{count_transitions, generate_latent_lowrank, simulate, SamplingMode, TransitionCounts};
    use crate::spectral::{nuclear_norm, singular_values};
    use nalgebra::DMatrix;

    fn simulated(p: usize, r: usize, n: usize, seed: u64) -> LikelihoodData {
        let truth = generate_latent_lowrank(p, r, seed).unwrap();
        let traj = simulate(&truth, n, SamplingMode::Chain, seed + 1).unwrap();
        LikelihoodData::from_counts(&count_transitions(&traj)).unwrap()
    }

    fn strict_admm() -> AdmmOptions {
        AdmmOptions { tol: 1e-8, max_iter: 20_000, record_trace: false, ..AdmmOptions::default() }
    }

    #[test]
    fn folded_linear_term_reproduces_proximal_objective() {
        let data = simulated(6, 2, 400, 3);
        let prob = PenalizedProblem { data: &data, c: 0.7, alpha: 0.3, r: 2 };
        let xk = initial_point(&data);
        let spec = prob.linearized_subproblem(&xk).unwrap();
        let wk = kyfan_subgradient(&xk, 2).unwrap();
        let offset = 0.5 * prob.alpha * xk.norm_squared();
        for seed in 0..10u64 {
            let x = Matrix::from_fn(6, 6, |i, j| 0.1 + ((i * 7 + j * 3 + seed as usize) % 5) as f64 * 0.05);
            let unfolded = neg_loglik(&data, &x).unwrap() + prob.c * nuclear_norm(&x) - prob.c * wk.dot(&x)
                + 0.5 * prob.alpha * (&x - &xk).norm_squared();
            let folded = primal_objective(&spec, &x) + offset;
            assert!((folded - unfolded).abs() < 1e-10 * (1.0 + unfolded.abs()));
        }
    }

    #[test]
    fn penalty_vanishes_at_low_rank() {
        let data = simulated(5, 2, 300, 1);
        let x = generate_latent_lowrank(5, 2, 8).unwrap().into_matrix();
        let prob = PenalizedProblem { data: &data, c: 3.0, alpha: 0.0, r: 2 };
        let l = neg_loglik(&data, &x).unwrap();
        assert!((penalized_objective(&prob, &x) - l).abs() < 1e-10 * (1.0 + l));
        let tiny = PenalizedProblem { c: 1e-12, ..prob.clone() };
        let full = initial_point(&data);
        assert!((penalized_objective(&tiny, &full) - neg_loglik(&data, &full).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn penalty_is_tail_singular_mass() {
        let counts = TransitionCounts::from_matrix(DMatrix::from_row_slice(3, 3, &[8, 1, 1, 1, 8, 1, 1, 1, 8])).unwrap();
        let data = LikelihoodData::from_counts(&counts).unwrap();
        let x = Matrix::from_row_slice(3, 3, &[0.8, 0.1, 0.1, 0.1, 0.8, 0.1, 0.1, 0.1, 0.8]);
        let prob = PenalizedProblem { data: &data, c: 0.5, alpha: 0.0, r: 1 };
        let sv = singular_values(&x);
        let expected = neg_loglik(&data, &x).unwrap() + 0.5 * (sv[1] + sv[2]);
        assert!((penalized_objective(&prob, &x) - expected).abs() < 1e-12);
        assert!((sv[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn infinite_eta_runs_one_iteration() {
        let data = simulated(8, 2, 500, 2);
        let prob = PenalizedProblem { data: &data, c: 0.1, alpha: 1e-3, r: 2 };
        let opts = DcOptions { eta: Some(f64::INFINITY), ..DcOptions::default() };
        let sol = pdc_solve(&prob, &initial_point(&data), &opts, None, 0).unwrap();
        assert_eq!(sol.report.iterations(), 1);
        assert_eq!(sol.report.termination, DcTermination::StepTolerance);
    }

    #[test]
    fn objective_decreases_sufficiently() {
        let data = simulated(20, 3, 6000, 5);
        let alpha = 1e-3;
        let prob = PenalizedProblem { data: &data, c: 0.05, alpha, r: 3 };
        let opts = DcOptions { max_iter: 15, admm: strict_admm(), ..DcOptions::default() };
        let sol = pdc_solve(&prob, &initial_point(&data), &opts, None, 0).unwrap();
        let recs = &sol.report.records;
        assert!(recs.len() > 2);
        for pair in recs.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let bound = a.objective - 0.5 * alpha * b.step * b.step + 1e-7 * (1.0 + a.objective.abs());
            assert!(b.objective <= bound, "iteration {}: {} > {}", b.iteration, b.objective, bound);
        }
        assert!(sol.x.min() >= 0.0);
        for i in 0..20 {
            assert!((sol.x.row(i).sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn full_rank_target_returns_immediately() {
        let data = simulated(6, 2, 300, 4);
        let res = penalty_continuation(&data, 6, 1e-3, &ContinuationSchedule::default(), &ContinuationOptions::default())
            .unwrap();
        assert!(res.rank_feasible);
        assert!(res.stages.is_empty());
        assert_eq!(res.x, initial_point(&data));
    }

    #[test]
    fn continuation_reaches_target_rank() {
        let data = simulated(20, 3, 40_000, 11);
        let res =
            penalty_continuation(&data, 3, 1e-3, &ContinuationSchedule::default(), &ContinuationOptions::default())
                .unwrap();
        assert!(res.rank_feasible);
        assert!(numerical_rank(&res.x) <= 3);
        assert!(res.x.min() >= 0.0);
        let prob = PenalizedProblem { data: &data, c: res.final_c, alpha: 1e-3, r: 3 };
        let l = neg_loglik(&data, &res.x).unwrap();
        assert!((penalized_objective(&prob, &res.x) - l).abs() <= 1e-9 * (1.0 + l));
        assert!(res.to_csv().starts_with("iteration,stage,objective,step,rank\n"));
    }

    #[test]
    fn stationarity_gap_small_at_fixed_point_large_far_away() {
        let data = simulated(8, 2, 4000, 6);
        let prob = PenalizedProblem { data: &data, c: 0.05, alpha: 1e-3, r: 2 };
        let x0 = initial_point(&data);
        let eta = 1e-6 * (1.0 + x0.norm());
        let opts = DcOptions { eta: Some(eta), max_iter: 500, admm: strict_admm() };
        let sol = pdc_solve(&prob, &x0, &opts, None, 0).unwrap();
        assert_eq!(sol.report.termination, DcTermination::StepTolerance);
        let gap = stationarity_gap(&prob, &sol.x, &strict_admm(), Some(sol.state)).unwrap();
        assert!(gap >= 0.0 && gap <= 10.0 * eta, "gap {gap}");
        let far = stationarity_gap(&prob, &Matrix::from_element(8, 8, 0.125), &strict_admm(), None).unwrap();
        assert!(far > eta);
    }

    #[test]
    fn rounding_requires_small_tail() {
        let x = Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        assert!(round_to_rank(&x, 1, 1e-4).is_none());
        let low = Matrix::from_row_slice(2, 2, &[0.6, 0.4, 0.6 + 1e-7, 0.4 - 1e-7]);
        let r = round_to_rank(&low, 1, 1e-4).unwrap();
        assert_eq!(numerical_rank(&r), 1);
        assert!((r.row(1).sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_infeasible_start() {
        let data = simulated(4, 2, 100, 1);
        let prob = PenalizedProblem { data: &data, c: 0.1, alpha: 1e-3, r: 2 };
        let bad = Matrix::from_element(4, 4, 0.5);
        assert!(pdc_solve(&prob, &bad, &DcOptions::default(), None, 0).is_err());
    }
}
