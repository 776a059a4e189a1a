//! Symmetric Gauss–Seidel ADMM for the dual of the nuclear-norm-penalized
//! likelihood subproblem.
//!
//! Primal problem, for a linear term `W`, weight `c > 0` and `α ≥ 0`:
//!
//! ```text
//! (P)  min  f(X) + <W, X> + c ‖X‖_* + (α/2) ‖X‖_F²   s.t.  X 1 = 1
//! (D)  min  f*(-Ξ) - <1, y> + (α/2) ‖Z‖_F²
//!      s.t. Ξ + y 1ᵀ + S + α Z = W,   ‖S‖₂ ≤ c
//! ```
//!
//! where `f` is the negative log-likelihood plus the indicator of `X ≥ 0`.
//! Each sweep updates the blocks in the order `y, Ξ, y, Z, S, Z` and then the
//! multiplier `X`, which converges to the solution of (P). Finiteness of
//! `f*(-Ξ)` forces `Ξ > 0` on the support and `Ξ ≥ 0` off it.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::likelihood::{conjugate_value, neg_loglik, prox_conjugate_entry, LikelihoodData};
use crate::spectral::{nuclear_norm, project_spectral_ball};
use crate::Matrix;

/// Upper end of the admissible multiplier steplength interval, `(1 + √5) / 2`.
pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

#[derive(Debug, Clone)]
pub struct SubproblemSpec<'a> {
    pub data: &'a LikelihoodData,
    /// Coefficient of the `<W, X>` term.
    pub linear: Matrix,
    /// Nuclear-norm weight, the spectral-ball radius of the `S` block.
    pub c: f64,
    /// Weight of `(α/2) ‖X‖_F²`; the `Z` block is dropped when zero.
    pub alpha: f64,
}

impl SubproblemSpec<'_> {
    pub fn p(&self) -> usize {
        self.data.p()
    }

    fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.linear.nrows() != p || self.linear.ncols() != p {
            return Err(Error::DimensionMismatch { expected: p, got: self.linear.nrows() });
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(invalid(format!("nuclear-norm weight c = {} must be positive", self.c)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("alpha = {} must be nonnegative", self.alpha)));
        }
        Ok(())
    }
}

/// Dual iterate `(Ξ, y, S, Z; X)` together with the penalty parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub xi: Matrix,
    pub y: DVector<f64>,
    pub s: Matrix,
    pub z: Matrix,
    /// Multiplier of the dual equality constraint; the primal iterate.
    pub x: Matrix,
    pub sigma: f64,
}

impl DualState {
    pub fn zeros(p: usize, sigma: f64) -> Self {
        Self {
            xi: Matrix::zeros(p, p),
            y: DVector::zeros(p),
            s: Matrix::zeros(p, p),
            z: Matrix::zeros(p, p),
            x: Matrix::zeros(p, p),
            sigma,
        }
    }

    pub fn p(&self) -> usize {
        self.x.nrows()
    }
}

/// Order of the block sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepOrder {
    /// `y, Ξ, y, Z, S, Z`.
    #[default]
    SymmetricGaussSeidel,
    /// `y, Ξ, Z, S`; diagnostic only, carries no convergence guarantee.
    PlainGaussSeidel,
}

#[derive(Debug, Clone)]
pub struct AdmmOptions {
    /// Initial penalty parameter when no warm start is given.
    pub sigma: f64,
    /// Multiplier steplength, in `(0, (1 + √5) / 2)`.
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Residual balancing of `σ`; frozen in the last 20% of the budget.
    pub adapt_sigma: bool,
    /// Full KKT residuals (one extra SVD) are evaluated this often.
    pub check_every: usize,
    pub record_trace: bool,
    pub order: SweepOrder,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            gamma: 1.618,
            tol: 1e-6,
            max_iter: 5000,
            adapt_sigma: true,
            check_every: 10,
            record_trace: true,
            order: SweepOrder::SymmetricGaussSeidel,
        }
    }
}

/// Relative optimality measures of an ADMM iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `‖X 1 − 1‖ / (1 + √p)`.
    pub primal_feas: f64,
    /// `‖Ξ + y 1ᵀ + S + αZ − W‖_F / (1 + ‖W‖_F)`.
    pub dual_feas: f64,
    /// Largest natural-map residual of the Ξ, S and Z optimality conditions
    /// with respect to the multiplier `X`.
    pub complementarity: f64,
    /// Relative change of `X` over the last sweep.
    pub gap_proxy: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal_feas.max(self.dual_feas).max(self.complementarity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lagrangian: f64,
    pub primal_feas: f64,
    pub dual_feas: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationCap,
    NoIterations,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub trace: Vec<IterationRecord>,
    pub iterations: usize,
    pub termination: Termination,
    pub residuals: KktResiduals,
}

impl SolverReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// CSV with header `iteration,lagrangian,primal_feas,dual_feas,sigma`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,lagrangian,primal_feas,dual_feas,sigma\n");
        for r in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.iteration, r.lagrangian, r.primal_feas, r.dual_feas, r.sigma
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub x: Matrix,
    pub state: DualState,
    pub report: SolverReport,
}

/// `A*(y) = y 1ᵀ`.
fn broadcast_rows(y: &DVector<f64>, p: usize) -> Matrix {
    Matrix::from_fn(y.len(), p, |i, _| y[i])
}

fn row_sums(m: &Matrix) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

/// `Ξ + A*(y) + S + αZ − W`.
pub fn constraint_residual(state: &DualState, spec: &SubproblemSpec) -> Matrix {
    let p = state.p();
    let mut d = &state.xi + broadcast_rows(&state.y, p) + &state.s - &spec.linear;
    if spec.alpha > 0.0 {
        d += &state.z * spec.alpha;
    }
    d
}

/// `L_σ(Ξ, y, S, Z; X)`.
pub fn augmented_lagrangian(state: &DualState, spec: &SubproblemSpec) -> f64 {
    let sigma = state.sigma;
    let shifted = constraint_residual(state, spec) + &state.x / sigma;
    dual_objective(state, spec) + 0.5 * sigma * shifted.norm_squared()
        - state.x.norm_squared() / (2.0 * sigma)
}

/// Objective of (D): `f*(−Ξ) − <1, y> + (α/2)‖Z‖²`.
pub fn dual_objective(state: &DualState, spec: &SubproblemSpec) -> f64 {
    let mut v = conjugate_value(spec.data, &(-&state.xi)) - state.y.sum();
    if spec.alpha > 0.0 {
        v += 0.5 * spec.alpha * state.z.norm_squared();
    }
    v
}

/// Objective of (P); `+∞` outside `X ≥ 0` or where the likelihood is infinite.
pub fn primal_objective(spec: &SubproblemSpec, x: &Matrix) -> f64 {
    if x.iter().any(|&v| v < 0.0) {
        return f64::INFINITY;
    }
    let f = match neg_loglik(spec.data, x) {
        Ok(v) => v,
        Err(_) => return f64::INFINITY,
    };
    f + spec.linear.dot(x) + spec.c * nuclear_norm(x) + 0.5 * spec.alpha * x.norm_squared()
}

/// Closed-form `y` minimizer: `(A(W − Ξ − S − αZ − X/σ) + b/σ) / p`.
pub fn update_y(state: &DualState, spec: &SubproblemSpec) -> DVector<f64> {
    let p = state.p();
    let sigma = state.sigma;
    let mut r = &spec.linear - &state.xi - &state.s - &state.x / sigma;
    if spec.alpha > 0.0 {
        r -= &state.z * spec.alpha;
    }
    (row_sums(&r).add_scalar(1.0 / sigma)) / p as f64
}

/// Entrywise `Ξ` minimizer: `prox(G_ij, w_ij, σ)` with
/// `G = W − A*(y) − S − αZ − X/σ`.
pub fn update_xi(state: &DualState, spec: &SubproblemSpec) -> Matrix {
    let p = state.p();
    let sigma = state.sigma;
    let w = spec.data.weights();
    Matrix::from_fn(p, p, |i, j| {
        let mut g = spec.linear[(i, j)] - state.y[i] - state.s[(i, j)] - state.x[(i, j)] / sigma;
        if spec.alpha > 0.0 {
            g -= spec.alpha * state.z[(i, j)];
        }
        prox_conjugate_entry(g, w[(i, j)], sigma)
    })
}

/// `Z = −σR / (1 + σα)` with `R = Ξ + A*(y) + S − W + X/σ`.
pub fn update_z(state: &DualState, spec: &SubproblemSpec) -> Result<Matrix> {
    if !(spec.alpha > 0.0) {
        return Err(invalid("the Z block exists only for alpha > 0"));
    }
    let p = state.p();
    let sigma = state.sigma;
    let r = &state.xi + broadcast_rows(&state.y, p) + &state.s - &spec.linear + &state.x / sigma;
    Ok(r * (-sigma / (1.0 + sigma * spec.alpha)))
}

/// `S = Π_{‖·‖₂ ≤ c}(−R′)` with `R′ = Ξ + A*(y) + αZ − W + X/σ`.
pub fn update_s(state: &DualState, spec: &SubproblemSpec) -> Matrix {
    let p = state.p();
    let mut r = &state.xi + broadcast_rows(&state.y, p) - &spec.linear + &state.x / state.sigma;
    if spec.alpha > 0.0 {
        r += &state.z * spec.alpha;
    }
    project_spectral_ball(&(-r), spec.c).expect("radius validated positive")
}

fn primal_feasibility(x: &Matrix) -> f64 {
    let p = x.nrows();
    row_sums(x).add_scalar(-1.0).norm() / (1.0 + (p as f64).sqrt())
}

fn dual_feasibility(state: &DualState, spec: &SubproblemSpec) -> f64 {
    constraint_residual(state, spec).norm() / (1.0 + spec.linear.norm())
}

/// KKT residuals of `state`; `previous_x` feeds the gap proxy when given.
pub fn kkt_residuals(state: &DualState, spec: &SubproblemSpec, previous_x: Option<&Matrix>) -> KktResiduals {
    let p = state.p();
    let w = spec.data.weights();
    let x = &state.x;
    let xnorm = x.norm();

    // Ξ = prox_h(Ξ − X) with unit step, h(Ξ) = f*(−Ξ)
    let xi_res = Matrix::from_fn(p, p, |i, j| {
        state.xi[(i, j)] - prox_conjugate_entry(state.xi[(i, j)] - x[(i, j)], w[(i, j)], 1.0)
    })
    .norm()
        / (1.0 + state.xi.norm() + xnorm);
    // S = Π(S − X)
    let s_res = (&state.s - project_spectral_ball(&(&state.s - x), spec.c).expect("c > 0")).norm()
        / (1.0 + state.s.norm() + xnorm);
    // Z = −X
    let z_res = if spec.alpha > 0.0 {
        (&state.z + x).norm() / (1.0 + state.z.norm() + xnorm)
    } else {
        0.0
    };
    KktResiduals {
        primal_feas: primal_feasibility(x),
        dual_feas: dual_feasibility(state, spec),
        complementarity: xi_res.max(s_res).max(z_res),
        gap_proxy: previous_x.map_or(0.0, |prev| (x - prev).norm() / (1.0 + prev.norm())),
    }
}

/// Runs the sGS-ADMM from `warm` (or from zeros) until the largest KKT
/// residual drops below `opts.tol` or `opts.max_iter` sweeps have been made.
///
/// On hitting the cap the iterate with the smallest residual among those
/// checked is returned, with [`Termination::IterationCap`].
pub fn solve_subproblem(
    spec: &SubproblemSpec,
    warm: Option<DualState>,
    opts: &AdmmOptions,
) -> Result<SubproblemSolution> {
    spec.validate()?;
    if !(opts.gamma > 0.0 && opts.gamma < GOLDEN_RATIO) {
        return Err(invalid(format!(
            "steplength gamma = {} outside (0, (1 + sqrt 5) / 2)",
            opts.gamma
        )));
    }
    if !(opts.sigma > 0.0) || !(opts.tol > 0.0) {
        return Err(invalid("sigma and tol must be positive"));
    }
    let p = spec.p();
    let mut state = match warm {
        Some(w) if w.p() == p => w,
        Some(w) => return Err(Error::DimensionMismatch { expected: p, got: w.p() }),
        None => DualState::zeros(p, opts.sigma),
    };
    if opts.max_iter == 0 {
        let residuals = kkt_residuals(&state, spec, None);
        return Ok(SubproblemSolution {
            x: state.x.clone(),
            state,
            report: SolverReport {
                trace: Vec::new(),
                iterations: 0,
                termination: Termination::NoIterations,
                residuals,
            },
        });
    }

    let use_z = spec.alpha > 0.0;
    let check_every = opts.check_every.max(1);
    let freeze_after = (opts.max_iter as f64 * 0.8).floor() as usize;
    let mut trace = Vec::new();
    let mut best: Option<(f64, DualState, KktResiduals)> = None;
    let mut last_residuals = KktResiduals::default();

    for k in 1..=opts.max_iter {
        let previous_x = state.x.clone();
        match opts.order {
            SweepOrder::SymmetricGaussSeidel => {
                state.y = update_y(&state, spec);
                state.xi = update_xi(&state, spec);
                state.y = update_y(&state, spec);
                if use_z {
                    state.z = update_z(&state, spec)?;
                }
                state.s = update_s(&state, spec);
                if use_z {
                    state.z = update_z(&state, spec)?;
                }
            }
            SweepOrder::PlainGaussSeidel => {
                state.y = update_y(&state, spec);
                state.xi = update_xi(&state, spec);
                if use_z {
                    state.z = update_z(&state, spec)?;
                }
                state.s = update_s(&state, spec);
            }
        }
        let d = constraint_residual(&state, spec);
        state.x += &d * (opts.gamma * state.sigma);

        if opts.record_trace {
            trace.push(IterationRecord {
                iteration: k,
                lagrangian: augmented_lagrangian(&state, spec),
                primal_feas: primal_feasibility(&state.x),
                dual_feas: d.norm() / (1.0 + spec.linear.norm()),
                sigma: state.sigma,
            });
        }

        if k % check_every == 0 || k == opts.max_iter {
            let res = kkt_residuals(&state, spec, Some(&previous_x));
            last_residuals = res;
            if res.max() <= opts.tol {
                return Ok(SubproblemSolution {
                    x: state.x.clone(),
                    state,
                    report: SolverReport {
                        trace,
                        iterations: k,
                        termination: Termination::Converged,
                        residuals: res,
                    },
                });
            }
            if best.as_ref().is_none_or(|(m, _, _)| res.max() < *m) {
                best = Some((res.max(), state.clone(), res));
            }
            if opts.adapt_sigma && k < freeze_after {
                let x_side = res.primal_feas.max(res.complementarity);
                if res.dual_feas > 10.0 * x_side {
                    state.sigma *= 1.3;
                } else if x_side > 10.0 * res.dual_feas {
                    state.sigma /= 1.3;
                }
            }
        }
    }

    let (state, residuals) = match best {
        Some((_, s, r)) => (s, r),
        None => (state, last_residuals),
    };
    Ok(SubproblemSolution {
        x: state.x.clone(),
        state,
        report: SolverReport {
            trace,
            iterations: opts.max_iter,
            termination: Termination::IterationCap,
            residuals,
        },
    })
}
