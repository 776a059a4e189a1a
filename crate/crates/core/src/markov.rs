//! Transition matrices, low-rank generators, stationary distributions,
//! trajectory simulation and transition counting.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::Exp1;

use crate::error::{invalid, Error, Result};
use crate::rng::{self, Rng};
use crate::Matrix;

/// Row sums of a [`TransitionMatrix`] must be within this of one.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Entries down to this value are treated as round-off and clamped to zero.
pub const NEGATIVE_CLAMP_TOL: f64 = 1e-12;

/// A row-stochastic `p × p` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: Matrix,
}

impl TransitionMatrix {
    pub fn new(mut entries: Matrix) -> Result<Self> {
        let p = entries.nrows();
        if p == 0 || entries.ncols() != p {
            return Err(Error::NotStochastic(format!(
                "expected a non-empty square matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for i in 0..p {
            for j in 0..p {
                let v = entries[(i, j)];
                if !v.is_finite() || v < -NEGATIVE_CLAMP_TOL {
                    return Err(Error::NotStochastic(format!(
                        "entry ({i}, {j}) = {v} is not a probability"
                    )));
                }
                if v < 0.0 {
                    entries[(i, j)] = 0.0;
                }
            }
            let s: f64 = entries.row(i).sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::NotStochastic("rows of unequal length".into()));
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    /// Clamps negative entries to zero and rescales each row to sum to one.
    /// Rows with no positive mass become uniform.
    pub fn from_nonnegative_part(m: &Matrix) -> Result<Self> {
        let p = m.nrows();
        let mut out = m.map(|v| v.max(0.0));
        for i in 0..p {
            let s: f64 = out.row(i).sum();
            if s > 0.0 && s.is_finite() {
                out.row_mut(i).scale_mut(1.0 / s);
            } else {
                out.row_mut(i).fill(1.0 / p as f64);
            }
        }
        Self::new(out)
    }

    pub fn p(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    pub fn into_matrix(self) -> Matrix {
        self.entries
    }

    /// `(1 - eps) P + eps / p`, which bounds every entry below by `eps / p`.
    pub fn with_uniform_floor(&self, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(invalid(format!("floor {eps} outside [0, 1]")));
        }
        let p = self.p() as f64;
        Self::new(self.entries.map(|v| (1.0 - eps) * v + eps / p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    weights: DVector<f64>,
}

impl StationaryDistribution {
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplingMode {
    /// A single trajectory `X_0, ..., X_n`.
    Chain,
    /// `n` independent pairs drawn from `mu_i * P_ij`.
    IidPairs,
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingMode::Chain => "chain",
            SamplingMode::IidPairs => "iid-pairs",
        })
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(SamplingMode::Chain),
            "iid-pairs" | "pairs" => Ok(SamplingMode::IidPairs),
            other => Err(invalid(format!(
                "unknown mode '{other}' (expected chain or iid-pairs)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trajectory {
    Chain { p: usize, states: Vec<usize> },
    Pairs { p: usize, pairs: Vec<(usize, usize)> },
}

impl Trajectory {
    pub fn chain(p: usize, states: Vec<usize>) -> Result<Self> {
        check_indices(p, states.iter().copied())?;
        Ok(Trajectory::Chain { p, states })
    }

    pub fn pairs(p: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        check_indices(p, pairs.iter().flat_map(|&(a, b)| [a, b]))?;
        Ok(Trajectory::Pairs { p, pairs })
    }

    pub fn p(&self) -> usize {
        match self {
            Trajectory::Chain { p, .. } | Trajectory::Pairs { p, .. } => *p,
        }
    }

    pub fn mode(&self) -> SamplingMode {
        match self {
            Trajectory::Chain { .. } => SamplingMode::Chain,
            Trajectory::Pairs { .. } => SamplingMode::IidPairs,
        }
    }

    pub fn num_transitions(&self) -> usize {
        match self {
            Trajectory::Chain { states, .. } => states.len().saturating_sub(1),
            Trajectory::Pairs { pairs, .. } => pairs.len(),
        }
    }

    /// All observed transitions as `(from, to)` pairs.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        match self {
            Trajectory::Chain { states, .. } => states.windows(2).map(|w| (w[0], w[1])).collect(),
            Trajectory::Pairs { pairs, .. } => pairs.clone(),
        }
    }
}

fn check_indices(p: usize, mut it: impl Iterator<Item = usize>) -> Result<()> {
    if p == 0 {
        return Err(invalid("state count must be positive"));
    }
    match it.find(|&s| s >= p) {
        Some(s) => Err(invalid(format!("state index {s} out of range for p = {p}"))),
        None => Ok(()),
    }
}

/// Sufficient statistic of the likelihood: `n_ij`, `n_i` and `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    counts: DMatrix<u64>,
    row_totals: Vec<u64>,
    total: u64,
}

impl TransitionCounts {
    pub fn from_matrix(counts: DMatrix<u64>) -> Result<Self> {
        let p = counts.nrows();
        if p == 0 || counts.ncols() != p {
            return Err(invalid("count matrix must be non-empty and square"));
        }
        let row_totals: Vec<u64> = (0..p).map(|i| counts.row(i).iter().sum()).collect();
        let total = row_totals.iter().sum();
        Ok(Self { counts, row_totals, total })
    }

    pub fn p(&self) -> usize {
        self.counts.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[(i, j)]
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.counts
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Expands the counts into a multiset of pairs in row-major order.
    pub fn to_pairs(&self) -> Vec<(usize, usize)> {
        let p = self.p();
        let mut out = Vec::with_capacity(self.total as usize);
        for i in 0..p {
            for j in 0..p {
                out.extend(std::iter::repeat_n((i, j), self.counts[(i, j)] as usize));
            }
        }
        out
    }
}

fn dirichlet_flat(rng: &mut Rng, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn stochastic_rows(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for (j, v) in dirichlet_flat(rng, cols).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Renormalizes rows after a product of stochastic factors so round-off does
/// not leak past [`ROW_SUM_TOL`].
fn renormalize_rows(mut m: Matrix) -> Matrix {
    for i in 0..m.nrows() {
        let s: f64 = m.row(i).sum();
        m.row_mut(i).scale_mut(1.0 / s);
    }
    m
}

/// Latent-variable model `U · P̃ · Vᵀ` with flat Dirichlet rows in every
/// factor (`U` is `p × r`, `P̃` is `r × r`, `Vᵀ` is `r × p`). The product is
/// stochastic with rank at most `r`.
pub fn generate_latent_lowrank(p: usize, r: usize, seed: u64) -> Result<TransitionMatrix> {
    if r == 0 || r > p {
        return Err(invalid(format!("rank {r} must lie in [1, {p}]")));
    }
    let mut rng = rng::from_seed(seed);
    let u = stochastic_rows(&mut rng, p, r);
    let latent = stochastic_rows(&mut rng, r, r);
    let vt = stochastic_rows(&mut rng, r, p);
    TransitionMatrix::new(renormalize_rows(u * latent * vt))
}

/// State aggregation: a random partition of the states into `r` non-empty
/// clusters, each cluster sharing one Dirichlet-sampled row.
pub fn generate_aggregated(p: usize, r: usize, seed: u64) -> Result<TransitionMatrix> {
    if r == 0 || r > p {
        return Err(invalid(format!("cluster count {r} must lie in [1, {p}]")));
    }
    let mut rng = rng::from_seed(seed);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let mut cluster = vec![0usize; p];
    for (k, &s) in order.iter().enumerate() {
        cluster[s] = if k < r { k } else { rng.random_range(0..r) };
    }
    let rows = stochastic_rows(&mut rng, r, p);
    let m = DMatrix::from_fn(p, p, |i, j| rows[(cluster[i], j)]);
    TransitionMatrix::new(m)
}

/// Number of closed communicating classes of the support graph.
fn closed_class_count(pm: &Matrix) -> usize {
    let p = pm.nrows();
    let reach: Vec<Vec<bool>> = (0..p)
        .map(|start| {
            let mut seen = vec![false; p];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for j in 0..p {
                    if pm[(i, j)] > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen
        })
        .collect();
    let mut classes: Vec<&Vec<bool>> = Vec::new();
    for i in 0..p {
        let recurrent = (0..p).all(|j| !reach[i][j] || reach[j][i]);
        if recurrent && !classes.iter().any(|c| c[i]) {
            classes.push(&reach[i]);
        }
    }
    classes.len()
}

/// Solves `muᵀ P = muᵀ`, `sum(mu) = 1` directly, so periodic and slowly
/// mixing chains are handled too.
///
/// Fails with [`Error::NotUnique`] when the chain has more than one closed
/// class.
pub fn stationary_distribution(pm: &TransitionMatrix) -> Result<StationaryDistribution> {
    const RESIDUAL_TOL: f64 = 1e-10;
    let p = pm.p();
    let m = pm.matrix();
    let classes = closed_class_count(m);
    if classes != 1 {
        return Err(Error::NotUnique(classes));
    }
    // One closed class makes the null space of P^T - I one-dimensional, so
    // swapping one equation for the normalization gives a nonsingular system.
    let mut a = m.transpose() - Matrix::identity(p, p);
    a.row_mut(p - 1).fill(1.0);
    let mut rhs = DVector::zeros(p);
    rhs[p - 1] = 1.0;
    let mut mu = a.lu().solve(&rhs).ok_or(Error::NotUnique(classes))?;
    mu.iter_mut().for_each(|v| *v = v.max(0.0));
    let s = mu.sum();
    mu /= s;
    let residual = (m.transpose() * &mu - &mu).lp_norm(1);
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::NoConvergence(1));
    }
    Ok(StationaryDistribution { weights: mu })
}

fn row_samplers(pm: &TransitionMatrix) -> Result<Vec<WeightedIndex<f64>>> {
    let m = pm.matrix();
    (0..pm.p())
        .map(|i| {
            WeightedIndex::new(m.row(i).iter().copied())
                .map_err(|e| Error::NotStochastic(format!("row {i}: {e}")))
        })
        .collect()
}

/// Draws `n` transitions. Chain mode starts from `X_0 ~ mu`; pair mode draws
/// each `(i, j)` independently with probability `mu_i P_ij`.
pub fn simulate(pm: &TransitionMatrix, n: usize, mode: SamplingMode, seed: u64) -> Result<Trajectory> {
    if n == 0 {
        return Err(invalid("transition count must be at least 1"));
    }
    let mu = stationary_distribution(pm)?;
    let initial = WeightedIndex::new(mu.weights().iter().copied())
        .map_err(|e| Error::NotStochastic(format!("stationary distribution: {e}")))?;
    let rows = row_samplers(pm)?;
    let mut rng = rng::from_seed(seed);
    let p = pm.p();
    match mode {
        SamplingMode::Chain => {
            let mut states = Vec::with_capacity(n + 1);
            let mut x = initial.sample(&mut rng);
            states.push(x);
            for _ in 0..n {
                x = rows[x].sample(&mut rng);
                states.push(x);
            }
            Ok(Trajectory::Chain { p, states })
        }
        SamplingMode::IidPairs => {
            let pairs = (0..n)
                .map(|_| {
                    let i = initial.sample(&mut rng);
                    (i, rows[i].sample(&mut rng))
                })
                .collect();
            Ok(Trajectory::Pairs { p, pairs })
        }
    }
}

/// Keeps the transitions `(X_{m·skip}, X_{m·skip+1})` of a chain trajectory.
pub fn downsample(traj: &Trajectory, skip: usize) -> Result<Trajectory> {
    if skip == 0 {
        return Err(invalid("skip must be at least 1"));
    }
    let Trajectory::Chain { p, states } = traj else {
        return Err(invalid("downsampling needs a chain-mode trajectory"));
    };
    if skip > states.len() {
        return Err(invalid(format!("skip {skip} exceeds the trajectory length {}", states.len())));
    }
    let pairs: Vec<(usize, usize)> = (0..)
        .map(|m| m * skip)
        .take_while(|&k| k + 1 < states.len())
        .map(|k| (states[k], states[k + 1]))
        .collect();
    if pairs.is_empty() {
        return Err(invalid(format!(
            "skip {skip} leaves no transitions in a trajectory of {} states",
            states.len()
        )));
    }
    Ok(Trajectory::Pairs { p: *p, pairs })
}

pub fn count_transitions(traj: &Trajectory) -> TransitionCounts {
    let p = traj.p();
    let mut counts = DMatrix::<u64>::zeros(p, p);
    let mut bump = |(i, j): (usize, usize)| counts[(i, j)] += 1;
    match traj {
        Trajectory::Chain { states, .. } => states.windows(2).for_each(|w| bump((w[0], w[1]))),
        Trajectory::Pairs { pairs, .. } => pairs.iter().copied().for_each(bump),
    }
    TransitionCounts::from_matrix(counts).expect("square by construction")
}
