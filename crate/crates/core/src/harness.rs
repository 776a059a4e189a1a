//! Simulation-study runner: generate a low-rank chain per seed, simulate
//! `n(C) = ⌈C² r p log p⌉` transitions for each sampling constant `C`, fit
//! every configured estimator and score it against the truth.
//!
//! Rows are independent work items. Output is sorted by (estimator, C, seed)
//! and the results CSV carries no timing columns, so identical configs give
//! byte-identical files regardless of scheduling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{estimate, EstimatorKind, EstimatorSpec, SolverOptions};
use crate::exec::ExecPolicy;
use crate::markov::{count_transitions, generate_latent_lowrank, simulate, stationary_distribution, SamplingMode};
use crate::metrics::evaluate;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p: usize,
    pub r: usize,
    #[serde(rename = "C_values")]
    pub c_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub estimators: Vec<EstimatorKind>,
    #[serde(with = "mode_text")]
    pub mode: SamplingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

mod mode_text {
    use super::SamplingMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &SamplingMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SamplingMode, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl ExperimentConfig {
    /// `p = 50, r = 3, C ∈ {4, 8, 16}`, ten seeds, all four estimators.
    pub fn desk_scale() -> Self {
        Self {
            p: 50,
            r: 3,
            c_values: vec![4.0, 8.0, 16.0],
            seeds: (1..=10).collect(),
            estimators: EstimatorKind::ALL.to_vec(),
            mode: SamplingMode::Chain,
            output: None,
        }
    }

    /// The full-size study (`p = 500, r = 10`, `C` from 10 to 100). Expect
    /// overnight runtimes and up to ~3·10⁸ simulated transitions.
    pub fn paper_scale() -> Self {
        Self {
            p: 500,
            r: 10,
            c_values: vec![10.0, 20.0, 50.0, 100.0],
            seeds: (1..=10).collect(),
            estimators: EstimatorKind::ALL.to_vec(),
            mode: SamplingMode::Chain,
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(invalid("p must be at least 2"));
        }
        if self.r == 0 || self.r > self.p {
            return Err(invalid(format!("r = {} must lie in [1, {}]", self.r, self.p)));
        }
        if self.c_values.is_empty() || self.c_values.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
            return Err(invalid("C_values must be a non-empty list of positive numbers"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must be non-empty"));
        }
        if self.estimators.is_empty() {
            return Err(invalid("estimators must be non-empty"));
        }
        Ok(())
    }

    /// `⌈C² r p log p⌉`.
    pub fn sample_size(&self, c: f64) -> usize {
        sample_size(c, self.r, self.p)
    }
}

pub fn sample_size(c: f64, r: usize, p: usize) -> usize {
    (c * c * r as f64 * p as f64 * (p as f64).ln()).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub estimator: EstimatorKind,
    pub c: f64,
    pub n: usize,
    pub seed: u64,
    pub eta_f: f64,
    pub eta_u: f64,
    pub eta_v: f64,
    pub kl: f64,
    pub wall_ms: f64,
    /// Solver flags and error messages; empty for a clean run.
    pub flags: Vec<String>,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        !self.flags.is_empty()
    }

    fn sort_key(&self) -> (EstimatorKind, u64, u64) {
        (self.estimator, self.c.to_bits(), self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    EtaF,
    EtaU,
    EtaV,
    Kl,
}

impl Measure {
    pub fn of(self, row: &ResultRow) -> f64 {
        match self {
            Measure::EtaF => row.eta_f,
            Measure::EtaU => row.eta_u,
            Measure::EtaV => row.eta_v,
            Measure::Kl => row.kl,
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta_f" => Ok(Measure::EtaF),
            "eta_u" => Ok(Measure::EtaU),
            "eta_v" => Ok(Measure::EtaV),
            "kl" => Ok(Measure::Kl),
            other => Err(invalid(format!("unknown measure '{other}'"))),
        }
    }
}

/// Seed of the true chain for `seed`.
pub fn truth_seed(seed: u64) -> u64 {
    derive_seed(seed, 0)
}

/// Seed of the simulated trajectory for `(seed, C)`.
pub fn trajectory_seed(seed: u64, c: f64) -> u64 {
    derive_seed(derive_seed(seed, 1), c.to_bits())
}

fn run_item(config: &ExperimentConfig, options: &SolverOptions, seed: u64, c: f64) -> Vec<ResultRow> {
    let n = config.sample_size(c);
    let failed_all = |msg: String| {
        config
            .estimators
            .iter()
            .map(|&k| ResultRow {
                estimator: k,
                c,
                n,
                seed,
                eta_f: f64::NAN,
                eta_u: f64::NAN,
                eta_v: f64::NAN,
                kl: f64::NAN,
                wall_ms: 0.0,
                flags: vec![msg.clone()],
            })
            .collect::<Vec<_>>()
    };
    let setup = (|| -> Result<_> {
        let truth = generate_latent_lowrank(config.p, config.r, truth_seed(seed))?;
        let mu = stationary_distribution(&truth)?;
        let traj = simulate(&truth, n, config.mode, trajectory_seed(seed, c))?;
        Ok((truth, mu, count_transitions(&traj)))
    })();
    let (truth, mu, counts) = match setup {
        Ok(v) => v,
        Err(e) => return failed_all(format!("error: {e}")),
    };

    config
        .estimators
        .iter()
        .map(|&kind| {
            let r = kind.needs_rank().then_some(config.r);
            let mut spec = EstimatorSpec::new(kind, r, None);
            spec.options = options.clone();
            spec.options.cv_seed = derive_seed(trajectory_seed(seed, c), 2);
            let start = Instant::now();
            let outcome = estimate(&spec, &counts)
                .and_then(|e| Ok((evaluate(&truth, &mu, &e.matrix, config.r)?, e.flags())));
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            match outcome {
                Ok((ev, flags)) => ResultRow {
                    estimator: kind,
                    c,
                    n,
                    seed,
                    eta_f: ev.eta_f,
                    eta_u: ev.eta_u,
                    eta_v: ev.eta_v,
                    kl: ev.kl,
                    wall_ms,
                    flags: flags.into_iter().map(String::from).collect(),
                },
                Err(e) => ResultRow {
                    estimator: kind,
                    c,
                    n,
                    seed,
                    eta_f: f64::NAN,
                    eta_u: f64::NAN,
                    eta_v: f64::NAN,
                    kl: f64::NAN,
                    wall_ms,
                    flags: vec![format!("error: {e}")],
                },
            }
        })
        .collect()
}

/// Runs the study with default solver settings.
pub fn run_experiment(config: &ExperimentConfig, policy: ExecPolicy) -> Result<Vec<ResultRow>> {
    let options = SolverOptions { policy, ..SolverOptions::default() };
    run_experiment_with(config, &options, policy)
}

/// Runs the study; per-row failures are recorded as flagged rows and never
/// abort the sweep.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    options: &SolverOptions,
    policy: ExecPolicy,
) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let items: Vec<(u64, f64)> = config
        .seeds
        .iter()
        .flat_map(|&s| config.c_values.iter().map(move |&c| (s, c)))
        .collect();
    let mut rows: Vec<ResultRow> =
        policy.map(items, |(seed, c)| run_item(config, options, seed, c)).into_iter().flatten().collect();
    rows.sort_by_key(ResultRow::sort_key);
    Ok(rows)
}

fn clean_flags(flags: &[String]) -> String {
    flags.join(";").replace([',', '\n'], " ")
}

pub const RESULTS_HEADER: &str = "estimator,C,n,seed,eta_f,eta_u,eta_v,kl,failed,flags";

/// Results table without timing, for byte-level reproducibility.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.estimator,
            r.c,
            r.n,
            r.seed,
            r.eta_f,
            r.eta_u,
            r.eta_v,
            r.kl,
            u8::from(r.failed()),
            clean_flags(&r.flags)
        );
    }
    out
}

pub fn timing_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("estimator,C,seed,wall_ms\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.3}", r.estimator, r.c, r.seed, r.wall_ms);
    }
    out
}

/// Writes `path` (results) and a `<stem>.timing.csv` sidecar next to it.
pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<PathBuf> {
    std::fs::write(path, results_csv(rows))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let timing = path.with_file_name(format!("{stem}.timing.csv"));
    std::fs::write(&timing, timing_csv(rows))?;
    Ok(timing)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub estimator: EstimatorKind,
    pub c: f64,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single row.
    pub std: f64,
    pub count: usize,
    pub failed: usize,
}

/// Mean and standard deviation of `measure` per (estimator, C); flagged rows
/// are excluded from the statistics and counted separately.
pub fn aggregate(rows: &[ResultRow], measure: Measure) -> Result<Vec<Aggregate>> {
    if rows.is_empty() {
        return Err(invalid("result table is empty"));
    }
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.sort_key());
    let mut out: Vec<Aggregate> = Vec::new();
    for group in sorted.chunk_by(|a, b| a.estimator == b.estimator && a.c.to_bits() == b.c.to_bits()) {
        let ok: Vec<f64> = group.iter().filter(|r| !r.failed()).map(|r| measure.of(r)).collect();
        let count = ok.len();
        let mean = if count > 0 { ok.iter().sum::<f64>() / count as f64 } else { f64::NAN };
        let std = if count > 1 {
            (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else if count == 1 {
            0.0
        } else {
            f64::NAN
        };
        out.push(Aggregate {
            estimator: group[0].estimator,
            c: group[0].c,
            n: group[0].n,
            mean,
            std,
            count,
            failed: group.len() - count,
        });
    }
    Ok(out)
}

/// Plot-ready CSV: `estimator,C,n,mean,std,count,failed`.
pub fn emit_plot_data(rows: &[ResultRow], measure: Measure) -> Result<String> {
    let mut out = String::from("estimator,C,n,mean,std,count,failed\n");
    for a in aggregate(rows, measure)? {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            a.estimator, a.c, a.n, a.mean, a.std, a.count, a.failed
        );
    }
    Ok(out)
}
