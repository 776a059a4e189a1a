//! `lrmc` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 solver did not converge.

use std::collections::hash_map::RandomState;
use std::hash::{BuildHasher, Hasher};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lrmc::estimators::{estimate, EstimatorKind, EstimatorSpec};
use lrmc::harness::{emit_plot_data, run_experiment, write_results, ExperimentConfig, Measure};
use lrmc::markov::{
    count_transitions, downsample, generate_aggregated, generate_latent_lowrank, simulate, stationary_distribution,
    SamplingMode, TransitionMatrix,
};
use lrmc::metrics::evaluate;
use lrmc::{io, Error, ExecPolicy};

const DEFAULT_SEED: u64 = 20_190_601;

#[derive(Parser)]
#[command(name = "lrmc", version, about = "Low-rank Markov chain estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random transition matrix of rank at most r.
    Generate {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        r: usize,
        #[arg(long, value_enum, default_value_t = Model::Latent)]
        model: Model,
        #[arg(long, default_value = "default")]
        seed: SeedArg,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a trajectory from a transition matrix.
    Simulate {
        #[arg(long)]
        matrix: PathBuf,
        /// Number of transitions.
        #[arg(long)]
        n: usize,
        #[arg(long, value_parser = parse_mode, default_value = "chain")]
        mode: SamplingMode,
        /// Keep one transition every `skip` steps (chain mode only).
        #[arg(long)]
        skip: Option<usize>,
        #[arg(long, default_value = "default")]
        seed: SeedArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a transition matrix to counts or a trajectory.
    Estimate {
        #[arg(long, conflicts_with = "trajectory", required_unless_present = "trajectory")]
        counts: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, value_parser = parse_kind)]
        method: EstimatorKind,
        /// Target rank (svd and rank).
        #[arg(long)]
        r: Option<usize>,
        /// Nuclear-norm penalty (nu); chosen by cross-validation when omitted.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-iteration solver trace CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare an estimate with the true matrix.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        r: usize,
    },
    /// Run a simulation study from a TOML config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Results CSV; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_measure, default_value = "eta_f")]
        measure: Measure,
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Latent,
    Aggregated,
}

#[derive(Clone, Copy)]
enum SeedArg {
    Fixed(u64),
    Random,
}

impl std::str::FromStr for SeedArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "default" => Ok(SeedArg::Fixed(DEFAULT_SEED)),
            "random" => Ok(SeedArg::Random),
            n => n.parse().map(SeedArg::Fixed).map_err(|_| format!("expected an integer or 'random', got '{n}'")),
        }
    }
}

impl SeedArg {
    fn resolve(self) -> u64 {
        match self {
            SeedArg::Fixed(s) => s,
            SeedArg::Random => {
                let seed = RandomState::new().build_hasher().finish();
                eprintln!("seed: {seed}");
                seed
            }
        }
    }
}

fn parse_mode(s: &str) -> Result<SamplingMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_measure(s: &str) -> Result<Measure, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Invalid(String),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence(_) => Failure::NotConverged(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| Failure::Invalid(format!("{}: {e}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { p, r, model, seed, out } => {
            let seed = seed.resolve();
            let pm = match model {
                Model::Latent => generate_latent_lowrank(p, r, seed)?,
                Model::Aggregated => generate_aggregated(p, r, seed)?,
            };
            emit(out.as_deref(), &io::matrix_to_csv(pm.matrix()))
        }
        Command::Simulate { matrix, n, mode, skip, seed, out } => {
            let pm = TransitionMatrix::new(io::read_matrix(&matrix).map_err(with_path(&matrix))?)
                .map_err(with_path(&matrix))?;
            let mut traj = simulate(&pm, n, mode, seed.resolve())?;
            if let Some(skip) = skip {
                traj = downsample(&traj, skip)?;
            }
            emit(out.as_deref(), &io::trajectory_to_text(&traj))
        }
        Command::Estimate { counts, trajectory, method, r, lambda, out, report } => {
            let spec = EstimatorSpec::new(method, r, lambda);
            if method.needs_rank() && r.is_none() {
                return Err(Failure::Invalid(format!("--method {method} needs --r")));
            }
            let counts = match (counts, trajectory) {
                (Some(path), _) => io::read_counts(&path).map_err(with_path(&path))?,
                (None, Some(path)) => count_transitions(&io::read_trajectory(&path).map_err(with_path(&path))?),
                (None, None) => return Err(Failure::Invalid("one of --counts or --trajectory is required".into())),
            };
            spec.validate(counts.p())?;
            let fit = estimate(&spec, &counts)?;
            if let (Some(path), Some(csv)) = (report.as_deref(), fit.report.to_csv()) {
                emit(Some(path), &csv)?;
            }
            if let Some(l) = fit.lambda {
                eprintln!("lambda: {l}");
            }
            emit(out.as_deref(), &io::matrix_to_csv(fit.matrix.matrix()))?;
            let flags = fit.flags();
            if flags.is_empty() {
                Ok(())
            } else {
                Err(Failure::NotConverged(format!("solver did not converge: {}", flags.join(", "))))
            }
        }
        Command::Evaluate { truth, estimate, r } => {
            let p = TransitionMatrix::new(io::read_matrix(&truth).map_err(with_path(&truth))?)
                .map_err(with_path(&truth))?;
            let q = TransitionMatrix::new(io::read_matrix(&estimate).map_err(with_path(&estimate))?)
                .map_err(with_path(&estimate))?;
            let mu = stationary_distribution(&p)?;
            let ev = evaluate(&p, &mu, &q, r)?;
            println!("kl,{}", ev.kl);
            println!("kl_clipped,{}", ev.kl_clipped);
            println!("l2_risk,{}", ev.l2_risk);
            println!("eta_f,{}", ev.eta_f);
            println!("eta_u,{}", ev.eta_u);
            println!("eta_v,{}", ev.eta_v);
            Ok(())
        }
        Command::Bench { config, out, measure, sequential } => {
            let cfg = ExperimentConfig::load(&config).map_err(with_path(&config))?;
            let policy = if sequential { ExecPolicy::Sequential } else { ExecPolicy::Parallel };
            let rows = run_experiment(&cfg, policy)?;
            if let Some(path) = out.or(cfg.output.clone()) {
                let timing = write_results(&path, &rows)?;
                eprintln!("wrote {} and {}", path.display(), timing.display());
            }
            print!("{}", emit_plot_data(&rows, measure)?);
            let failed = rows.iter().filter(|r| r.failed()).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::NotConverged(format!("{failed} of {} rows flagged", rows.len())))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
