//! The `ckmerge` command line. [`run_with_io`] parses arguments, runs one
//! subcommand and returns the process exit status.
//!
//! Exit statuses: 0 success, 2 incompatible checkpoints, 3 I/O or file
//! format, 4 evaluator failure, 64 usage, 65 domain error.

mod commands;
pub mod config;
mod diag;
pub mod evaluator;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::diagnostics::MergePartner;
use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPAT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_EVALUATOR: i32 = 4;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DOMAIN: i32 = 65;

/// A failed command: exit status plus the message for standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Compat(_) => EXIT_COMPAT,
            Error::Io(_) | Error::Format(_) | Error::Validation { .. } | Error::Json(_) => EXIT_IO,
            Error::Objective(_) | Error::Aborted { .. } | Error::Training { .. } => EXIT_EVALUATOR,
            Error::Weight(_)
            | Error::EmptyInput(_)
            | Error::Numerical(_)
            | Error::Duplicate(_)
            | Error::Domain(_)
            | Error::Divergence { .. } => EXIT_DOMAIN,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_IO, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ckmerge", version, about = "Merge training checkpoints and tune the merging weight")]
pub struct Cli {
    /// JSON run config (or a previous run report); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write `lambda * curr + (1 - lambda) * prev`.
    Merge(MergeArgs),
    /// Search the merging weight on [alpha, 1] with Bayesian optimization.
    Optimize(OptimizeArgs),
    /// Score merges over a weight grid, a checkpoint matrix, or soup windows.
    Sweep(SweepArgs),
    /// Run search strategies at equal budget across seeds.
    Compare(CompareArgs),
    /// Evaluate the analytical diagnostics.
    Diag(DiagArgs),
    /// Train the toy two-moons MLP and save snapshots.
    Toy(ToyArgs),
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub prev: PathBuf,
    #[arg(long)]
    pub curr: PathBuf,
    /// Weight on `curr`, in [0, 1].
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, requires = "curr")]
    pub prev: Option<PathBuf>,
    #[arg(long, requires = "prev")]
    pub curr: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// See the evaluator list in the README.
    #[arg(long)]
    pub evaluator: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub portfolio: Option<PortfolioArg>,
    #[arg(long)]
    pub grid_resolution: Option<usize>,
    /// Seed of the toy task used by `toy` evaluators.
    #[arg(long)]
    pub task_seed: Option<u64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Where to save the merged checkpoint at the best weight.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PortfolioArg {
    Hedge,
    Ei,
    Pi,
    Ucb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    LambdaCurve,
    PairwiseMatrix,
    SoupK,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value = "lambda-curve")]
    pub mode: SweepMode,
    #[arg(long, requires = "curr")]
    pub prev: Option<PathBuf>,
    #[arg(long, requires = "prev")]
    pub curr: Option<PathBuf>,
    /// Ordered checkpoints for the matrix and soup modes.
    #[arg(long = "ckpt", num_args = 1..)]
    pub ckpts: Vec<PathBuf>,
    #[arg(long, default_value_t = 101)]
    pub resolution: usize,
    /// Lower end of the weight grid.
    #[arg(long, default_value_t = 0.0)]
    pub from: f64,
    #[arg(long)]
    pub evaluator: Option<String>,
    #[arg(long)]
    pub task_seed: Option<u64>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Bo,
    Grid,
    Random,
    Greedy,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "bo,grid,random,greedy")]
    pub strategies: Vec<Strategy>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Number of seeds, starting at the base seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Objective spec; a bare `gp-sample` draws a new function per seed.
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long, requires = "curr")]
    pub prev: Option<PathBuf>,
    #[arg(long, requires = "prev")]
    pub curr: Option<PathBuf>,
    #[arg(long)]
    pub task_seed: Option<u64>,
    /// CSV of best-found values; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of per-strategy median and IQR; also printed to standard error.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[command(subcommand)]
    pub which: DiagCommand,
}

#[derive(Debug, Subcommand)]
pub enum DiagCommand {
    /// Performance band `lower,upper` around the interpolated score.
    Bound {
        #[arg(long)]
        f_curr: f64,
        #[arg(long)]
        f_prev: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        lipschitz_grad: f64,
        #[arg(long)]
        hess_max: f64,
        #[arg(long, default_value_t = 0.0)]
        hess_min: f64,
        #[command(flatten)]
        dist: DistArgs,
    },
    /// KL divergence between the merged and previous Gaussians.
    Kl {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        sigma_sq: f64,
        #[command(flatten)]
        dist: DistArgs,
    },
    /// PAC-Bayes bound on the expected loss.
    Pacbayes {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        sigma_sq: f64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        empirical_loss: f64,
        #[command(flatten)]
        dist: DistArgs,
    },
    /// Per-merge contraction factor.
    Rho {
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        hess_max: f64,
    },
    /// Cumulative regret of a report's trace.
    Regret {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        f_star: f64,
    },
    /// Simulate descent with merging on a quadratic.
    Descent {
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        hess_max: f64,
        /// Merge weight schedule; the last value repeats.
        #[arg(long, value_delimiter = ',', required = true)]
        lambda: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "lookahead")]
        partner: PartnerArg,
    },
}

/// Squared distance given directly or computed from two checkpoints.
#[derive(Debug, Args)]
pub struct DistArgs {
    #[arg(long, conflicts_with_all = ["prev", "curr"], required_unless_present = "prev")]
    pub dist_sq: Option<f64>,
    #[arg(long, requires = "curr")]
    pub prev: Option<PathBuf>,
    #[arg(long, requires = "prev")]
    pub curr: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartnerArg {
    Lookahead,
    Previous,
}

impl From<PartnerArg> for MergePartner {
    fn from(p: PartnerArg) -> Self {
        match p {
            PartnerArg::Lookahead => MergePartner::Lookahead,
            PartnerArg::Previous => MergePartner::Previous,
        }
    }
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Snapshot steps, ascending.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<usize>>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task_seed: Option<u64>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_with_io<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match run(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let cfg = config::RunConfig::from_file(cli.config.as_deref())?;
    match cli.command {
        Command::Merge(a) => commands::merge(a, out),
        Command::Optimize(a) => commands::optimize(a, cfg, out),
        Command::Sweep(a) => commands::sweep(a, cfg, out),
        Command::Compare(a) => commands::compare(a, cfg, out, err),
        Command::Diag(a) => diag::run(a.which, cfg, out),
        Command::Toy(a) => commands::toy(a, cfg, out),
    }
}
