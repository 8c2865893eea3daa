//! Command-line driver: data generation, kernels, alignment, shift operator
//! optimisation, training experiments and the verification batteries.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;

pub use output::RunManifest;

/// Bad flags, unreadable or malformed inputs. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "xcov", version, about = "Tangent kernels, alignment and cross-covariance shift operators for graph filters and GNNs")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving reports, CSV artifacts and the run manifest.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// TOML file with default values for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print the JSON report on stdout instead of a summary.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Directory with X_train.csv, Y_train.csv and optionally X_test.csv, Y_test.csv.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Shift operator: cxy, cxx, opt, identity, or a CSV file.
    #[arg(long)]
    pub gso: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// filter or gnn (compare also accepts both).
    #[arg(long)]
    pub model: Option<String>,
    /// Number of filter taps K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Hidden features F of the two-layer GNN.
    #[arg(long)]
    pub width: Option<usize>,
    /// tanh, identity, sigmoid, relu or leaky_relu.
    #[arg(long)]
    pub activation: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Learning rate.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Standard deviation of the initial parameters.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Minibatch size; 0 for full batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// gd or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenArgs {
    /// Number of nodes.
    #[arg(long)]
    pub n: Option<usize>,
    /// Length of the simulated series.
    #[arg(long)]
    pub len: Option<usize>,
    /// Prediction horizon.
    #[arg(long)]
    pub dt: Option<usize>,
    /// Strength a of the planted transition a (u u^T - v v^T), in (0, 1).
    #[arg(long)]
    pub anisotropy: Option<f64>,
    #[arg(long)]
    pub m_train: Option<usize>,
    #[arg(long)]
    pub m_test: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate a planted VAR(1) series and extract train/test pairs.
    GenData {
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Compute a tangent kernel and summarise its spectrum.
    Ntk {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// GNN kernel: quadrature, series, mc or empirical.
        #[arg(long)]
        method: Option<String>,
        /// GNN layers contributing to the kernel: first, second or both.
        #[arg(long)]
        layer: Option<String>,
        /// Write the full kernel to ntk.csv.
        #[arg(long)]
        save_matrix: bool,
    },
    /// Alignment functionals and their bounds for one shift operator.
    Align {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        /// Operator-norm bound; adds the tanh GNN alignment and its constants.
        #[arg(long)]
        nu: Option<f64>,
    },
    /// Solve for the alignment-optimal shift operator.
    OptimizeGso {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        /// filter or linear-gnn.
        #[arg(long)]
        model: Option<String>,
        /// exact or unit-frobenius.
        #[arg(long)]
        mu_mode: Option<String>,
    },
    /// Train one model and write its loss trace.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train matched models on several shift operators.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        gen: GenArgs,
        /// Repetitions per shift operator.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Run the inequality sweeps and training-bound checks.
    VerifyBounds {
        /// Instances per sweep.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        nu: Option<f64>,
        /// Alignment ratio assumed by the GNN bound (default: observed).
        #[arg(long)]
        xi: Option<f64>,
    },
    /// Hermite constants and the coefficient sign/monotonicity checks.
    VerifyHermite {
        /// Taps K for the first-layer constant.
        #[arg(long)]
        k: Option<usize>,
        /// Highest coefficient degree checked.
        #[arg(long)]
        l_max: Option<usize>,
        /// Points of the y grid on [0.1, 10].
        #[arg(long)]
        grid: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Ntk { .. } => "ntk",
            Command::Align { .. } => "align",
            Command::OptimizeGso { .. } => "optimize-gso",
            Command::Train { .. } => "train",
            Command::Compare { .. } => "compare",
            Command::VerifyBounds { .. } => "verify-bounds",
            Command::VerifyHermite { .. } => "verify-hermite",
        }
    }
}

/// Exit code for an error: 2 for usage and input problems, 1 otherwise.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.is::<UsageError>() || err.is::<std::io::Error>() {
        return EXIT_USAGE;
    }
    if let Some(e) = err.downcast_ref::<xcov_core::Error>() {
        use xcov_core::Error as E;
        return match e {
            E::Dimension(_)
            | E::NotSymmetric(_)
            | E::ZeroMatrix(_)
            | E::InvalidArgument(_)
            | E::EmptyInput
            | E::Csv { .. }
            | E::Io(_)
            | E::Json(_)
            | E::NonStationary(_)
            | E::InsufficientLength { .. }
            | E::Regime(_)
            | E::Precondition { .. }
            | E::DegreeOverflow(..)
            | E::NoRealRoot { .. }
            | E::NegativeEigenvalue(_) => EXIT_USAGE,
            _ => EXIT_FINDINGS,
        };
    }
    EXIT_FINDINGS
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(&cli) {
        Ok(findings) => {
            if findings {
                EXIT_FINDINGS
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_for(&e)
        }
    }
}
