//! `quantlab`: generate 4-bit codes, quantize tensor files, query the
//! scaled-max distribution and run Monte Carlo validation reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numerical failure (or a failed `--assert`).

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use quantlab::ErrorClass;

#[derive(Debug, Parser)]
#[command(
    name = "quantlab",
    version,
    about = "Blockwise absmax 4-bit quantization toolkit"
)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Machine-readable CSV on standard output.
    #[arg(long, global = true)]
    csv: bool,

    /// Absolute quadrature tolerance for distribution evaluations.
    #[arg(long, global = true, env = "QUANTLAB_QUAD_TOL")]
    quad_tol: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Code construction.
    #[command(subcommand)]
    Code(CodeCommand),
    /// Quantize an FQT1 tensor into an FQZ1 file.
    Quantize(QuantizeArgs),
    /// Expand an FQZ1 file back into an FQT1 tensor.
    Dequantize(DequantizeArgs),
    /// Evaluate the scaled-max distribution.
    Dist(DistArgs),
    /// Monte Carlo estimates against analytic values, as CSV.
    Validate(ValidateArgs),
    /// Monte Carlo sampling.
    #[command(subcommand)]
    Mc(McCommand),
}

#[derive(Debug, Subcommand)]
enum CodeCommand {
    /// Build a code and write it as a code16/v1 file.
    Gen(CodeGenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Nf4,
    Af4,
    Balanced,
    BalancedEndpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    QuantileOfAverage,
    AverageOfQuantile,
}

#[derive(Debug, Args)]
struct CodeGenArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// NF4 construction variant.
    #[arg(long, value_enum, default_value = "quantile-of-average")]
    variant: VariantArg,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    /// Output code file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    /// FQT1 input tensor.
    #[arg(long)]
    input: PathBuf,
    /// code16/v1 code file.
    #[arg(long)]
    code: PathBuf,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    /// Blocking axis; defaults to the last axis.
    #[arg(long)]
    axis: Option<usize>,
    /// FQZ1 output file.
    #[arg(long)]
    output: PathBuf,
    /// Print reconstruction errors.
    #[arg(long)]
    report: bool,
}

#[derive(Debug, Args)]
struct DequantizeArgs {
    /// FQZ1 input file.
    #[arg(long)]
    input: PathBuf,
    /// FQT1 output tensor.
    #[arg(long)]
    output: PathBuf,
    /// Print reconstruction errors against this FQT1 tensor.
    #[arg(long)]
    report: bool,
    #[arg(long, requires = "report")]
    reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistQuery {
    Cdf,
    Quantile,
    ApproxCdf,
    AbsmaxMedian,
}

#[derive(Debug, Args)]
struct DistArgs {
    #[arg(value_enum)]
    query: DistQuery,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    /// Point for cdf and approx-cdf.
    #[arg(long, allow_negative_numbers = true)]
    x: Option<f64>,
    /// Probability for quantile.
    #[arg(long)]
    p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportKind {
    Usage,
    Cdf,
    L1,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, value_enum)]
    report: ReportKind,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    /// Code files (usage and l1 reports); repeat to compare codes.
    #[arg(long)]
    code: Vec<PathBuf>,
    /// Number of sampled blocks.
    #[arg(long, default_value_t = 1 << 16)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit with status 3 when any estimate is more than 4 standard errors
    /// from its analytic value.
    #[arg(long)]
    assert: bool,
}

#[derive(Debug, Subcommand)]
enum McCommand {
    /// Draw normalized blocks X = Z / max|Z|.
    Sample(McSampleArgs),
}

#[derive(Debug, Args)]
struct McSampleArgs {
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    /// Number of blocks.
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write an n × B FQT1 tensor instead of printing.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failure of one invocation, classified for the exit status.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(quantlab::Error),
    /// `--assert` found estimates outside their tolerance.
    Assertion(String),
}

impl From<quantlab::Error> for CliError {
    fn from(e: quantlab::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            },
            CliError::Assertion(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Assertion(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let mut out = String::new();
    let result = commands::run(cli, &mut out);
    // A closed pipe on stdout is not an error for a filter-style tool.
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
