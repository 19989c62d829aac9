//! Command-line front end: experiments from TOML configs, metric CSV/JSON,
//! plot data and the verification suites.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 training
//! divergence, 3 property violation. Each command prints one JSON document
//! on stdout; progress and diagnostics go to stderr.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use biblab::objectives::{TermA, TermB, TermC, TermD};
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{BindingFlags, Ctx};
pub use config::RunConfig;
pub use error::{CliError, CliResult, EXIT_DIVERGENCE, EXIT_OK, EXIT_PROPERTY, EXIT_USAGE};

/// Caps the worker threads used by seed sweeps.
pub const THREADS_ENV: &str = "BIBLAB_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "biblab", version, about = "Information-bottleneck autoencoder laboratory")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// File format of the plot data written to the output directory.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured objective and write checkpoint, metrics and manifest.
    Train,
    /// Estimate the four terms of the objective on held-out data.
    Decompose(DecomposeArgs),
    /// Sweep codebook sizes and report rate and distortion.
    RdCurve,
    /// Score held-out points against shifted outliers.
    Novelty(CheckpointArg),
    /// Compare autodiff gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Check the exact identities on random or given discrete worlds.
    OracleSuite(OracleArgs),
}

fn parse_name<T: std::str::FromStr<Err = biblab::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: biblab::Error| e.to_string())
}

#[derive(Debug, Args)]
struct CheckpointArg {
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_name::<TermA>)]
    term_a: Option<TermA>,
    #[arg(long, value_parser = parse_name::<TermB>)]
    term_b: Option<TermB>,
    #[arg(long, value_parser = parse_name::<TermC>)]
    term_c: Option<TermC>,
    #[arg(long, value_parser = parse_name::<TermD>)]
    term_d: Option<TermD>,
    /// Held-out rows to evaluate on; defaults to `decompose.n_eval`.
    #[arg(long)]
    n_eval: Option<usize>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    configs: usize,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 1000)]
    count: u64,
    /// Check a single world table instead of random ones.
    #[arg(long, value_name = "PATH")]
    world: Option<PathBuf>,
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let mut ctx = Ctx {
        stdout,
        stderr,
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        format: cli.format,
    };
    match cli.command {
        Command::Train => commands::train_cmd(&mut ctx),
        Command::Decompose(a) => commands::decompose_cmd(
            &mut ctx,
            a.checkpoint.as_deref(),
            BindingFlags {
                term_a: a.term_a,
                term_b: a.term_b,
                term_c: a.term_c,
                term_d: a.term_d,
            },
            a.n_eval,
        ),
        Command::RdCurve => commands::rd_cmd(&mut ctx),
        Command::Novelty(a) => commands::novelty_cmd(&mut ctx, a.checkpoint.as_deref()),
        Command::Gradcheck(a) => commands::gradcheck_cmd(&mut ctx, a.configs),
        Command::OracleSuite(a) => commands::oracle_suite_cmd(&mut ctx, a.count, a.world.as_deref()),
    }
}

/// Runs one invocation (`args` includes the program name) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
