use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use kvfunnel::commands::{
    self, cmd_allocate, cmd_analyze, cmd_bench, cmd_run, cmd_sweep, CmdError, Context,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Parser)]
#[command(
    name = "kvfunnel",
    version,
    about = "KV-cache compression testbed: budget schedules, eviction policies, and divergence benchmarks on a deterministic toy transformer"
)]
struct Cli {
    /// Run spec file (required by every subcommand).
    #[arg(long, global = true, value_name = "PATH")]
    spec: Option<PathBuf>,

    /// Output directory for result files (allocate prints to stdout unless set).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for grid commands; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    workers: usize,

    /// Output format for result files.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the per-layer budget schedule as CSV.
    Allocate,
    /// Run the spec'd policy once and emit its divergence report.
    Run,
    /// Run the policy x budget x seed grid and emit one row per cell.
    Bench,
    /// Prefill the prompt and emit per-layer attention statistics.
    Analyze,
    /// Explore pyramid shapes over the budget x beta x alpha x seed grid.
    Sweep,
}

fn dispatch(cli: Cli) -> Result<(), CmdError> {
    let spec = commands::load_spec(cli.spec.as_deref())?;
    let ctx = Context {
        spec,
        out_dir: cli.out,
        workers: cli.workers,
        format: match cli.format {
            FormatArg::Csv => commands::OutputFormat::Csv,
            FormatArg::Json => commands::OutputFormat::Json,
        },
    };
    match cli.command {
        Command::Allocate => cmd_allocate(&ctx),
        Command::Run => cmd_run(&ctx),
        Command::Bench => cmd_bench(&ctx),
        Command::Analyze => cmd_analyze(&ctx),
        Command::Sweep => cmd_sweep(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{err}");
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CmdError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
