//! `pll`: partial-label learning experiments from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data validation, 3 verification
//! failure, 4 numerical failure. `PLL_LOG={error|info|debug}` controls
//! verbosity on stderr.

mod commands;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "pll",
    version,
    about = "Generate candidate-label datasets, train risk- and classifier-consistent models, \
             and verify the distributional identities behind them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt a supervised dataset into candidate label sets
    Generate(commands::generate::Args),
    /// Train on partial labels over one or more seeded trials
    Train(commands::train::Args),
    /// Run the exact distributional checks and print a pass/fail table
    Verify(commands::verify::Args),
    /// Entropy diagnostic of a generation transition matrix
    Entropy(commands::entropy::Args),
}

fn main() {
    // Die quietly when stdout closes early (`pll ... | head`), like any
    // other filter; Rust's default turns SIGPIPE into a panic.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PLL_LOG", "error")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let _ = e.print();
            std::process::exit(1);
        }
    };

    let outcome = match cli.command {
        Command::Generate(args) => commands::generate::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Verify(args) => commands::verify::run(args),
        Command::Entropy(args) => commands::entropy::run(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

/// Maps library errors onto the documented exit codes: numerical failures
/// are 4, configuration misuse is 1, and everything else (bad files, bad
/// labels, I/O) is data validation, 2.
fn exit_code(e: &pll_core::Error) -> i32 {
    if e.is_numerical() {
        4
    } else if matches!(e, pll_core::Error::Config(_)) {
        1
    } else {
        2
    }
}
