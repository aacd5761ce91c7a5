//! `skipwalk` command-line front end.

mod commands;
mod config;
mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CommonArgs, Command, ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "skipwalk", version, about = "Skipped points of near-critical (1,2) random walks")]
struct Cli {
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(Args)]
struct Flags {
    #[command(flatten)]
    common: CommonArgs,
    /// Print the resolved configuration as canonical JSON and exit.
    #[arg(long = "print-config")]
    print_config: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Continued-fraction tails U_n and f^(n).
    Tails(Flags),
    /// D limits, or the criterion series with --series.
    Dseries(Flags),
    /// Exact hitting and skip probabilities (--query).
    Exact(Flags),
    /// Monte Carlo skip frequencies (--k, --j) or growth tables (--levels).
    Simulate(Flags),
    /// Finite/infinite skipped-point verdicts.
    Classify(Flags),
    /// Runs the bound-verification suite.
    Verify(Flags),
    /// Replays a configuration written by --print-config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "print-config")]
        print_config: bool,
    },
}

fn resolve(sub: Sub) -> Result<(RunConfig, bool), ConfigError> {
    let (cmd, flags) = match sub {
        Sub::Tails(f) => (Command::Tails, f),
        Sub::Dseries(f) => (Command::Dseries, f),
        Sub::Exact(f) => (Command::Exact, f),
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Classify(f) => (Command::Classify, f),
        Sub::Verify(f) => (Command::Verify, f),
        Sub::Run { config, print_config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| ConfigError::new("--config", format!("cannot read `{}`: {e}", config.display())))?;
            let cfg = RunConfig::from_json(&text)?;
            cfg.validate()?;
            return Ok((cfg, print_config));
        }
    };
    Ok((flags.common.resolve(cmd)?, flags.print_config))
}

fn sink(cfg: &RunConfig) -> io::Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, print_config) = match resolve(cli.cmd) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(commands::EXIT_CONFIG as u8);
        }
    };
    if print_config {
        println!("{}", cfg.to_canonical_json());
        return ExitCode::SUCCESS;
    }
    let outcome = match commands::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(commands::exit_code(&e) as u8);
        }
    };
    let written = sink(&cfg).and_then(|mut w| {
        outcome.rendered.write(cfg.format, &mut w)?;
        w.flush()
    });
    if let Err(e) = written {
        eprintln!("error: writing output: {e}");
        return ExitCode::from(1);
    }
    if outcome.code != 0 {
        eprintln!("verification failed");
    }
    ExitCode::from(outcome.code as u8)
}
