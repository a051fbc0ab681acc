use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semlink::experiment::{replay, run_experiment, RunOptions, MANIFEST_FILE, RESULTS_FILE};

/// MIMO-OFDM link experiments.
#[derive(Debug, Parser)]
#[command(version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// linear_region, papr_sweep or error_spectrum.
    #[arg(long, value_name = "NAME")]
    scenario: Option<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// 1 runs sequentially; 0 uses all cores.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, value_name = "U64", conflicts_with = "no_shuffle")]
    shuffle_seed: Option<u64>,
    #[arg(long)]
    no_shuffle: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Regenerate a run from its manifest and check the CSV hash.
    Replay {
        manifest: PathBuf,
        /// Also write the regenerated CSV here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> semlink::Result<()> {
    match cli.command {
        Some(Command::Replay { manifest, out }) => {
            let csv = replay(&manifest, out.as_deref())?;
            println!("replay ok: {} bytes match {}", csv.len(), manifest.display());
        }
        None => {
            let args = cli.run;
            let text = match &args.config {
                Some(path) => fs::read_to_string(path)?,
                None => String::new(),
            };
            let options = RunOptions {
                scenario: args.scenario,
                seed: args.seed,
                workers: args.workers,
                shuffle_seed: args.shuffle_seed,
                no_shuffle: args.no_shuffle,
            };
            let m = run_experiment(&text, &options, &args.out)?;
            println!(
                "{}: {} rows over {} trials -> {} and {}",
                m.scenario,
                m.results_rows,
                m.trials,
                args.out.join(RESULTS_FILE).display(),
                args.out.join(MANIFEST_FILE).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
