//! `tokshap`: seeded, manifest-tracked attribution runs from the shell.
//!
//! Every command that writes files also writes a run manifest alongside
//! them (`<output>.manifest.json`) and embeds the manifest's content hash
//! into each output, so `tokshap verify` can later prove which run
//! produced a file. Worker count never changes results, only wall time.
//!
//! Exit codes: 0 success, 1 error, 2 partial success (some instances
//! skipped). Log verbosity comes from `RUST_LOG`.

mod classifiers;
mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "tokshap",
    version,
    about = "Shapley-value attributions for token classifiers"
)]
struct Cli {
    /// Worker threads for parallel sections; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset plus its ground-truth classifier.
    Gen(commands::gen::GenArgs),
    /// Attribute every instance of a dataset with one method.
    Explain(commands::explain::ExplainArgs),
    /// Build reference attributions for surrogate training.
    Refs(commands::refs::RefsArgs),
    /// Train the amortized surrogate on reference attributions.
    Train(commands::train::TrainArgs),
    /// Cross-seed stability sweep over one or more methods.
    Stability(commands::stability::StabilityArgs),
    /// Top-α masking faithfulness curve for an attribution file.
    Faithfulness(commands::faithfulness::FaithfulnessArgs),
    /// Per-instance latency and evaluation counts per method.
    Bench(commands::bench::BenchArgs),
    /// Re-check digests, embedded hashes, and seeds of a past run.
    Verify(commands::verify::VerifyArgs),
    /// Host a built-in classifier over stdio or TCP.
    Serve(commands::serve::ServeArgs),
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    if cli.workers > 0 {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
        {
            eprintln!("error: configuring {} workers: {err}", cli.workers);
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Gen(args) => commands::gen::run(args),
        Command::Explain(args) => commands::explain::run(args),
        Command::Refs(args) => commands::refs::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Stability(args) => commands::stability::run(args),
        Command::Faithfulness(args) => commands::faithfulness::run(args),
        Command::Bench(args) => commands::bench::run(args),
        Command::Verify(args) => commands::verify::run(args),
        Command::Serve(args) => commands::serve::run(args),
    }
}
