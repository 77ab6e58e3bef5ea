use clap::{Parser, Subcommand};

use darwin_cli::commands::{
    cmd_analyze, cmd_check, cmd_run, cmd_serve_mock, AnalyzeArgs, CheckArgs, RunArgs,
    ServeMockArgs,
};

/// Reward-guided search over LLM decoding: instruction mutation for
/// exploration, beam replacement for exploitation.
#[derive(Parser)]
#[command(name = "darwin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search strategy over one or more prompts.
    Run(RunArgs),
    /// Compute beam-dynamics metrics over recorded traces.
    Analyze(AnalyzeArgs),
    /// Validate a config and ping the configured backends.
    Check(CheckArgs),
    /// Serve the deterministic mocks over the wire protocols.
    ServeMock(ServeMockArgs),
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Check(args) => cmd_check(&args),
        Command::ServeMock(args) => cmd_serve_mock(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
