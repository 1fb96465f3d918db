//! `idearefine`: run, resume and inspect refinement trajectories, and run
//! the offline preference study.
//!
//! Exit codes: 0 success, 1 I/O or storage, 2 config or input, 3 backend,
//! 4 unusable model output or loop failure, 5 unknown run id.

mod config;
mod evalcmd;
mod exit;
mod idea_file;
mod runs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::exit::{CliResult, Code};

#[derive(Debug, Parser)]
#[command(name = "idearefine", version, about = "Iterative idea-to-image refinement")]
struct Cli {
    /// Log verbosity (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start a run and drive it to completion.
    Run(RunArgs),
    /// Continue a stored run from its last persisted step.
    Resume(ResumeArgs),
    /// Print a per-iteration summary of a stored run.
    Inspect(InspectArgs),
    /// Shuffled preference study.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    idea: PathBuf,
    /// Store root; runs land in <out>/runs/<run-id>.
    #[arg(long, default_value = "idearefine-out")]
    out: PathBuf,
    /// Fixed base seed, overriding the config's seed policy.
    #[arg(long)]
    seed: Option<u64>,
    /// LMM backend id, overriding run.lmm_backend.
    #[arg(long)]
    lmm: Option<String>,
    /// Generator id, overriding run.generator_backend.
    #[arg(long)]
    generator: Option<String>,
    /// Candidates per iteration (N).
    #[arg(long)]
    candidates: Option<u32>,
    /// Iterations (T).
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long, hide = true)]
    halt_after_steps: Option<u32>,
}

#[derive(Debug, Args)]
struct ResumeArgs {
    #[arg(long, default_value = "idearefine-out")]
    out: PathBuf,
    #[arg(long)]
    run_id: String,
    /// Backends to use instead of the copy saved with the run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, hide = true)]
    halt_after_steps: Option<u32>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long, default_value = "idearefine-out")]
    out: PathBuf,
    #[arg(long)]
    run_id: String,
    /// Print the manifest itself.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Resolve the study's images and write shuffled ballots.
    Prepare {
        /// Study file (TOML, one [[idea]] table per idea).
        #[arg(long)]
        study: PathBuf,
        /// Study directory to create.
        #[arg(long)]
        dir: PathBuf,
        /// Store root holding the runs the study refers to.
        #[arg(long, default_value = "idearefine-out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        raters: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replace an existing ballots file, discarding its votes.
        #[arg(long)]
        force: bool,
    },
    /// Record a vote by idea id and displayed position.
    Vote {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        idea: String,
        /// Rater id; defaults to the idea's first unvoted ballot.
        #[arg(long)]
        rater: Option<String>,
        /// Displayed position of the preferred image (1-3). Asked
        /// interactively when neither this nor --abstain is given.
        #[arg(long, conflicts_with = "abstain")]
        position: Option<usize>,
        #[arg(long)]
        abstain: bool,
    },
    /// Print the preference table.
    Tally {
        /// Study directory containing ballots.jsonl.
        #[arg(long, required_unless_present = "ballots", conflicts_with = "ballots")]
        dir: Option<PathBuf>,
        /// A ballots file anywhere.
        #[arg(long)]
        ballots: Option<PathBuf>,
    },
    /// Write report.md and report.html with the images.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "idearefine-out")]
        out: PathBuf,
        /// Report directory.
        #[arg(long)]
        to: PathBuf,
    },
}

fn init_logging(verbose: u8) {
    use tracing_subscriber::EnvFilter;
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Run(a) => {
            let overrides = runs::Overrides {
                seed: a.seed,
                lmm: a.lmm,
                generator: a.generator,
                n_candidates: a.candidates,
                max_iterations: a.iterations,
            };
            runs::run(&a.config, &a.idea, &a.out, &overrides, a.halt_after_steps)
        }
        Command::Resume(a) => runs::resume(&a.out, &a.run_id, a.config.as_deref(), a.halt_after_steps),
        Command::Inspect(a) => runs::inspect(&a.out, &a.run_id, a.json),
        Command::Eval(EvalCommand::Prepare {
            study,
            dir,
            out,
            raters,
            seed,
            force,
        }) => evalcmd::prepare(&study, &dir, &out, raters, seed, force),
        Command::Eval(EvalCommand::Vote {
            dir,
            idea,
            rater,
            position,
            abstain,
        }) => {
            let pick = if abstain {
                Some(evalcmd::Pick::Abstain)
            } else {
                position.map(evalcmd::Pick::Position)
            };
            evalcmd::vote(&dir, &idea, rater.as_deref(), pick, &mut std::io::stdin().lock())
        }
        Command::Eval(EvalCommand::Tally { dir, ballots }) => {
            let path = ballots.unwrap_or_else(|| dir.expect("clap requires one").join(evalcmd::BALLOTS_FILE));
            evalcmd::tally_file(&path)
        }
        Command::Eval(EvalCommand::Report { dir, out, to }) => evalcmd::report(&dir, &out, &to),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Code::Config.into()
            } else {
                Code::Ok.into()
            };
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli.command) {
        Ok(()) => Code::Ok.into(),
        Err(e) => {
            eprintln!("error: {e}");
            e.code.into()
        }
    }
}
