//! `substate`: build Substate profiles from value traces and evaluate them
//! for test suite reduction.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "substate", version, about = "Substate profiling and greedy test suite reduction")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse every trace and print per-test event and channel counts.
    Validate {
        #[arg(long)]
        trace_dir: PathBuf,
    },
    /// Write the fourteen features of every (channel, test) pair.
    Features {
        #[arg(long)]
        trace_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        retention: RetentionArgs,
    },
    /// Cluster channels and write one Substate matrix per k.
    Profile(ProfileArgs),
    /// Run greedy reduction on a matrix and report rd%/df%.
    Reduce(ReduceArgs),
    /// Full sweep: structural and Substate profiles, single-failure mode,
    /// combined profiles and verdicts.
    Experiment(ExperimentArgs),
    /// Concatenate matrices over the same tests.
    Combine {
        /// `NAME=PATH`, in column order.
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        keep_universal: bool,
    },
}

#[derive(Debug, Args)]
struct RetentionArgs {
    /// Leading values kept per channel for the retained-data features.
    #[arg(long, default_value_t = 2000)]
    v_lead: usize,
    /// Trailing values kept per channel.
    #[arg(long, default_value_t = 2000)]
    v_trail: usize,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[arg(long)]
    trace_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Cluster count: `2` (fixed) or `0.5%` (of the tests reaching a
    /// channel). Repeatable; defaults to the configured k sweep.
    #[arg(long = "k")]
    k: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    keep_universal: bool,
    #[command(flatten)]
    retention: RetentionArgs,
}

#[derive(Debug, Args)]
struct ReduceArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    /// Also run the single-failure-per-defect protocol.
    #[arg(long)]
    single_failure: bool,
    #[arg(long)]
    rq2_keep_others: bool,
    #[arg(long)]
    keep_universal: bool,
    /// Write every replication's selection as JSON lines to this file.
    #[arg(long)]
    log_selections: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    trace_dir: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sweep configuration file (`key: value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable shorthand for `--k-specs`.
    #[arg(long = "k")]
    k: Vec<String>,
    #[arg(long)]
    k_specs: Option<String>,
    /// `NAME=PATH,...`
    #[arg(long)]
    structural_inputs: Option<String>,
    #[arg(long)]
    include_all: Option<String>,
    /// `NAME+K,...`
    #[arg(long)]
    combinations: Option<String>,
    #[arg(long)]
    replications: Option<String>,
    #[arg(long)]
    rq2: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    rq2_keep_others: bool,
    #[arg(long)]
    keep_universal: bool,
    #[arg(long)]
    log_selections: Option<PathBuf>,
    #[command(flatten)]
    retention: RetentionArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Validate { trace_dir } => commands::validate(&trace_dir),
        Command::Features { trace_dir, out, retention } => commands::features(&trace_dir, &out, &retention),
        Command::Profile(args) => commands::profile(&args),
        Command::Reduce(args) => commands::reduce(&args),
        Command::Experiment(args) => commands::experiment(&args),
        Command::Combine {
            inputs,
            out,
            keep_universal,
        } => commands::combine(&inputs, &out, keep_universal),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invariant = e
                .chain()
                .filter_map(|c| c.downcast_ref::<substate_core::Error>())
                .any(|c| !c.is_input_error());
            ExitCode::from(if invariant { 2 } else { 1 })
        }
    }
}
