//! `symrd` command-line driver.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use symrd::Task;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const VERIFY: u8 = 3;
    pub const IO: u8 = 4;
}

#[derive(Parser, Debug)]
#[command(name = "symrd", version, about = "Symmetric reinforcement distillation for constructive CO policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset file
    GenData {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        n: usize,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ffsp_stages: Option<usize>,
        #[arg(long)]
        ffsp_machines: Option<usize>,
        #[arg(long)]
        cvrp_capacity: Option<u32>,
    },
    /// Train a policy; trailing `--key value` pairs override config keys
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Save a checkpoint at every validation record
        #[arg(long)]
        checkpoints: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = symrd::eval::DEFAULT_L1_SAMPLES)]
        l1_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Budget position recorded with the metrics
        #[arg(long, default_value_t = 0)]
        k: u64,
        /// Also compute the optimality gap (oracle-sized instances only)
        #[arg(long)]
        optimality: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property suites
    Verify {
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replace the symmetric sampler with a broken one (negative control)
        #[arg(long, hide = true)]
        corrupt_transform: bool,
    },
    /// Train every config in a directory over several seeds and summarize
    Compare {
        #[arg(long)]
        config_dir: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData {
            task,
            n,
            count,
            seed,
            out,
            ffsp_stages,
            ffsp_machines,
            cvrp_capacity,
        } => commands::gen_data(
            task,
            n,
            count as usize,
            seed,
            &out,
            ffsp_stages,
            ffsp_machines,
            cvrp_capacity,
        ),
        Command::Train {
            config,
            out_dir,
            checkpoints,
            overrides,
        } => commands::train(config.as_deref(), &out_dir, checkpoints, &overrides),
        Command::Eval {
            checkpoint,
            data,
            l1_samples,
            seed,
            k,
            optimality,
            out,
        } => commands::eval(
            &checkpoint,
            &data,
            l1_samples,
            seed,
            k,
            optimality,
            out.as_deref(),
        ),
        Command::Verify {
            task,
            n,
            trials,
            seed,
            corrupt_transform,
        } => commands::verify(task, n, trials, seed, corrupt_transform),
        Command::Compare {
            config_dir,
            seeds,
            out,
        } => commands::compare(&config_dir, &seeds, &out),
    };
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
