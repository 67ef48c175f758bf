use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dyreg_core::cli;

#[derive(Parser)]
#[command(name = "dyreg", about = "Dynamic salient region graph networks on synthetic video")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Worker threads; 1 guarantees bit-reproducible runs.
    /// Defaults to DYREG_THREADS or the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, log and resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Dot-path config overrides, e.g. --set model.nodes=4
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint on fixed-seed samples.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
    },
    /// Render one sample with region overlays as PPM frames.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Materialize a dataset shard.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Print parameter counts and tensor shapes for a config.
    Inspect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long = "set")]
        sets: Vec<String>,
    },
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("DYREG_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
    .max(1)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let threads = thread_count(args.threads);
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();

    let result = match args.command {
        Command::Train { config, out, seed, variant, resume, sets } => {
            cli::cmd_train(cli::TrainArgs {
                config: &config,
                out: &out,
                seed,
                variant,
                resume: resume.as_deref(),
                sets,
                threads: Some(threads),
            })
        }
        Command::Eval { ckpt, samples, trace, seed_base } => {
            cli::cmd_eval(&ckpt, samples, trace.as_deref(), seed_base, threads)
        }
        Command::Render { ckpt, seed, out } => cli::cmd_render(&ckpt, seed, &out),
        Command::Gen { config, n, out, seed_base, sets } => {
            cli::cmd_gen(&config, n, &out, seed_base, sets)
        }
        Command::Inspect { config, variant, sets } => cli::cmd_inspect(&config, variant, sets),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code_for(&err) as u8)
        }
    }
}
