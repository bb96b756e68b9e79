//! `smf`: batch front end for supervised matrix factorization.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smf::{Optimizer, SmfError};

#[derive(Parser, Debug)]
#[command(name = "smf", version, about = "Supervised matrix factorization: data synthesis, training, prediction and benchmarks")]
struct Cli {
    /// Worker threads for cross-validation and benchmarks (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a dataset with known ground truth from a generative spec.
    Synth {
        /// Generative spec (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a model and record the optimization trace.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Solver configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "lpgd")]
        optimizer: Optimizer,
        /// Ground-truth manifest (`truth.json`) for distance tracking.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Standardize each feature row before training.
        #[arg(long)]
        normalize_rows: bool,
    },
    /// Classify a dataset with a trained model.
    Predict {
        #[arg(long)]
        data: PathBuf,
        /// Directory holding w.csv, h.csv, beta.csv and gamma.csv.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use supervised sparse coding instead of least-squares codes (SMF-H).
        #[arg(long)]
        full: bool,
        /// One feature name per line, used in the factor report.
        #[arg(long)]
        feature_names: Option<PathBuf>,
        #[arg(long)]
        normalize_rows: bool,
    },
    /// Report conditioning constants and the data spectrum.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Activation bound for the link constants; defaults to the largest
        /// activation at the reference, or at the initialization.
        #[arg(long)]
        m_bound: Option<f64>,
        #[arg(long)]
        normalize_rows: bool,
    },
    /// Cross-validate a grid of regularization parameters.
    Cv {
        #[arg(long)]
        data: PathBuf,
        /// Grid protocol (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "lpgd")]
        optimizer: Optimizer,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        normalize_rows: bool,
    },
    /// Loss-versus-iteration benchmark of LPGD against BCD.
    Benchmark {
        /// Benchmark protocol (JSON); defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// 2: configuration or schema, 3: I/O and unreadable data, 4: numerical failure.
fn exit_code(err: &SmfError) -> u8 {
    match err {
        SmfError::InvalidConfig { .. } | SmfError::Json(_) | SmfError::Shape(_) => 2,
        SmfError::Io(_) | SmfError::Parse(_) => 3,
        SmfError::RankDeficient { .. }
        | SmfError::NonFinite(_)
        | SmfError::Domain(_)
        | SmfError::Diverged { .. }
        | SmfError::NonConvergence { .. }
        | SmfError::Insufficient(_) => 4,
    }
}

fn run(cli: Cli) -> smf::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(SmfError::InvalidConfig {
                field: "threads",
                msg: "must be at least 1".into(),
            });
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match cli.command {
        Command::Synth { config, out, seed } => commands::synth(&config, &out, seed),
        Command::Train {
            data,
            config,
            out,
            optimizer,
            reference,
            seed,
            normalize_rows,
        } => commands::train(&commands::TrainArgs {
            data: &data,
            config: &config,
            out: &out,
            optimizer,
            reference: reference.as_deref(),
            seed,
            normalize_rows,
        }),
        Command::Predict {
            data,
            model,
            config,
            out,
            full,
            feature_names,
            normalize_rows,
        } => commands::predict(&data, &model, &config, &out, full, feature_names.as_deref(), normalize_rows),
        Command::Diagnose {
            data,
            config,
            out,
            reference,
            m_bound,
            normalize_rows,
        } => commands::diagnose(&data, &config, &out, reference.as_deref(), m_bound, normalize_rows),
        Command::Cv {
            data,
            config,
            out,
            optimizer,
            seed,
            normalize_rows,
        } => commands::cv(&data, &config, &out, optimizer, seed, normalize_rows),
        Command::Benchmark { config, out, seed } => commands::benchmark(config.as_deref(), &out, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
