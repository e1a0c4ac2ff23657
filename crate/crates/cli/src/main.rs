//! `pdn`: corrupt, train, denoise and evaluate from the command line.

mod commands;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdn_core::config::RunConfig;

use crate::commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "pdn", version, about = "Poisson image denoising with a two-branch convolutional autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scale a clean image to the peak and write Poisson counts.
    Corrupt { input: PathBuf, output: PathBuf },
    /// Build a patch dataset from a corpus of clean images and train a network.
    Train,
    /// Denoise a count image with trained weights.
    Denoise { input: PathBuf, output: PathBuf },
    /// Per-image PSNR of the network against the VST + blur baseline.
    Evaluate,
    /// Evaluate at strides 1, 2, 4, 8, 16 and 32 with per-image timing.
    SweepStride,
    /// Evaluate at peaks 1, 2, 4, 8 and 16, one weights file per peak.
    SweepPeak,
    /// Gradient, adjoint, transform and statistics checks.
    Selftest {
        /// Include the full default network at 16x16 (about a minute).
        #[arg(long)]
        full: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Corrupt { .. } => "corrupt",
            Command::Train => "train",
            Command::Denoise { .. } => "denoise",
            Command::Evaluate => "evaluate",
            Command::SweepStride => "sweep-stride",
            Command::SweepPeak => "sweep-peak",
            Command::Selftest { .. } => "selftest",
        }
    }
}

/// Settings shared by every subcommand; they override the config file and
/// the environment.
#[derive(Args, Debug, Default)]
struct Flags {
    /// key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    peak: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 makes training bit-reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Patch stride for reconstruction.
    #[arg(long, global = true)]
    stride: Option<usize>,
    #[arg(long, global = true)]
    patch_size: Option<usize>,
    /// Reconstruction weight sigma (default patch_size / 4).
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    patches_per_image: Option<usize>,
    #[arg(long, global = true)]
    train_fraction: Option<f64>,
    /// Directory of clean PGM/PNG images.
    #[arg(long, global = true)]
    corpus_dir: Option<PathBuf>,
    /// Weights file; sweep-peak expects a template containing `{peak}`.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// CSV report path (stdout when omitted).
    #[arg(long, global = true)]
    report: Option<PathBuf>,
}

impl Flags {
    fn apply(self, c: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(peak, seed, stride, patch_size, epochs, batch_size, learning_rate, patches_per_image, train_fraction);
        if self.sigma.is_some() {
            c.sigma = self.sigma;
        }
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        for (dst, src) in [
            (&mut c.corpus_dir, self.corpus_dir),
            (&mut c.weights, self.weights),
            (&mut c.output_dir, self.output_dir),
            (&mut c.report, self.report),
        ] {
            if src.is_some() {
                *dst = src;
            }
        }
    }
}

fn resolve(cli: Cli) -> Result<(Command, RunConfig), CliError> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.flags.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        config
            .apply_text(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    config
        .apply_env(|k| std::env::var(k).ok())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    cli.flags.apply(&mut config);
    config.command = cli.command.name().to_string();
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((cli.command, config))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (command, config) = resolve(cli)?;
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    match command {
        Command::Corrupt { input, output } => commands::corrupt(&config, &input, &output),
        Command::Train => commands::train(&config),
        Command::Denoise { input, output } => commands::denoise(&config, &input, &output),
        Command::Evaluate => commands::evaluate(&config),
        Command::SweepStride => commands::sweep_stride(&config),
        Command::SweepPeak => commands::sweep_peak(&config),
        Command::Selftest { full } => selftest::run(full),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
