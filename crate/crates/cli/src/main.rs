mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lfrt_core::lightfield::io::ViewFormat;

/// Low-light light-field restoration toolkit.
#[derive(Debug, Parser)]
#[command(name = "lfrt", version)]
struct Cli {
    /// Print progress to stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit noise parameters from gray-chart and dark-frame manifests.
    Calibrate(CalibrateArgs),
    /// Darken and noise a ground-truth light field.
    Synthesize(SynthesizeArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Restore a low-light light field with a checkpoint.
    Restore(RestoreArgs),
    /// Score a checkpoint on paired light fields.
    Eval(EvalArgs),
    /// Print multiply-accumulate counts of the attention blocks.
    Complexity(ComplexityArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Png,
    Pfm,
}

impl From<Format> for ViewFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Png => ViewFormat::Png,
            Format::Pfm => ViewFormat::Pfm,
        }
    }
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Gray-chart manifest (one per ISO).
    #[arg(long = "gray", required = true)]
    gray: Vec<PathBuf>,
    /// Dark-frame manifest (one per ISO).
    #[arg(long = "dark", required = true)]
    dark: Vec<PathBuf>,
    /// Quantization step in DN.
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Seed stored in the emitted synthesis config.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    /// Ground-truth light-field container.
    #[arg(long)]
    gt: PathBuf,
    /// Synthesis config JSON (defaults when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` applied onto the config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Pfm)]
    format: Format,
    /// Output pair directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training config JSON (defaults when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset used when no config file is given.
    #[arg(long, value_parser = ["default", "toy"])]
    preset: Option<String>,
    /// Ground-truth light-field containers.
    #[arg(long = "scene")]
    scenes: Vec<PathBuf>,
    /// Also train on this many procedural scenes.
    #[arg(long, default_value_t = 0)]
    synthetic: usize,
    /// Spatial size of procedural scenes.
    #[arg(long, default_value_t = 64)]
    scene_size: usize,
    /// Angular size of procedural scenes.
    #[arg(long, default_value_t = 3)]
    scene_views: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory for the log and checkpoints.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RestoreArgs {
    /// Low-light light-field container.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Output light-field container.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Pfm)]
    format: Format,
    /// Write illum.pfm, hf.pfm, epi.pfm and alpha.txt here.
    #[arg(long, value_name = "DIR")]
    dump_intermediates: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSON list of `{name, gt, low?}` or `{name, pair}` entries.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Synthesis config for entries without a low-light input.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Also write every restored light field under this directory.
    #[arg(long)]
    restored: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ComplexityArgs {
    /// `c=..,h=..,w=..` of a spatial block.
    #[arg(long)]
    spatial: Option<String>,
    /// `u=..,v=..,c=..,h=..,w=..[,p=..][,m=..]` of an angular block.
    #[arg(long)]
    angular: Option<String>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Restrict to these tiers.
    #[arg(long, value_parser = ["primitive", "loss", "block", "head", "model"])]
    tier: Vec<String>,
    /// Restrict to cases whose name contains this text.
    #[arg(long)]
    name: Option<String>,
}

/// A gradient check that ran but did not meet its tolerance.
#[derive(Debug)]
struct GradientMismatch(usize);

impl std::fmt::Display for GradientMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} gradient check(s) failed", self.0)
    }
}

impl std::error::Error for GradientMismatch {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|e| {
        matches!(e.downcast_ref::<lfrt_core::Error>(), Some(lfrt_core::Error::NumericFault(_)))
            || e.downcast_ref::<GradientMismatch>().is_some()
    });
    if numeric {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Calibrate(a) => commands::calibrate(a, cli.verbose),
        Command::Synthesize(a) => commands::synthesize(a, cli.verbose),
        Command::Train(a) => commands::train(a, cli.verbose),
        Command::Restore(a) => commands::restore(a, cli.verbose),
        Command::Eval(a) => commands::eval(a, cli.verbose),
        Command::Complexity(a) => commands::complexity(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
