//! Command-line surface for the mvmos pipeline. The binary is a thin
//! wrapper over [`run`], which integration tests call directly.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvmos_core::projection::Profile;

pub use config::{FlagOverrides, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] mvmos_core::Error),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Check(_) => EXIT_CHECK,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mvmos", version, about = "LiDAR moving object segmentation from fused range and BEV residuals")]
pub struct Cli {
    /// JSON file of flat config keys; flags win over file values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<ProfileArg>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write P5 images of inputs and predictions.
    #[arg(long, global = true)]
    pub dump_images: bool,
    /// Zero-fill history for sequences shorter than the window.
    #[arg(long, global = true)]
    pub zero_pad: bool,
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    Desk,
    Kitti,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Kitti => Profile::Kitti,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence in the KITTI layout.
    Synth(SynthArgs),
    /// Predict per-point moving/static labels for a sequence.
    Infer(InferArgs),
    /// Score prediction labels against ground truth; prints JSON.
    Eval(EvalArgs),
    /// Write the residual stack of one frame.
    Residual(ResidualArgs),
    /// Run the embedded property suite.
    Selfcheck(SelfcheckArgs),
    /// Write a seeded random weights file.
    InitWeights(InitWeightsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec (JSON). Without one, a random scene is drawn from the seed.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Sequence directory holding velodyne/ and poses.txt.
    #[arg(long)]
    pub sequence: Option<PathBuf>,
    /// Weights file; seeded random weights when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted `.label` files.
    pub pred_dir: PathBuf,
    /// Ground-truth labels, or a sequence directory with a labels/ folder.
    pub gt_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ResidualArgs {
    #[arg(long)]
    pub sequence: Option<PathBuf>,
    /// Frame index; defaults to the last frame.
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    /// Run only checks whose name contains this text.
    #[arg(long)]
    pub only: Option<String>,
    #[arg(long, hide = true, value_enum)]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    FlipScan,
}

#[derive(Debug, Args)]
pub struct InitWeightsArgs {
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match commands::dispatch(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
