use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "lcmkit", version, about = "Train latent convolutional models and restore images with them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a directory of PNGs and write a dataset manifest.
    PrepareData(PrepareArgs),
    /// Write a seeded synthetic PNG dataset and its manifest.
    SynthData(SynthArgs),
    /// Train a generator jointly with per-image latents.
    Train(TrainArgs),
    /// Degrade images and restore them with a trained generator.
    Restore(RestoreArgs),
    /// Score restored images against ground truth.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Train every variant on one dataset and tabulate the comparison.
    Compare(CompareArgs),
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML run configuration; flags override its keys.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Root directory for run outputs.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Process images one at a time. Results do not depend on it.
    #[arg(long)]
    pub deterministic: bool,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
pub struct PrepareArgs {
    #[arg(long, value_name = "DIR")]
    pub src: PathBuf,
    /// Manifest file to write.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Target shape as C,H,W.
    #[arg(long, default_value = "3,128,128")]
    pub shape: String,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Gaussian blobs per image; 0 draws gradient-and-disc shapes instead.
    #[arg(long, default_value_t = 0)]
    pub blobs: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// lcm, glo-map or glo-vec:<d>.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_latent: Option<f64>,
    #[arg(long)]
    pub lr_generator: Option<f64>,
    #[arg(long)]
    pub lr_glo: Option<f64>,
    #[arg(long)]
    pub pyramid_levels: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args)]
pub struct RestoreArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Clean PNG, or a directory of them.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// inpaint, sr or color.
    #[arg(long)]
    pub task: Option<String>,
    /// center:<side>, half:<side> or random:<fraction missing>.
    #[arg(long)]
    pub mask: Option<String>,
    #[arg(long)]
    pub factor: Option<usize>,
    /// manifold, zspace or glo.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub pyramid_term: Option<bool>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "DIR")]
    pub restored: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub truth: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "tiny16")]
    pub preset: String,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4096)]
    pub max_coords: usize,
    /// Deliberately corrupt the analytic gradients: `sign-flip`.
    #[arg(long)]
    pub inject_fault: Option<String>,
}

#[derive(Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated variants.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    #[arg(long)]
    pub restore_images: Option<usize>,
    #[arg(long)]
    pub restore_steps: Option<usize>,
    #[arg(long)]
    pub mask: Option<String>,
}

/// 1 for bad inputs or a failed check, 2 for NaN or divergence.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<lcm::LcmError>())
        .any(|e| e.is_numerical());
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PrepareData(a) => commands::prepare_data(&a),
        Command::SynthData(a) => commands::synth_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Restore(a) => commands::restore(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Compare(a) => commands::compare(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
