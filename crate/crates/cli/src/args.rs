use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "varigrad", version, about = "Varifold-gradient features for curves and shape graphs")]
pub struct Cli {
    /// Worker threads for featurization and kernel sums.
    #[arg(long, global = true, env = "VARIGRAD_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset and split it into train/test JSONL files.
    Gen(GenArgs),
    /// Compare the analytic distance gradient with finite differences on random pairs.
    Gradcheck(GradcheckArgs),
    /// Train a classifier or autoencoder.
    Train(TrainArgs),
    /// Evaluate a trained model on a dataset, optionally reparameterized.
    Eval(EvalArgs),
    /// Reconstruct many reparameterizations of one shape and measure the output spread.
    Invariance(InvarianceArgs),
    /// Write template gradient-field features for every shape of a dataset.
    Featurize(FeaturizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Curve,
    Stickfigure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Classifier,
    Autoencoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderArg {
    Varigrad,
    Pointnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Identity,
    PermuteFlip,
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "curve")]
    pub kind: Kind,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub vmin: usize,
    #[arg(long, default_value_t = 96)]
    pub vmax: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Number of random shape pairs.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 10)]
    pub vmin: usize,
    #[arg(long, default_value_t = 40)]
    pub vmax: usize,
    #[arg(long, default_value_t = 0.2)]
    pub sigma_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TemplateArgs {
    /// Template shape file. Overrides --template-index.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Position of the template in a seeded shuffle of the training shapes.
    #[arg(long, default_value_t = 0)]
    pub template_index: usize,
    #[arg(long, default_value_t = 0.2)]
    pub sigma_ratio: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value = "varigrad")]
    pub encoder: EncoderArg,
    /// Training set (JSON Lines).
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out set evaluated after every epoch.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub template: TemplateArgs,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Graph-convolution channel widths.
    #[arg(long, value_delimiter = ',', default_value = "16,32")]
    pub channels: Vec<usize>,
    /// Neighbourhood-mean pooling after the convolutions (halves the channels).
    #[arg(long)]
    pub pool: bool,
    #[arg(long, default_value_t = 64)]
    pub latent: usize,
    /// Seeds weight initialization, template choice and batch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate on this many reparameterized variants of every shape instead.
    #[arg(long)]
    pub reparam_per_shape: Option<usize>,
    #[arg(long, value_enum, default_value = "full")]
    pub reparam_kind: VariantArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InvarianceArgs {
    /// Autoencoder model directories; repeat to compare encoders.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    /// Dataset holding the source shape.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "full")]
    pub kind: VariantArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Template shape file (defaults to the first shape of --data).
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub sigma_ratio: f64,
    #[arg(long)]
    pub out: PathBuf,
}
