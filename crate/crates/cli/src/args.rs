use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wings_core::{AttackTarget, BitPolicy};

#[derive(Debug, Parser)]
#[command(
    name = "wings",
    version,
    about = "PCA + SVR weight compression with sensitivity analysis and bit-flip testing",
    after_help = "Exit codes: 0 success, 1 contract violation, 2 format error, 64 usage error."
)]
pub struct Cli {
    /// key=value file supplying defaults for any long flag; flags given on
    /// the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Also write the JSON summary to this file.
    #[arg(long, global = true, value_name = "FILE")]
    pub summary: Option<PathBuf>,

    /// Master seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network with minibatch SGD and save it as WNGS.
    Train(TrainArgs),
    /// Score each weighted layer by its mean gradient norm.
    Sensitivity(SensitivityArgs),
    /// Compress a WNGS model into a WNGC artifact.
    Compress(CompressArgs),
    /// Evaluate a WNGC artifact, regenerating weights from it.
    Infer(InferArgs),
    /// Bit-flip campaign against a model and its artifact.
    Attack(AttackArgs),
    /// Weight memory, access energy and ECC cost for a parameter count.
    Estimate(EstimateArgs),
    /// Inventory, cost estimates and attack-complexity proxy of an artifact.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Gaussian class blobs (`--dim` features).
    Synth,
    /// Stroke-pattern images (`--side` x `--side`).
    SynthImages,
    /// MNIST IDX files from `--data-dir`.
    Mnist,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Dataset to use.
    #[arg(long, value_enum, default_value_t = DataSource::Synth)]
    pub data: DataSource,

    /// Directory holding un-gzipped MNIST files.
    #[arg(long, env = "WINGS_DATA_DIR", value_name = "DIR")]
    pub data_dir: Option<PathBuf>,

    /// Training samples (the first ones of the training split).
    #[arg(long, default_value_t = 2000)]
    pub n_train: usize,

    /// Held-out samples used for evaluation.
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,

    /// Feature count of synthetic blobs.
    #[arg(long, default_value_t = 784)]
    pub dim: usize,

    /// Number of classes of synthetic data.
    #[arg(long, default_value_t = 10)]
    pub classes: usize,

    /// Distance between synthetic class means, in noise units.
    #[arg(long, default_value_t = 8.0)]
    pub separation: f32,

    /// Side length of synthetic images.
    #[arg(long, default_value_t = 28)]
    pub side: usize,

    /// Pixel noise of synthetic images.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f32,

    /// Seed of the synthetic data generator.
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Layer tokens joined by '-': convN, pool, denseN. The last dense layer
    /// gets softmax.
    #[arg(long, default_value = "dense256-dense128-dense10")]
    pub arch: String,

    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 10)]
    pub epochs: usize,

    /// Learning rate.
    #[arg(long, default_value_t = 0.1)]
    pub lr: f32,

    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,

    /// L2 penalty on weights.
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f32,

    /// Output model (WNGS).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SensitivityArgs {
    /// Model to score (WNGS).
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Gradient batches averaged per score.
    #[arg(long, default_value_t = 8)]
    pub batches: usize,

    /// Samples per gradient batch.
    #[arg(long, default_value_t = 64)]
    pub sens_batch_size: usize,

    /// Loss multiplier; scores scale linearly with it.
    #[arg(long, default_value_t = 1.0)]
    pub loss_scale: f32,

    /// Selection threshold; defaults to the median candidate score.
    #[arg(long)]
    pub tau: Option<f64>,

    /// Only conv layers are selection candidates.
    #[arg(long)]
    pub conv_only: bool,

    /// Write the score report as JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Cross-layer prediction for all-dense networks.
    Fcn,
    /// Sensitivity-aware intra-layer compression.
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gamma {
    /// 1 / input dimension.
    InverseDim,
    /// 1 / (input dimension x input variance).
    Scaled,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompressArgs {
    /// Model to compress (WNGS).
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    #[arg(long, value_enum)]
    pub mode: Mode,

    /// Variance retention target; 0.9 for fcn, 0.95 for cnn by default.
    #[arg(long)]
    pub eta: Option<f64>,

    /// Output artifact (WNGC).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// cnn: conv layers scoring below this are compressed; defaults to
    /// the median conv score.
    #[arg(long)]
    pub tau: Option<f64>,

    /// cnn: fraction of the retained components stored verbatim.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,

    /// cnn: dense layers smaller than this stay raw.
    #[arg(long, default_value_t = 1024)]
    pub min_dense_weights: usize,

    /// fcn: keep the first layer verbatim instead of PCA-reduced.
    #[arg(long)]
    pub first_layer_raw: bool,

    /// fcn: keep the last layer verbatim.
    #[arg(long)]
    pub keep_last_raw: bool,

    /// fcn: keep predicted layers even when they are larger than raw.
    #[arg(long)]
    pub no_raw_fallback: bool,

    /// SVR box constraint.
    #[arg(long, default_value_t = 10.0)]
    pub svr_c: f32,

    /// SVR tube width as a fraction of each target's standard deviation.
    #[arg(long, default_value_t = 0.01)]
    pub svr_epsilon: f32,

    /// RBF width rule.
    #[arg(long, value_enum, default_value_t = Gamma::InverseDim)]
    pub gamma: Gamma,

    /// cnn: data the sensitivity scores are computed on.
    #[command(flatten)]
    pub data: DataArgs,

    /// cnn: gradient batches per sensitivity score.
    #[arg(long, default_value_t = 8)]
    pub batches: usize,

    /// cnn: samples per sensitivity batch.
    #[arg(long, default_value_t = 64)]
    pub sens_batch_size: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    /// Artifact to run (WNGC).
    #[arg(long, value_name = "FILE")]
    pub artifact: PathBuf,

    /// Original model, to report per-layer reconstruction residuals.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Evaluation data; the held-out part is used.
    #[command(flatten)]
    pub data: DataArgs,

    /// Samples per forward pass.
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,

    /// Regenerate the weights for every batch instead of once.
    #[arg(long)]
    pub no_cache: bool,

    /// Write `index,label,predicted` rows as CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn parse_target(s: &str) -> Result<AttackTarget, String> {
    AttackTarget::parse(s).ok_or_else(|| {
        let names: Vec<&str> = AttackTarget::ALL.iter().map(|t| t.name()).collect();
        format!("unknown target '{s}', expected one of {}", names.join(", "))
    })
}

fn parse_policy(s: &str) -> Result<BitPolicy, String> {
    BitPolicy::parse(s)
        .ok_or_else(|| format!("unknown bit policy '{s}', expected uniform, exponent or sign"))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttackArgs {
    /// Uncompressed model (WNGS); its raw weights are the baseline target.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    /// Compressed artifact (WNGC).
    #[arg(long, value_name = "FILE")]
    pub artifact: PathBuf,

    /// Evaluation data; the held-out part is used.
    #[command(flatten)]
    pub data: DataArgs,

    /// Comma-separated, strictly increasing flip counts.
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
    pub budgets: Vec<usize>,

    /// Trials per budget.
    #[arg(long, default_value_t = 30)]
    pub trials: usize,

    /// Artifact stores to corrupt: raw-weights, first-layer, pca-basis,
    /// pca-mean, svr-dual-coefs, svr-support-vectors or all-compressed.
    #[arg(long, value_parser = parse_target, default_value = "all-compressed")]
    pub target: AttackTarget,

    /// Eligible bits of each f32: uniform, exponent or sign.
    #[arg(long, value_parser = parse_policy, default_value = "exponent")]
    pub policy: BitPolicy,

    /// Size of the fixed evaluation subset.
    #[arg(long, default_value_t = 2000)]
    pub eval_size: usize,

    /// Per-trial CSV output.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    /// Parameter count.
    #[arg(long)]
    pub params: u64,

    /// Bits per weight.
    #[arg(long, default_value_t = 32)]
    pub bits: u32,

    /// DDR3 access energy, pJ per bit.
    #[arg(long, default_value_t = 70.0)]
    pub ddr3_pj: f64,

    /// On-chip SRAM access energy, pJ per bit.
    #[arg(long, default_value_t = 0.16)]
    pub sram_pj: f64,

    /// Also report costs with this fraction of the weights compressed away.
    #[arg(long)]
    pub compression_fraction: Option<f64>,

    /// Write the estimate as JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Artifact to describe (WNGC).
    #[arg(long, value_name = "FILE")]
    pub artifact: PathBuf,

    /// Original model, for reconstruction residuals.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// ECC storage overhead per protected bit.
    #[arg(long, default_value_t = 0.18)]
    pub ecc_rate: f64,

    /// Write the report as JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
