use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fta::index::{IndexModality, IndexViews, ViewRole};
use fta::training::{SamplingMode, TrainMode};

/// Multi-view, multimodal alignment experiments on synthetic catalogs.
///
/// Reports go to stdout as JSON; progress goes to stderr.
/// Exit codes: 0 ok, 1 io or data format, 2 flags or config, 3 evaluation
/// precondition, 4 property check failed.
#[derive(Debug, Parser)]
#[command(name = "fta", version)]
pub struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic catalog and interaction log.
    GenData(GenDataArgs),
    /// Train image and text encoders with rolling-sampling contrastive loss.
    Train(TrainArgs),
    /// Embed a catalog into an index file.
    Index(IndexArgs),
    /// Print the nearest listings for queries.
    Search(SearchArgs),
    /// Retrieval evaluation harnesses.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Check that exact transport never costs more than the factorized coupling.
    OtCheck(OtCheckArgs),
    /// Time training steps across view counts.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON config: a data config object, or an object with a "data" section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for listings.jsonl and interactions.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "FTX_SEED")]
    pub seed: Option<u64>,
    /// Number of listings.
    #[arg(long)]
    pub listings: Option<usize>,
    /// Image views per listing.
    #[arg(long)]
    pub image_views: Option<usize>,
    /// Text views per listing.
    #[arg(long)]
    pub text_views: Option<usize>,
    /// Interactions per listing (fraction).
    #[arg(long)]
    pub interaction_rate: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Multiview,
    Singleview,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Multiview => TrainMode::Multiview,
            ModeArg::Singleview => TrainMode::Singleview,
        }
    }
}

impl From<ModeArg> for IndexViews {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Multiview => IndexViews::Multiview,
            ModeArg::Singleview => IndexViews::Singleview,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    Independent,
    RoundRobin,
}

impl From<SamplingArg> for SamplingMode {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::Independent => SamplingMode::Independent,
            SamplingArg::RoundRobin => SamplingMode::RoundRobin,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Model output path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config: a training config object, or an object with a "train" section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the large-scale schedule (batch 128, accumulation 4, lr 1e-5, 30 epochs).
    #[arg(long)]
    pub preset: bool,
    /// Primary-view weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Gradient accumulation steps per optimizer step.
    #[arg(long)]
    pub accum: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight decay.
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long, env = "FTX_SEED")]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingArg>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Width of a tanh hidden layer; omitted means a single affine layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Write per-step statistics as JSON lines here.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Multimodal,
    Text,
    Image,
}

impl From<ModalityArg> for IndexModality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Multimodal => IndexModality::Multimodal,
            ModalityArg::Text => IndexModality::TextOnly,
            ModalityArg::Image => IndexModality::ImageOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Index output path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "multimodal")]
    pub modality: ModalityArg,
    #[arg(long, value_enum, default_value = "multiview")]
    pub views: ModeArg,
    /// Primary-view weight used for fusion.
    #[arg(long, default_value_t = 0.6)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated raw query features.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub query: Option<String>,
    /// Dataset directory; its interactions are used as queries.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use at most this many interactions as queries.
    #[arg(long, requires = "data")]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Query-to-item recall@k over the interaction log.
    Q2i(Q2iArgs),
    /// Recall@k of retrieving one view of each listing from another.
    Crossview(CrossviewArgs),
}

#[derive(Debug, Args)]
pub struct Q2iArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Strictly ascending cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "10,100,500")]
    pub k: Vec<usize>,
    /// Add a per-category breakdown.
    #[arg(long)]
    pub by_category: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Title,
    PrimaryImage,
    NonprimaryImage,
    PseudoQuery,
}

impl From<RoleArg> for ViewRole {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Title => ViewRole::Title,
            RoleArg::PrimaryImage => ViewRole::PrimaryImage,
            RoleArg::NonprimaryImage => ViewRole::NonprimaryImage,
            RoleArg::PseudoQuery => ViewRole::PseudoQuery,
        }
    }
}

#[derive(Debug, Args)]
pub struct CrossviewArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "title")]
    pub source: RoleArg,
    #[arg(long, value_enum, default_value = "nonprimary-image")]
    pub target: RoleArg,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct OtCheckArgs {
    /// Largest number of image views; sizes are drawn from 1..=n.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Largest number of text views; sizes are drawn from 1..=m.
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    /// Embedding dimension of the random views.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, env = "FTX_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// View counts to compare (n = m).
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub views: Vec<usize>,
    /// Timed steps per round.
    #[arg(long, default_value_t = 2)]
    pub steps: usize,
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, env = "FTX_SEED", default_value_t = 0)]
    pub seed: u64,
}
