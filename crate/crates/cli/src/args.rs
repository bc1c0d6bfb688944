use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvc_core::model::ModelKind;
use mvc_core::train::Component;

#[derive(Debug, Parser)]
#[command(
    name = "mvc",
    version,
    about = "Multi-view convolutional label-attention coders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub(crate) command: Command,
}

#[derive(Debug, Subcommand)]
pub(crate) enum Command {
    /// Generate a synthetic coded corpus with label files.
    Synth(SynthArgs),
    /// Pretrain CBOW word embeddings on a training split.
    Embed(EmbedArgs),
    /// Train an MVC-LDA or MVC-RLDA model.
    Train(TrainArgs),
    /// Score a checkpoint on a test split.
    Evaluate(EvaluateArgs),
    /// Hyperband search over kernel sizes, filters and lambda.
    Hyperband(HyperbandArgs),
    /// Retrain with components removed and report metric deltas.
    Ablate(AblateArgs),
    /// Train and score a tf-idf linear or label-prior baseline.
    Baseline(BaselineArgs),
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: mvc_core::Error| e.to_string())
}

fn parse_component(s: &str) -> Result<Component, String> {
    s.parse().map_err(|e: mvc_core::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub(crate) struct LabelArgs {
    /// Code descriptions as `code<TAB>description`; without it the codes of the
    /// training split are used (mvc-lda only).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Hierarchy edges as `child<TAB>parent`.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Group tags as `code<TAB>procedure|diagnosis|none`.
    #[arg(long)]
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub(crate) struct EmbedArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Embedding file; the vocabulary and manifest are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub(crate) struct TrainArgs {
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Pretrained embeddings from `mvc embed`; CBOW is run when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint path; history, vocabulary and manifest go beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub(crate) struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
    /// Vocabulary file; defaults to the one written beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Training split, for per-label train counts and frequency bins.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub metrics_out: PathBuf,
    /// Optional per-document scores as JSON lines.
    #[arg(long)]
    pub predictions_out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "8,5")]
    pub p_at: Vec<usize>,
    /// Macro F1 covers this many most frequent codes that have test support.
    #[arg(long, default_value_t = 50)]
    pub macro_top: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub(crate) struct HyperbandArgs {
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Maximum epochs per configuration.
    #[arg(long = "R", default_value_t = 27)]
    pub max_resource: usize,
    #[arg(long, default_value_t = 3)]
    pub eta: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub(crate) struct AblateArgs {
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Primary-note-only variants of the three splits, for `extra_notes`.
    #[arg(long)]
    pub train_reduced: Option<PathBuf>,
    #[arg(long)]
    pub dev_reduced: Option<PathBuf>,
    #[arg(long)]
    pub test_reduced: Option<PathBuf>,
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_component,
        default_value = "regularization,multi_view,length_embedding,extra_notes"
    )]
    pub components: Vec<Component>,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub p_at: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum BaselineChoice {
    Flat,
    Hierarchical,
    Prior,
}

#[derive(Debug, Args)]
pub(crate) struct BaselineArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
    /// Defaults to `hierarchical` when a hierarchy is given, else `flat`.
    #[arg(long, value_enum)]
    pub kind: Option<BaselineChoice>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub p_at: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}
