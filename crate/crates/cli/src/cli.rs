use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "fairsim", version, about = "Debias text-to-image retrieval at the representation level")]
pub struct Cli {
    /// JSON run configuration; explicit flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Validate an embeddings file plus metadata and write a store directory.
    Ingest(IngestArgs),
    /// Generate a synthetic store with planted attribute directions.
    Synth(SynthArgs),
    /// Learn an attribute prototype query.
    Apl(AplArgs),
    /// Train a re-representation matrix for one bias attribute.
    TrainRrm(TrainRrmArgs),
    /// Rank store rows against one query embedding.
    Retrieve(RetrieveArgs),
    /// Compute an evaluation report.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run a comparison method.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Check an analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Summarize bias and retrieval reports as CSV scatter data.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Side {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EncoderKind {
    Toy,
    Bypass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    All,
    Positives,
}

#[derive(Args)]
pub struct StoreArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Rows to use; each command has its own default.
    #[arg(long, value_enum)]
    pub split: Option<Side>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

/// Where bias-word queries come from. Defaults to `queries.jsonl` in the store.
#[derive(Args)]
pub struct QueryArgs {
    /// JSONL file of `{"word", "embedding"}` objects.
    #[arg(long, conflicts_with = "template_from_encoder")]
    pub bias_words: Option<PathBuf>,
    /// Encode "a photo of a {word} person" for each of `--words`.
    #[arg(long, value_enum)]
    pub template_from_encoder: Option<EncoderKind>,
    #[arg(long, value_delimiter = ',')]
    pub words: Option<Vec<String>>,
    /// Vocabulary JSON; defaults to `vocab.json` in the store.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub bias_strength: Option<f64>,
    #[arg(long)]
    pub text_noise: Option<f64>,
    #[arg(long)]
    pub bias_positive_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AplArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub attribute: String,
    /// -1 learns the attribute's negative pole.
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    pub polarity: i8,
    /// Suffix words; defaults to the attribute name.
    #[arg(long, value_delimiter = ',')]
    pub words: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub encoder_seed: Option<u64>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub prefix_len: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Rows per step; full batch when absent.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainRrmArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long, default_value = "gender")]
    pub bias_attr: String,
    /// Positive-pole and negative-pole prototype files.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub bias_protos: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub target_protos: Vec<PathBuf>,
    #[command(flatten)]
    pub queries: QueryArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_pairs: Option<usize>,
    #[arg(long)]
    pub early_stop_k: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub tfl_scope: Option<Scope>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RrmArgs {
    /// Re-representation matrix applied to the images.
    #[arg(long)]
    pub rrm: Option<PathBuf>,
    /// CLIP-clip mask applied to images and queries.
    #[arg(long, conflicts_with = "rrm")]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value = "gender")]
    pub bias_attr: String,
}

#[derive(Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Raw little-endian f32 vector.
    #[arg(long)]
    pub query_embedding: PathBuf,
    #[command(flatten)]
    pub transform: RrmArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Bias@k of every bias word.
    Bias(EvalBiasArgs),
    /// Text-to-image recall@k over the store's captions.
    Recall(EvalRecallArgs),
    /// TAS and BFD along the TAS ascent direction.
    TasBfd(EvalTasBfdArgs),
    /// Top-two principal component projection.
    Pca(EvalPcaArgs),
    /// Zero-shot probability gap between groups for two antonyms.
    Zeroshot(EvalZeroshotArgs),
}

#[derive(Args)]
pub struct EvalBiasArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[command(flatten)]
    pub queries: QueryArgs,
    #[command(flatten)]
    pub transform: RrmArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalRecallArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Caption JSONL of `{"row", "embedding"}`; defaults to `texts.jsonl` in the store.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    #[command(flatten)]
    pub transform: RrmArgs,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalTasBfdArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long, default_value = "gender")]
    pub bias_attr: String,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub bias_protos: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub target_protos: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub epsilons: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalPcaArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long, default_value = "gender")]
    pub attr: String,
    #[arg(long)]
    pub rrm: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalZeroshotArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long, default_value = "gender")]
    pub attr: String,
    /// The two antonyms, e.g. `happy,sad`.
    #[arg(long, value_delimiter = ',')]
    pub words: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "toy")]
    pub encoder: EncoderKind,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub rrm: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
pub enum BaselineCommand {
    /// Rank dimensions by mutual information with the bias label and drop the top `m`.
    ClipClip(ClipClipArgs),
    /// Extract an attribute direction from cross-group differences.
    Bsce(BsceArgs),
}

#[derive(Args)]
pub struct ClipClipArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long, default_value = "gender")]
    pub bias_attr: String,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BsceArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub attr: String,
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    pub polarity: i8,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// apl, apl-bypass, bcl, tfl or rrm.
    #[arg(long)]
    pub loss: String,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = fairsim_core::gradcheck::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = fairsim_core::gradcheck::DEFAULT_TOLERANCE)]
    pub tol: f64,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// `BIAS_JSON,RECALL_JSON` of the unmodified embeddings.
    #[arg(long)]
    pub vanilla: String,
    /// `LABEL=BIAS_JSON,RECALL_JSON`, once per method or parameter setting.
    #[arg(long, required = true)]
    pub point: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}
