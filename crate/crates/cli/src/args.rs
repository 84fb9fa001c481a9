use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const OUT_DIR_ENV: &str = "UNITRANS_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "unitrans", version, about = "Zero-resource cross-lingual NER with model transfer, data transfer and distillation")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align source embeddings to the target space from identical strings.
    Align(AlignArgs),
    /// Word-translate a labeled source corpus into the target language.
    Translate(TranslateArgs),
    /// Train a tagger from scratch on a labeled corpus.
    Train(TrainArgs),
    /// Continue training a tagger on another labeled corpus.
    Finetune(FinetuneArgs),
    /// Distill teachers into a student on unlabeled target text.
    Distill(DistillArgs),
    /// Tag a corpus with one model or an ensemble.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Write a synthetic bilingual benchmark.
    Synth(SynthArgs),
    /// Run pipeline variants over several seeds and report mean F1.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set encoder.hidden_dim=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (default `paths.out_dir`, else `out`).
    #[arg(long, env = OUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub source_vectors: Option<PathBuf>,
    #[arg(long)]
    pub target_vectors: Option<PathBuf>,
    /// Keep at most this many words of each embedding file.
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// Use at most this many seed pairs.
    #[arg(long)]
    pub max_pairs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Mapping written by `align`.
    #[arg(long)]
    pub mapping: PathBuf,
    /// Labeled source corpus (CoNLL).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub source_vectors: Option<PathBuf>,
    #[arg(long)]
    pub target_vectors: Option<PathBuf>,
    /// CSLS neighbourhood size.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    /// Embeddings of the corpus language.
    #[arg(long)]
    pub vectors: PathBuf,
    /// Mapping into the shared space, for source-language text.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// Labeled training corpus (CoNLL).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Configuration section holding the training settings.
    #[arg(long, default_value = "train")]
    pub section: String,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// Model to start from.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "finetune")]
    pub section: String,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Unlabeled target-language text (one token per line).
    #[arg(long)]
    pub unlabeled: PathBuf,
    /// Target-language embeddings.
    #[arg(long)]
    pub vectors: PathBuf,
    /// Teacher model; repeat for an ensemble.
    #[arg(long = "teacher", required = true)]
    pub teachers: Vec<PathBuf>,
    /// Source-model voter; repeat for an ensemble.
    #[arg(long = "source-model")]
    pub source_models: Vec<PathBuf>,
    /// Translated-data voter; repeat for an ensemble.
    #[arg(long = "translated-model")]
    pub translated_models: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// Model file; repeat for an ensemble.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Text to tag; only the first column is read.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub predicted: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Variant to run (repeatable), or `all`.
    #[arg(long = "variant")]
    pub variants: Vec<String>,
    /// Seeds: `3`, `1,2,7` or `1..5`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Ensemble size of the base models.
    #[arg(long)]
    pub ensemble: Option<usize>,
}
